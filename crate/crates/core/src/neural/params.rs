//! Flat parameter storage with a named tensor layout.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Character embedding and contextual vector size; even.
    pub d_emb: usize,
    /// Stacked bidirectional GRU layers.
    pub layers: usize,
    /// Hidden units of the operation-scoring head.
    pub head_hidden: usize,
}

impl ModelConfig {
    pub fn new(d_emb: usize, layers: usize) -> Self {
        ModelConfig {
            d_emb,
            layers,
            head_hidden: d_emb,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_emb == 0 || !self.d_emb.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "embedding size must be even and positive, got {}",
                self.d_emb
            )));
        }
        if self.layers == 0 || self.head_hidden == 0 {
            return Err(Error::Config("layers and head size must be at least 1".into()));
        }
        Ok(())
    }

    /// Hidden units per GRU direction.
    pub fn hidden(&self) -> usize {
        self.d_emb / 2
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::new(256, 2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of one GRU direction. Gate rows are ordered reset, update,
/// candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruOffsets {
    pub input: usize,
    pub hidden: usize,
    /// `[3h x input]`
    pub wx: usize,
    /// `[3h x h]`
    pub wh: usize,
    pub bx: usize,
    pub bh: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub config: ModelConfig,
    pub vocab: usize,
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
    pub embed: usize,
    /// Per layer, forward then backward direction.
    pub gru: Vec<[GruOffsets; 2]>,
    pub boundary: usize,
    /// `[H x d]`, applied to the source-side vector.
    pub head_src: usize,
    /// `[H x d]`, applied to the target-side vector.
    pub head_tgt: usize,
    /// `[H x d]`, applied to the elementwise product of both vectors.
    pub head_prod: usize,
    /// `[H x 2]`, columns for "source at boundary" and "target at boundary".
    pub head_flags: usize,
    pub head_bias: usize,
    /// `[4 x H]`, rows delete, insert, substitute, reject.
    pub out_w: usize,
    pub out_b: usize,
    pub gain: usize,
    pub bias: usize,
}

pub const ENCODER_PREFIX: &str = "encoder.";

impl Layout {
    pub fn new(config: ModelConfig, vocab: usize) -> Self {
        let mut tensors = Vec::new();
        let mut total = 0usize;
        let mut add = |name: String, shape: Vec<usize>| {
            let info = TensorInfo {
                name,
                shape,
                offset: total,
            };
            total += info.len();
            let off = info.offset;
            tensors.push(info);
            off
        };
        let d = config.d_emb;
        let h = config.hidden();
        let hh = config.head_hidden;
        let embed = add("encoder.embedding".into(), vec![vocab, d]);
        let mut gru = Vec::with_capacity(config.layers);
        for layer in 0..config.layers {
            let input = d;
            let mut dirs = [GruOffsets {
                input,
                hidden: h,
                wx: 0,
                wh: 0,
                bx: 0,
                bh: 0,
            }; 2];
            for (k, dir) in ["fwd", "bwd"].iter().enumerate() {
                let p = format!("encoder.gru{layer}.{dir}");
                dirs[k].wx = add(format!("{p}.w_input"), vec![3 * h, input]);
                dirs[k].wh = add(format!("{p}.w_hidden"), vec![3 * h, h]);
                dirs[k].bx = add(format!("{p}.b_input"), vec![3 * h]);
                dirs[k].bh = add(format!("{p}.b_hidden"), vec![3 * h]);
            }
            gru.push(dirs);
        }
        let boundary = add("scorer.boundary".into(), vec![d]);
        let head_src = add("scorer.w_source".into(), vec![hh, d]);
        let head_tgt = add("scorer.w_target".into(), vec![hh, d]);
        let head_prod = add("scorer.w_product".into(), vec![hh, d]);
        let head_flags = add("scorer.w_flags".into(), vec![hh, 2]);
        let head_bias = add("scorer.b_hidden".into(), vec![hh]);
        let out_w = add("scorer.w_out".into(), vec![4, hh]);
        let out_b = add("scorer.b_out".into(), vec![4]);
        let gain = add("match.gain".into(), vec![1]);
        let bias = add("match.bias".into(), vec![1]);
        Layout {
            config,
            vocab,
            tensors,
            total,
            embed,
            gru,
            boundary,
            head_src,
            head_tgt,
            head_prod,
            head_flags,
            head_bias,
            out_w,
            out_b,
            gain,
            bias,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Draws initial values: embeddings and feed-forward weights uniform in
    /// [-0.1, 0.1], GRU weights uniform in +-1/sqrt(h), biases zero, gain 1.
    pub fn initialize(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut values = vec![0.0; self.total];
        let gru_scale = 1.0 / (self.config.hidden() as f64).sqrt();
        for t in &self.tensors {
            let scale = if t.name.contains(".w_input") || t.name.contains(".w_hidden") {
                gru_scale
            } else if t.name.ends_with("embedding")
                || t.name == "scorer.boundary"
                || (t.name.starts_with("scorer.w_"))
            {
                0.1
            } else {
                continue;
            };
            for v in &mut values[t.range()] {
                *v = rng.gen_range(-scale..=scale);
            }
        }
        values[self.gain] = 1.0;
        values
    }
}
