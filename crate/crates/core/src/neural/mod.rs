//! Neural edit distance.
//!
//! A shared character-level bidirectional GRU encodes both strings. For
//! every lattice cell a feed-forward head reads the source-side vector, the
//! target-side vector and their elementwise product (a learned boundary
//! vector stands in on row 0 and column 0) and emits four logits: delete, insert, substitute and reject.
//! The softmax over all four gives the move probabilities; reject mass
//! leaves the lattice, so the total path mass measures how plausible the
//! pair is. Moves that are undefined at a boundary cell also leave the
//! lattice. The match probability is `sigmoid(g * loglik / (m + n) + c)`.

mod gru;
pub mod io;
mod linalg;
pub mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{forward_backward, log_likelihood, CostGrid, EditOp};
use crate::strings::{Alphabet, Token};

use linalg::{add_outer, matvec, matvec_t_add, sigmoid, softplus};
pub use params::{Layout, ModelConfig, TensorInfo, ENCODER_PREFIX};

/// Index of the reject logit; 0..3 follow [`EditOp::index`].
pub const REJECT: usize = 3;
/// Upper clamp on `exp(loglik / (m + n))` inside the non-match loss.
pub const NONMATCH_CLAMP: f64 = 1.0 - 1e-6;
const EXAMPLES_PER_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralEditModel {
    alphabet: Alphabet,
    layout: Layout,
    params: Vec<f64>,
    threshold: f64,
}

/// Likelihood-derived scores of one string pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub loglik: f64,
    /// `loglik / (m + n)`
    pub norm_ll: f64,
    /// `g * norm_ll + c`, the pre-sigmoid match score.
    pub logit: f64,
    pub p_match: f64,
}

/// A labelled training or evaluation pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub source: Token,
    pub target: Token,
    pub is_match: bool,
}

impl Example {
    pub fn new(source: Token, target: Token, is_match: bool) -> Self {
        Example {
            source,
            target,
            is_match,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub em_loss: f64,
    pub bce_loss: f64,
    pub nonmatch_nll: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn from_parts(em_loss: f64, bce_loss: f64, nonmatch_nll: f64) -> Self {
        LossBreakdown {
            em_loss,
            bce_loss,
            nonmatch_nll,
            total: em_loss + bce_loss + nonmatch_nll,
        }
    }
}

/// Multipliers on each loss component when forming gradients. The
/// training objective uses all ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub em: f64,
    pub bce: f64,
    pub nonmatch: f64,
}

impl LossWeights {
    pub const ALL: LossWeights = LossWeights {
        em: 1.0,
        bce: 1.0,
        nonmatch: 1.0,
    };
    pub const EM: LossWeights = LossWeights {
        em: 1.0,
        bce: 0.0,
        nonmatch: 0.0,
    };
    pub const BCE: LossWeights = LossWeights {
        em: 0.0,
        bce: 1.0,
        nonmatch: 0.0,
    };
    pub const NONMATCH: LossWeights = LossWeights {
        em: 0.0,
        bce: 0.0,
        nonmatch: 1.0,
    };
}

/// Encoded token with its scorer projections, reusable across many pairs.
#[derive(Debug, Clone)]
pub struct PreparedToken {
    len: usize,
    /// `(len + 1) x d`: boundary vector, then the contextual vectors.
    vecs: Vec<f64>,
    /// `(len + 1) x H`: row 0 is the boundary, includes hidden bias and
    /// the source-boundary flag.
    as_source: Vec<f64>,
    /// `(len + 1) x H`: row 0 includes the target-boundary flag.
    as_target: Vec<f64>,
}

struct ScorerTrace {
    /// `cells x H` hidden activations.
    hidden: Vec<f64>,
    /// `cells x 4` softmax probabilities.
    probs: Vec<[f64; 4]>,
}

struct PairTrace {
    src: gru::EncoderTrace,
    tgt: gru::EncoderTrace,
    src_vecs: Vec<Vec<f64>>,
    tgt_vecs: Vec<Vec<f64>>,
    scorer: ScorerTrace,
    grid: CostGrid,
}

impl NeuralEditModel {
    pub fn new(alphabet: Alphabet, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config, alphabet.len());
        let params = layout.initialize(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(NeuralEditModel {
            alphabet,
            layout,
            params,
            threshold: 0.5,
        })
    }

    pub(crate) fn from_parts(alphabet: Alphabet, layout: Layout, params: Vec<f64>, threshold: f64) -> Self {
        NeuralEditModel {
            alphabet,
            layout,
            params,
            threshold,
        }
    }

    pub fn config(&self) -> ModelConfig {
        self.layout.config
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Calibrated match threshold.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, tau: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Config(format!("threshold {tau} outside [0, 1]")));
        }
        self.threshold = tau;
        Ok(())
    }

    pub fn gain(&self) -> f64 {
        self.params[self.layout.gain]
    }

    pub fn bias(&self) -> f64 {
        self.params[self.layout.bias]
    }

    /// Freezes the scorer to emit `logits` (delete, insert, substitute,
    /// reject) at every cell regardless of the encodings.
    pub fn set_constant_scorer(&mut self, logits: [f64; 4]) {
        let hh = self.layout.config.head_hidden;
        let w = self.layout.out_w;
        self.params[w..w + 4 * hh].fill(0.0);
        let b = self.layout.out_b;
        self.params[b..b + 4].copy_from_slice(&logits);
    }

    /// Contextual vectors, one per character.
    pub fn encode(&self, token: &Token) -> Vec<Vec<f64>> {
        gru::encode(&self.layout, &self.params, &self.alphabet.encode(token)).outputs
    }

    fn side_vectors(&self, outputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let d = self.layout.config.d_emb;
        let b = self.layout.boundary;
        std::iter::once(self.params[b..b + d].to_vec())
            .chain(outputs.iter().cloned())
            .collect()
    }

    fn project(&self, vecs: &[Vec<f64>], weight: usize, flag_col: usize, with_bias: bool) -> Vec<f64> {
        let d = self.layout.config.d_emb;
        let hh = self.layout.config.head_hidden;
        let w = &self.params[weight..weight + hh * d];
        let flags = &self.params[self.layout.head_flags..self.layout.head_flags + 2 * hh];
        let bias = &self.params[self.layout.head_bias..self.layout.head_bias + hh];
        let mut out = vec![0.0; vecs.len() * hh];
        for (row, v) in vecs.iter().enumerate() {
            let dst = &mut out[row * hh..(row + 1) * hh];
            matvec(w, hh, d, v, dst);
            if with_bias {
                for (o, b) in dst.iter_mut().zip(bias) {
                    *o += b;
                }
            }
            if row == 0 {
                for (u, o) in dst.iter_mut().enumerate() {
                    *o += flags[u * 2 + flag_col];
                }
            }
        }
        out
    }

    pub fn prepare(&self, token: &Token) -> PreparedToken {
        self.prepare_vectors(&self.side_vectors(&self.encode(token)))
    }

    fn prepare_vectors(&self, vecs: &[Vec<f64>]) -> PreparedToken {
        PreparedToken {
            len: vecs.len() - 1,
            vecs: vecs.concat(),
            as_source: self.project(vecs, self.layout.head_src, 0, true),
            as_target: self.project(vecs, self.layout.head_tgt, 1, false),
        }
    }

    /// Cell scores from the two projections; returns the grid and, when
    /// `keep` is set, the activations needed for backpropagation.
    fn scorer_forward(&self, sp: &PreparedToken, tp: &PreparedToken, keep: bool) -> (CostGrid, Option<ScorerTrace>, Vec<f64>) {
        let (m, n) = (sp.len, tp.len);
        let (src, tgt) = (&sp.as_source, &tp.as_target);
        let d = self.layout.config.d_emb;
        let hh = self.layout.config.head_hidden;
        let wp = &self.params[self.layout.head_prod..self.layout.head_prod + hh * d];
        let mut prod = vec![0.0; d];
        let wo = &self.params[self.layout.out_w..self.layout.out_w + 4 * hh];
        let bo = &self.params[self.layout.out_b..self.layout.out_b + 4];
        let cells = (m + 1) * (n + 1);
        let mut grid = CostGrid::new(m, n);
        let mut reject = vec![f64::NEG_INFINITY; cells];
        let mut hidden = if keep { vec![0.0; cells * hh] } else { Vec::new() };
        let mut probs = if keep { vec![[0.0; 4]; cells] } else { Vec::new() };
        let mut z = vec![0.0; hh];
        for i in 0..=m {
            let a = &src[i * hh..(i + 1) * hh];
            let x = &sp.vecs[i * d..(i + 1) * d];
            for j in 0..=n {
                if i == 0 && j == 0 {
                    continue;
                }
                let b = &tgt[j * hh..(j + 1) * hh];
                let y = &tp.vecs[j * d..(j + 1) * d];
                for k in 0..d {
                    prod[k] = x[k] * y[k];
                }
                matvec(wp, hh, d, &prod, &mut z);
                for u in 0..hh {
                    z[u] = (z[u] + a[u] + b[u]).tanh();
                }
                let mut logits = [0.0; 4];
                for (k, l) in logits.iter_mut().enumerate() {
                    *l = linalg::dot(&wo[k * hh..(k + 1) * hh], &z) + bo[k];
                }
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                let log_z = max + sum.ln();
                let c = i * (n + 1) + j;
                for op in EditOp::ALL {
                    grid.set(op, i, j, logits[op.index()] - log_z);
                }
                reject[c] = logits[REJECT] - log_z;
                if keep {
                    hidden[c * hh..(c + 1) * hh].copy_from_slice(&z);
                    probs[c] = logits.map(|l| (l - log_z).exp());
                }
            }
        }
        let trace = keep.then_some(ScorerTrace { hidden, probs });
        (grid, trace, reject)
    }

    pub fn score_grid(&self, a: &Token, b: &Token) -> CostGrid {
        self.score_grid_with_reject(a, b).0
    }

    /// The grid plus the per-cell reject log-probability; for every cell
    /// except the start, defined moves, undefined moves and reject sum to 1.
    pub fn score_grid_with_reject(&self, a: &Token, b: &Token) -> (CostGrid, Vec<f64>) {
        let pa = self.prepare(a);
        let pb = self.prepare(b);
        let (grid, _, reject) = self.scorer_forward(&pa, &pb, false);
        (grid, reject)
    }

    fn finish_score(&self, loglik: f64, m: usize, n: usize) -> PairScore {
        let norm_ll = loglik / (m + n) as f64;
        let logit = self.gain() * norm_ll + self.bias();
        PairScore {
            loglik,
            norm_ll,
            logit,
            p_match: sigmoid(logit),
        }
    }

    pub fn score_prepared(&self, a: &PreparedToken, b: &PreparedToken) -> Result<PairScore> {
        let (grid, _, _) = self.scorer_forward(a, b, false);
        let ll = log_likelihood(&grid)?;
        Ok(self.finish_score(ll, a.len, b.len))
    }

    pub fn pair_score(&self, a: &Token, b: &Token) -> Result<PairScore> {
        self.score_prepared(&self.prepare(a), &self.prepare(b))
    }

    /// Whether the pair clears the calibrated threshold.
    pub fn is_match(&self, a: &Token, b: &Token) -> Result<bool> {
        Ok(self.pair_score(a, b)?.p_match >= self.threshold)
    }

    fn trace_pair(&self, a: &Token, b: &Token) -> PairTrace {
        let src = gru::encode(&self.layout, &self.params, &self.alphabet.encode(a));
        let tgt = gru::encode(&self.layout, &self.params, &self.alphabet.encode(b));
        let src_vecs = self.side_vectors(&src.outputs);
        let tgt_vecs = self.side_vectors(&tgt.outputs);
        let ps = self.prepare_vectors(&src_vecs);
        let pt = self.prepare_vectors(&tgt_vecs);
        let (grid, scorer, _) = self.scorer_forward(&ps, &pt, true);
        PairTrace {
            src,
            tgt,
            src_vecs,
            tgt_vecs,
            scorer: scorer.expect("trace requested"),
            grid,
        }
    }

    /// Backpropagates gradients w.r.t. grid log-probabilities (`[cell][op]`)
    /// into `grads`.
    fn backprop_pair(&self, trace: &PairTrace, d_grid: &[[f64; 3]], grads: &mut [f64]) {
        let l = &self.layout;
        let d = l.config.d_emb;
        let hh = l.config.head_hidden;
        let (m, n) = (trace.grid.source_len(), trace.grid.target_len());
        let wo = &self.params[l.out_w..l.out_w + 4 * hh];
        let mut d_src_proj = vec![0.0; (m + 1) * hh];
        let mut d_tgt_proj = vec![0.0; (n + 1) * hh];
        let mut d_wo = vec![0.0; 4 * hh];
        let mut d_bo = [0.0; 4];
        let mut dz = vec![0.0; hh];
        let mut dpre = vec![0.0; hh];
        let mut d_prod = vec![0.0; d];
        let mut prod = vec![0.0; d];
        let mut d_wp = vec![0.0; hh * d];
        let wp = &self.params[l.head_prod..l.head_prod + hh * d];
        let mut d_src_vecs = vec![vec![0.0; d]; m + 1];
        let mut d_tgt_vecs = vec![vec![0.0; d]; n + 1];
        for i in 0..=m {
            for j in 0..=n {
                let c = i * (n + 1) + j;
                let g = d_grid[c];
                if g == [0.0; 3] {
                    continue;
                }
                let p = trace.scorer.probs[c];
                let gsum: f64 = g.iter().sum();
                let dlogit = [
                    g[0] - p[0] * gsum,
                    g[1] - p[1] * gsum,
                    g[2] - p[2] * gsum,
                    -p[3] * gsum,
                ];
                let z = &trace.scorer.hidden[c * hh..(c + 1) * hh];
                add_outer(&mut d_wo, &dlogit, z);
                for k in 0..4 {
                    d_bo[k] += dlogit[k];
                }
                dz.fill(0.0);
                matvec_t_add(wo, 4, hh, &dlogit, &mut dz);
                for u in 0..hh {
                    dpre[u] = dz[u] * (1.0 - z[u] * z[u]);
                    d_src_proj[i * hh + u] += dpre[u];
                    d_tgt_proj[j * hh + u] += dpre[u];
                }
                let (x, y) = (&trace.src_vecs[i], &trace.tgt_vecs[j]);
                for k in 0..d {
                    prod[k] = x[k] * y[k];
                }
                add_outer(&mut d_wp, &dpre, &prod);
                d_prod.fill(0.0);
                matvec_t_add(wp, hh, d, &dpre, &mut d_prod);
                for k in 0..d {
                    d_src_vecs[i][k] += d_prod[k] * y[k];
                    d_tgt_vecs[j][k] += d_prod[k] * x[k];
                }
            }
        }
        for (gv, v) in grads[l.head_prod..l.head_prod + hh * d].iter_mut().zip(&d_wp) {
            *gv += v;
        }
        for (gv, v) in grads[l.out_w..l.out_w + 4 * hh].iter_mut().zip(&d_wo) {
            *gv += v;
        }
        for k in 0..4 {
            grads[l.out_b + k] += d_bo[k];
        }

        for (rows, vecs, dvecs, weight, flag_col, with_bias) in [
            (&d_src_proj, &trace.src_vecs, &mut d_src_vecs, l.head_src, 0, true),
            (&d_tgt_proj, &trace.tgt_vecs, &mut d_tgt_vecs, l.head_tgt, 1, false),
        ] {
            for (row, (v, dv)) in vecs.iter().zip(dvecs.iter_mut()).enumerate() {
                let dp = &rows[row * hh..(row + 1) * hh];
                add_outer(&mut grads[weight..weight + hh * d], dp, v);
                matvec_t_add(&self.params[weight..weight + hh * d], hh, d, dp, dv);
                if with_bias {
                    for (gv, x) in grads[l.head_bias..l.head_bias + hh].iter_mut().zip(dp) {
                        *gv += x;
                    }
                }
                if row == 0 {
                    for (u, x) in dp.iter().enumerate() {
                        grads[l.head_flags + u * 2 + flag_col] += x;
                    }
                }
            }
        }
        for (gv, (a, b)) in grads[l.boundary..l.boundary + d]
            .iter_mut()
            .zip(d_src_vecs[0].iter().zip(&d_tgt_vecs[0]))
        {
            *gv += a + b;
        }
        gru::backprop(l, &self.params, grads, &trace.src, d_src_vecs.split_off(1));
        gru::backprop(l, &self.params, grads, &trace.tgt, d_tgt_vecs.split_off(1));
    }
}

struct BatchCounts {
    positives: usize,
    negatives: usize,
    total: usize,
}

impl BatchCounts {
    fn of(batch: &[Example]) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::Config("loss needs a non-empty batch".into()));
        }
        let positives = batch.iter().filter(|e| e.is_match).count();
        Ok(BatchCounts {
            positives,
            negatives: batch.len() - positives,
            total: batch.len(),
        })
    }
}

/// Per-example loss terms before batch averaging.
struct Terms {
    em: f64,
    bce: f64,
    nonmatch: f64,
    score: PairScore,
}

fn em_term(grid: &CostGrid, posteriors: &[[f64; 3]]) -> f64 {
    let mut loss = 0.0;
    for (lp, g) in grid.cells().iter().zip(posteriors) {
        for k in 0..3 {
            if g[k] > 0.0 {
                loss -= g[k] * lp[k];
            }
        }
    }
    loss
}

fn nonmatch_term(norm_ll: f64) -> (f64, f64) {
    let q = norm_ll.exp();
    if q > NONMATCH_CLAMP {
        (-(1.0 - NONMATCH_CLAMP).ln(), 0.0)
    } else {
        (-(-q).ln_1p(), q / (1.0 - q))
    }
}

fn example_gradient(
    model: &NeuralEditModel,
    ex: &Example,
    counts: &BatchCounts,
    weights: LossWeights,
    grads: &mut [f64],
) -> Result<Terms> {
    let trace = model.trace_pair(&ex.source, &ex.target);
    let lat = forward_backward(&trace.grid)?;
    let (m, n) = (trace.grid.source_len(), trace.grid.target_len());
    let score = model.finish_score(lat.loglik, m, n);
    let y = if ex.is_match { 1.0 } else { 0.0 };

    let bce = softplus(score.logit) - y * score.logit;
    let d_logit = weights.bce * (score.p_match - y) / counts.total as f64;
    grads[model.layout.gain] += d_logit * score.norm_ll;
    grads[model.layout.bias] += d_logit;
    let mut d_norm_ll = d_logit * model.gain();

    let mut terms = Terms {
        em: 0.0,
        bce,
        nonmatch: 0.0,
        score,
    };
    let mut em_scale = 0.0;
    if ex.is_match {
        terms.em = em_term(&trace.grid, &lat.posteriors);
        em_scale = weights.em / counts.positives as f64;
    } else {
        let (value, slope) = nonmatch_term(score.norm_ll);
        terms.nonmatch = value;
        d_norm_ll += weights.nonmatch * slope / counts.negatives as f64;
    }
    // d loglik / d grid entry is the posterior of that move
    let d_ll = d_norm_ll / (m + n) as f64;
    let d_grid: Vec<[f64; 3]> = lat
        .posteriors
        .iter()
        .map(|g| g.map(|p| p * d_ll - p * em_scale))
        .collect();
    model.backprop_pair(&trace, &d_grid, grads);
    Ok(terms)
}

fn example_terms(model: &NeuralEditModel, ex: &Example) -> Result<Terms> {
    let grid = model.score_grid(&ex.source, &ex.target);
    let (m, n) = (grid.source_len(), grid.target_len());
    let (loglik, em) = if ex.is_match {
        let lat = forward_backward(&grid)?;
        (lat.loglik, em_term(&grid, &lat.posteriors))
    } else {
        (log_likelihood(&grid)?, 0.0)
    };
    let score = model.finish_score(loglik, m, n);
    let y = if ex.is_match { 1.0 } else { 0.0 };
    Ok(Terms {
        em,
        bce: softplus(score.logit) - y * score.logit,
        nonmatch: if ex.is_match { 0.0 } else { nonmatch_term(score.norm_ll).0 },
        score,
    })
}

fn combine(counts: &BatchCounts, sums: [f64; 3]) -> LossBreakdown {
    let avg = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
    LossBreakdown::from_parts(
        avg(sums[0], counts.positives),
        avg(sums[1], counts.total),
        avg(sums[2], counts.negatives),
    )
}

/// The three equally weighted training losses on a batch:
///
/// * EM loss over positives: `-sum(gamma * log p)` with posteriors held
///   constant, averaged over positive pairs;
/// * binary cross-entropy of the match probability over all pairs;
/// * non-match NLL over negatives: `-log(1 - exp(norm_ll))`, clamped.
pub fn loss(model: &NeuralEditModel, batch: &[Example]) -> Result<LossBreakdown> {
    Ok(loss_and_scores(model, batch)?.0)
}

/// [`loss`] together with every example's [`PairScore`], in batch order.
pub fn loss_and_scores(model: &NeuralEditModel, batch: &[Example]) -> Result<(LossBreakdown, Vec<PairScore>)> {
    let counts = BatchCounts::of(batch)?;
    let terms: Vec<Terms> = batch
        .par_iter()
        .map(|ex| example_terms(model, ex))
        .collect::<Result<_>>()?;
    let mut sums = [0.0; 3];
    for t in &terms {
        sums[0] += t.em;
        sums[1] += t.bce;
        sums[2] += t.nonmatch;
    }
    Ok((combine(&counts, sums), terms.into_iter().map(|t| t.score).collect()))
}

/// Loss and its gradient w.r.t. every parameter, with components scaled by
/// `weights` in the gradient. The EM component treats posteriors as
/// constants.
pub fn loss_and_gradient(
    model: &NeuralEditModel,
    batch: &[Example],
    weights: LossWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let counts = BatchCounts::of(batch)?;
    let total = model.num_params();
    // fixed chunking keeps the summation order independent of thread count
    let partials: Vec<Result<([f64; 3], Vec<f64>)>> = batch
        .par_chunks(EXAMPLES_PER_CHUNK)
        .map(|chunk| {
            let mut grads = vec![0.0; total];
            let mut sums = [0.0; 3];
            for ex in chunk {
                let t = example_gradient(model, ex, &counts, weights, &mut grads)?;
                sums[0] += t.em;
                sums[1] += t.bce;
                sums[2] += t.nonmatch;
            }
            Ok((sums, grads))
        })
        .collect();
    let mut sums = [0.0; 3];
    let mut grads = vec![0.0; total];
    for part in partials {
        let (s, g) = part?;
        for k in 0..3 {
            sums[k] += s[k];
        }
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((combine(&counts, sums), grads))
}

/// Posteriors of each positive example's lattice (`None` for negatives).
pub fn batch_posteriors(model: &NeuralEditModel, batch: &[Example]) -> Result<Vec<Option<Vec<[f64; 3]>>>> {
    batch
        .iter()
        .map(|ex| {
            if !ex.is_match {
                return Ok(None);
            }
            let lat = forward_backward(&model.score_grid(&ex.source, &ex.target))?;
            Ok(Some(lat.posteriors))
        })
        .collect()
}

/// EM loss with externally supplied (frozen) posteriors.
pub fn em_loss_frozen(
    model: &NeuralEditModel,
    batch: &[Example],
    posteriors: &[Option<Vec<[f64; 3]>>],
) -> Result<f64> {
    let counts = BatchCounts::of(batch)?;
    if counts.positives == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (ex, post) in batch.iter().zip(posteriors) {
        if let Some(post) = post {
            sum += em_term(&model.score_grid(&ex.source, &ex.target), post);
        }
    }
    Ok(sum / counts.positives as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::GridMode;

    fn tok(s: &str) -> Token {
        Token::new(s).unwrap()
    }

    fn small_model(seed: u64) -> NeuralEditModel {
        NeuralEditModel::new(
            Alphabet::from_chars("abcdeox'".chars()),
            ModelConfig::new(8, 2),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let m = small_model(1);
        let e = m.encode(&tok("a"));
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].len(), 8);
        assert_eq!(m.encode(&tok("abcd")), m.encode(&tok("abcd")));
    }

    #[test]
    fn encoding_is_bidirectional() {
        let m = small_model(2);
        let x = m.encode(&tok("abcd"));
        let y = m.encode(&tok("abce"));
        let diff: f64 = x[0].iter().zip(&y[0]).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-9, "position 0 unaffected by final character");
    }

    #[test]
    fn boundary_row_only_inserts() {
        let m = small_model(3);
        let (grid, reject) = m.score_grid_with_reject(&tok("abc"), &tok("ba"));
        for j in 1..=2 {
            assert!(grid.get(EditOp::Insert, 0, j).is_finite());
            assert_eq!(grid.get(EditOp::Delete, 0, j), f64::NEG_INFINITY);
            assert_eq!(grid.get(EditOp::Substitute, 0, j), f64::NEG_INFINITY);
        }
        grid.validate(GridMode::SubStochastic).unwrap();
        // interior cells: the three moves plus reject form a distribution
        let c = grid.cell(2, 1);
        let mass = grid.cell_mass(2, 1) + reject[c].exp();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pair_score_range_and_determinism() {
        let m = small_model(4);
        let s1 = m.pair_score(&tok("cat"), &tok("cxt")).unwrap();
        let s2 = m.pair_score(&tok("cat"), &tok("cxt")).unwrap();
        assert_eq!(s1, s2);
        assert!((0.0..=1.0).contains(&s1.p_match));
        assert!(s1.loglik < 0.0);
        assert!((s1.norm_ll - s1.loglik / 6.0).abs() < 1e-15);
    }

    #[test]
    fn threshold_bounds() {
        let mut m = small_model(5);
        assert!(m.set_threshold(1.5).is_err());
        assert!(m.set_threshold(-0.1).is_err());
        m.set_threshold(0.25).unwrap();
        assert_eq!(m.threshold(), 0.25);
    }

    #[test]
    fn loss_components() {
        let m = small_model(6);
        let positives = vec![
            Example::new(tok("cat"), tok("cxt"), true),
            Example::new(tok("dog"), tok("dxg"), true),
        ];
        let l = loss(&m, &positives).unwrap();
        assert_eq!(l.nonmatch_nll, 0.0);
        assert!(l.em_loss > 0.0 && l.bce_loss > 0.0);
        assert_eq!(l.total, l.em_loss + l.bce_loss + l.nonmatch_nll);

        let negatives = vec![Example::new(tok("cat"), tok("dog"), false)];
        let l = loss(&m, &negatives).unwrap();
        assert_eq!(l.em_loss, 0.0);
        assert!(l.nonmatch_nll > 0.0);
        assert!(loss(&m, &[]).is_err());
    }

    #[test]
    fn bce_vanishes_at_saturated_labels() {
        let mut m = small_model(7);
        let batch = vec![Example::new(tok("ab"), tok("ab"), true)];
        // norm_ll < 0, so a large negative gain drives p_match to 1
        let g = m.layout.gain;
        m.params[g] = -1e4;
        assert!(loss(&m, &batch).unwrap().bce_loss < 1e-12);
        let batch = vec![Example::new(tok("ab"), tok("cd"), false)];
        m.params[g] = 1e4;
        assert!(loss(&m, &batch).unwrap().bce_loss < 1e-12);
    }

    #[test]
    fn gradient_matches_loss_value() {
        let m = small_model(8);
        let batch = vec![
            Example::new(tok("cat"), tok("cxt"), true),
            Example::new(tok("cat"), tok("dog"), false),
        ];
        let (l, g) = loss_and_gradient(&m, &batch, LossWeights::ALL).unwrap();
        assert_eq!(l, loss(&m, &batch).unwrap());
        assert_eq!(g.len(), m.num_params());
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn constant_scorer_ignores_encodings() {
        let mut m = small_model(9);
        m.set_constant_scorer([0.0, 0.0, 1.0, -1.0]);
        let g1 = m.score_grid(&tok("abc"), &tok("cab"));
        let g2 = m.score_grid(&tok("ddd"), &tok("eoo"));
        assert_eq!(g1, g2);
    }

    #[test]
    fn single_encoder_parameter_set() {
        let m = small_model(10);
        let encoder: Vec<_> = m
            .layout()
            .tensors
            .iter()
            .filter(|t| t.name.starts_with(ENCODER_PREFIX))
            .collect();
        // embedding + 2 layers x 2 directions x 4 tensors
        assert_eq!(encoder.len(), 1 + 2 * 2 * 4);
        let embeddings = m.layout().tensors.iter().filter(|t| t.name.ends_with("embedding")).count();
        assert_eq!(embeddings, 1);
    }
}
