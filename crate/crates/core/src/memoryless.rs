//! Memoryless statistical edit distance: one joint distribution over
//! substitutions, deletions and insertions of alphabet symbols, fitted by
//! classic expectation maximization over the edit lattice.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::TokenPair;
use crate::error::{Error, Result};
use crate::lattice::{forward_backward, log_likelihood, CostGrid, EditOp};
use crate::strings::{Alphabet, Token};

pub const DEFAULT_FLOOR: f64 = 1e-6;
const FORMAT_VERSION: u32 = 1;
const PAIRS_PER_CHUNK: usize = 64;

/// How lattice entries are derived from the joint distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridNormalization {
    /// Entries are the joint log-probabilities themselves.
    #[default]
    Joint,
    /// Entries are renormalized per cell over the defined moves.
    PerCell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemorylessEditModel {
    alphabet: Alphabet,
    /// `sub[x * K + y]` = log P(substitute x by y)
    sub: Vec<f64>,
    del: Vec<f64>,
    ins: Vec<f64>,
    trained: bool,
    history: Vec<f64>,
}

/// Expected operation counts accumulated over a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedCounts {
    pub sub: Vec<f64>,
    pub del: Vec<f64>,
    pub ins: Vec<f64>,
    pub loglik: f64,
}

impl ExpectedCounts {
    fn zeros(k: usize) -> Self {
        ExpectedCounts {
            sub: vec![0.0; k * k],
            del: vec![0.0; k],
            ins: vec![0.0; k],
            loglik: 0.0,
        }
    }

    fn merge(&mut self, other: &ExpectedCounts) {
        for (a, b) in self.sub.iter_mut().zip(&other.sub) {
            *a += b;
        }
        for (a, b) in self.del.iter_mut().zip(&other.del) {
            *a += b;
        }
        for (a, b) in self.ins.iter_mut().zip(&other.ins) {
            *a += b;
        }
        self.loglik += other.loglik;
    }
}

impl MemorylessEditModel {
    /// Every operation equally likely.
    pub fn uniform(alphabet: Alphabet) -> Self {
        let k = alphabet.len();
        let lp = -((k * k + 2 * k) as f64).ln();
        MemorylessEditModel {
            alphabet,
            sub: vec![lp; k * k],
            del: vec![lp; k],
            ins: vec![lp; k],
            trained: false,
            history: Vec::new(),
        }
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Corpus log-likelihood before each EM update and after the last one.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn sub_logp(&self, from: usize, to: usize) -> f64 {
        self.sub[from * self.alphabet.len() + to]
    }

    pub fn del_logp(&self, sym: usize) -> f64 {
        self.del[sym]
    }

    pub fn ins_logp(&self, sym: usize) -> f64 {
        self.ins[sym]
    }

    /// Linear-space sum over every parameter; 1 for a valid model.
    pub fn total_mass(&self) -> f64 {
        self.sub
            .iter()
            .chain(&self.del)
            .chain(&self.ins)
            .map(|lp| lp.exp())
            .sum()
    }

    pub fn cost_grid(&self, a: &Token, b: &Token, norm: GridNormalization) -> CostGrid {
        let src = self.alphabet.encode(a);
        let tgt = self.alphabet.encode(b);
        self.cost_grid_encoded(&src, &tgt, norm)
    }

    fn cost_grid_encoded(&self, src: &[usize], tgt: &[usize], norm: GridNormalization) -> CostGrid {
        let mut grid = CostGrid::from_fn(src.len(), tgt.len(), |op, i, j| match op {
            EditOp::Delete => self.del[src[i - 1]],
            EditOp::Insert => self.ins[tgt[j - 1]],
            EditOp::Substitute => self.sub_logp(src[i - 1], tgt[j - 1]),
        });
        if norm == GridNormalization::PerCell {
            grid.renormalize_cells();
        }
        grid
    }

    /// E-step: posterior operation counts summed over all pairs.
    pub fn expected_counts(&self, pairs: &[TokenPair]) -> Result<ExpectedCounts> {
        let k = self.alphabet.len();
        let encoded: Vec<(Vec<usize>, Vec<usize>)> = pairs
            .iter()
            .map(|p| (self.alphabet.encode(&p.variant), self.alphabet.encode(&p.standard)))
            .collect();
        // fixed chunking keeps the summation order independent of thread count
        let partials: Vec<Result<ExpectedCounts>> = encoded
            .par_chunks(PAIRS_PER_CHUNK)
            .map(|chunk| {
                let mut acc = ExpectedCounts::zeros(k);
                for (src, tgt) in chunk {
                    let grid = self.cost_grid_encoded(src, tgt, GridNormalization::Joint);
                    let lat = forward_backward(&grid)?;
                    acc.loglik += lat.loglik;
                    for i in 0..=src.len() {
                        for j in 0..=tgt.len() {
                            let g = lat.posteriors[lat.cell(i, j)];
                            if i > 0 {
                                acc.del[src[i - 1]] += g[0];
                            }
                            if j > 0 {
                                acc.ins[tgt[j - 1]] += g[1];
                            }
                            if i > 0 && j > 0 {
                                acc.sub[src[i - 1] * k + tgt[j - 1]] += g[2];
                            }
                        }
                    }
                }
                Ok(acc)
            })
            .collect();
        let mut total = ExpectedCounts::zeros(k);
        for part in partials {
            total.merge(&part?);
        }
        Ok(total)
    }

    /// M-step: renormalizes the joint distribution from expected counts
    /// plus an additive floor on every parameter.
    pub fn maximize(&mut self, counts: &ExpectedCounts, floor: f64) {
        let z: f64 = counts
            .sub
            .iter()
            .chain(&counts.del)
            .chain(&counts.ins)
            .map(|c| c + floor)
            .sum();
        let log_z = z.ln();
        let update = |dst: &mut [f64], src: &[f64]| {
            for (d, &c) in dst.iter_mut().zip(src) {
                *d = (c + floor).ln() - log_z;
            }
        };
        update(&mut self.sub, &counts.sub);
        update(&mut self.del, &counts.del);
        update(&mut self.ins, &counts.ins);
        self.trained = true;
    }

    /// Sum of pair log-likelihoods under the current parameters.
    pub fn corpus_loglik(&self, pairs: &[TokenPair]) -> Result<f64> {
        pairs
            .iter()
            .map(|p| log_likelihood(&self.cost_grid(&p.variant, &p.standard, GridNormalization::Joint)))
            .sum()
    }

    /// Length-normalized log-likelihood of a pair.
    pub fn normalized_loglik(&self, a: &Token, b: &Token) -> Result<f64> {
        let ll = log_likelihood(&self.cost_grid(a, b, GridNormalization::Joint))?;
        Ok(ll / (a.char_len() + b.char_len()) as f64)
    }

    pub fn to_text(&self) -> String {
        let k = self.alphabet.len();
        let mut out = String::new();
        let _ = writeln!(out, "#memoryless-edit-model");
        let _ = writeln!(out, "version\t{FORMAT_VERSION}");
        let listing: Vec<String> = self.alphabet.chars().iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "alphabet\t{}", listing.join(" "));
        let _ = writeln!(out, "trained\t{}", self.trained);
        let hist: Vec<String> = self.history.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "history\t{}", hist.join(" "));
        for x in 0..k {
            for y in 0..k {
                let _ = writeln!(
                    out,
                    "sub\t{} {}\t{}",
                    symbol_name(&self.alphabet, x),
                    symbol_name(&self.alphabet, y),
                    self.sub[x * k + y]
                );
            }
        }
        for x in 0..k {
            let _ = writeln!(out, "del\t{}\t{}", symbol_name(&self.alphabet, x), self.del[x]);
        }
        for y in 0..k {
            let _ = writeln!(out, "ins\t{}\t{}", symbol_name(&self.alphabet, y), self.ins[y]);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse {
            path: "<memoryless model>".into(),
            line,
            message: msg.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut header = |key: &str| -> Result<(usize, String)> {
            let (no, line) = lines.next().ok_or(Error::ModelTruncated("header"))?;
            let mut parts = line.splitn(2, '\t');
            if parts.next() != Some(key) {
                return Err(bad(no, &format!("expected {key}")));
            }
            Ok((no, parts.next().unwrap_or("").to_string()))
        };
        let (_, magic) = header("#memoryless-edit-model")?;
        if !magic.is_empty() {
            return Err(Error::ModelVersion("unexpected magic line".into()));
        }
        let (_, version) = header("version")?;
        if version != FORMAT_VERSION.to_string() {
            return Err(Error::ModelVersion(format!(
                "expected {FORMAT_VERSION}, found {version}"
            )));
        }
        let (no, listing) = header("alphabet")?;
        let chars = listing
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| {
                let mut it = s.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => Ok(c),
                    _ => Err(bad(no, "alphabet entries must be single characters")),
                }
            })
            .collect::<Result<Vec<char>>>()?;
        let alphabet = Alphabet::from_listing(chars)?;
        let (no, trained) = header("trained")?;
        let trained = trained.parse::<bool>().map_err(|_| bad(no, "bad trained flag"))?;
        let (no, hist) = header("history")?;
        let history = hist
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|v| v.parse::<f64>().map_err(|_| bad(no, "bad history value")))
            .collect::<Result<Vec<f64>>>()?;

        let mut model = MemorylessEditModel::uniform(alphabet);
        model.trained = trained;
        model.history = history;
        let k = model.alphabet.len();
        let mut seen = vec![false; k * k + 2 * k];
        for (no, line) in lines {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(no, "expected op<TAB>chars<TAB>logp"));
            }
            let logp: f64 = fields[2].parse().map_err(|_| bad(no, "bad log-probability"))?;
            let sym = |name: &str| {
                parse_symbol(&model.alphabet, name).ok_or_else(|| bad(no, "unknown symbol"))
            };
            let slot = match fields[0] {
                "sub" => {
                    let (x, y) = fields[1]
                        .split_once(' ')
                        .ok_or_else(|| bad(no, "substitution needs two symbols"))?;
                    let (x, y) = (sym(x)?, sym(y)?);
                    model.sub[x * k + y] = logp;
                    x * k + y
                }
                "del" => {
                    let x = sym(fields[1])?;
                    model.del[x] = logp;
                    k * k + x
                }
                "ins" => {
                    let y = sym(fields[1])?;
                    model.ins[y] = logp;
                    k * k + k + y
                }
                other => return Err(bad(no, &format!("unknown operation {other:?}"))),
            };
            seen[slot] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::ModelTruncated("parameter rows"));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn symbol_name(alphabet: &Alphabet, index: usize) -> String {
    match index {
        Alphabet::PAD => "<pad>".into(),
        Alphabet::UNK => "<unk>".into(),
        i => alphabet.symbol(i).map(String::from).unwrap_or_default(),
    }
}

fn parse_symbol(alphabet: &Alphabet, name: &str) -> Option<usize> {
    match name {
        "<pad>" => Some(Alphabet::PAD),
        "<unk>" => Some(Alphabet::UNK),
        _ => {
            let mut it = name.chars();
            match (it.next(), it.next()) {
                (Some(c), None) if alphabet.contains(c) => Some(alphabet.index(c)),
                _ => None,
            }
        }
    }
}

/// Fits a memoryless model by `iters` rounds of EM from the uniform
/// distribution. Characters outside `alphabet` map to the unknown symbol.
pub fn em_fit_memoryless(
    pairs: &[TokenPair],
    alphabet: Alphabet,
    iters: usize,
    floor: f64,
) -> Result<MemorylessEditModel> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus("no training pairs for EM"));
    }
    if iters == 0 {
        return Err(Error::Config("EM needs at least one iteration".into()));
    }
    if !(floor >= 0.0 && floor.is_finite()) {
        return Err(Error::Config(format!("invalid smoothing floor {floor}")));
    }
    let mut model = MemorylessEditModel::uniform(alphabet);
    for _ in 0..iters {
        let counts = model.expected_counts(pairs)?;
        model.history.push(counts.loglik);
        model.maximize(&counts, floor);
    }
    let final_ll = model.corpus_loglik(pairs)?;
    model.history.push(final_ll);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::GridMode;

    fn pair(a: &str, b: &str) -> TokenPair {
        TokenPair::new(Token::new(a).unwrap(), Token::new(b).unwrap())
    }

    #[test]
    fn uniform_model_is_normalized() {
        let m = MemorylessEditModel::uniform(Alphabet::from_chars("abc".chars()));
        assert!((m.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_pair_one_iteration_hand_computed() {
        // K = 3 symbols (pad, unk, a), 15 parameters each u = 1/15.
        // Paths: sub (u), del.ins (u^2), ins.del (u^2).
        // Expected counts: sub = 1/(1+2u) = 15/17, del = ins = 2u/(1+2u) = 2/17.
        let pairs = vec![pair("a", "a")];
        let alphabet = Alphabet::from_chars(['a']);
        let floor = 1e-6;
        let m = em_fit_memoryless(&pairs, alphabet.clone(), 1, floor).unwrap();
        let a = alphabet.index('a');
        let z = 19.0 / 17.0 + 15.0 * floor;
        assert!((m.sub_logp(a, a) - ((15.0 / 17.0 + floor) / z).ln()).abs() < 1e-12);
        assert!((m.del_logp(a) - ((2.0 / 17.0 + floor) / z).ln()).abs() < 1e-12);
        assert!((m.ins_logp(a) - ((2.0 / 17.0 + floor) / z).ln()).abs() < 1e-12);
        let best = (0..3)
            .flat_map(|x| (0..3).map(move |y| (x, y)))
            .max_by(|p, q| m.sub_logp(p.0, p.1).total_cmp(&m.sub_logp(q.0, q.1)))
            .unwrap();
        assert_eq!(best, (a, a));
        assert!(m.sub_logp(a, a) > m.del_logp(a));
        assert!((m.total_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unseen_character_gets_no_mass_without_floor() {
        let pairs = vec![pair("ab", "ab"), pair("ba", "a")];
        let alphabet = Alphabet::from_chars("abz".chars());
        let m = em_fit_memoryless(&pairs, alphabet.clone(), 3, 0.0).unwrap();
        let z = alphabet.index('z');
        for x in 0..alphabet.len() {
            assert_eq!(m.sub_logp(z, x).exp(), 0.0);
            assert_eq!(m.sub_logp(x, z).exp(), 0.0);
        }
        assert_eq!(m.del_logp(z).exp(), 0.0);
        assert_eq!(m.ins_logp(z).exp(), 0.0);
        assert!((m.total_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn grid_entries_are_position_independent() {
        let m = em_fit_memoryless(
            &[pair("abca", "abda"), pair("aa", "a")],
            Alphabet::from_chars("abcd".chars()),
            2,
            DEFAULT_FLOOR,
        )
        .unwrap();
        let a = Token::new("aba").unwrap();
        let b = Token::new("bab").unwrap();
        let g = m.cost_grid(&a, &b, GridNormalization::Joint);
        assert_eq!(g.get(EditOp::Substitute, 1, 2), g.get(EditOp::Substitute, 3, 2));
        assert_eq!(g.get(EditOp::Delete, 1, 0), g.get(EditOp::Delete, 3, 3));
        assert!(g.validate(GridMode::SubStochastic).is_ok());
        let per_cell = m.cost_grid(&a, &b, GridNormalization::PerCell);
        assert!(per_cell.validate(GridMode::Normalized).is_ok());
    }

    #[test]
    fn unknown_characters_use_unk_parameters() {
        let alphabet = Alphabet::from_chars("ab".chars());
        let mut m = MemorylessEditModel::uniform(alphabet);
        let k = m.alphabet.len();
        m.sub[Alphabet::UNK * k + Alphabet::UNK] = -0.5;
        let g = m.cost_grid(
            &Token::new("q").unwrap(),
            &Token::new("é").unwrap(),
            GridNormalization::Joint,
        );
        assert_eq!(g.get(EditOp::Substitute, 1, 1), -0.5);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(matches!(
            em_fit_memoryless(&[], Alphabet::from_chars(['a']), 1, 0.0),
            Err(Error::EmptyCorpus(_))
        ));
    }

    #[test]
    fn text_format_round_trip() {
        let m = em_fit_memoryless(
            &[pair("caat", "cat"), pair("d'g", "dog")],
            Alphabet::from_chars("acdgot'".chars()),
            3,
            DEFAULT_FLOOR,
        )
        .unwrap();
        let text = m.to_text();
        assert!(text.lines().any(|l| l.starts_with("sub\t' a\t")));
        let back = MemorylessEditModel::from_text(&text).unwrap();
        assert_eq!(back, m);

        let bumped = text.replacen("version\t1", "version\t9", 1);
        assert!(matches!(
            MemorylessEditModel::from_text(&bumped),
            Err(Error::ModelVersion(_))
        ));
        let cut: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            MemorylessEditModel::from_text(&cut),
            Err(Error::ModelTruncated(_))
        ));
    }
}
