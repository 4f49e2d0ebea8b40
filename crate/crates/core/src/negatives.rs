//! Known-false (variant, candidate) pairs drawn from a lexicon.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Lexicon, TokenPair};
use crate::error::{Error, Result};
use crate::strings::{levenshtein, Token};

/// How candidates are chosen for each variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeKind {
    /// Uniform sample without replacement.
    Random,
    /// The lowest-distance candidates, ties broken lexicographically.
    Ld,
    /// `floor(n/2)` by distance plus `ceil(n/2)` random from the rest.
    Mixed,
}

impl NegativeKind {
    pub const ALL: [NegativeKind; 3] = [NegativeKind::Random, NegativeKind::Ld, NegativeKind::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            NegativeKind::Random => "random",
            NegativeKind::Ld => "ld",
            NegativeKind::Mixed => "mixed",
        }
    }
}

impl fmt::Display for NegativeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NegativeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(NegativeKind::Random),
            "ld" => Ok(NegativeKind::Ld),
            "mixed" => Ok(NegativeKind::Mixed),
            other => Err(Error::Config(format!(
                "unknown negative strategy {other:?} (expected random, ld or mixed)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NegativeStrategy {
    pub kind: NegativeKind,
    /// Negatives per distinct variant.
    pub n: usize,
    pub seed: u64,
}

impl NegativeStrategy {
    pub fn new(kind: NegativeKind, n: usize, seed: u64) -> Result<Self> {
        let s = NegativeStrategy { kind, n, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("negative count must be at least 1".into()));
        }
        Ok(())
    }

    /// Split of `n` into (distance-ranked, random) draws.
    pub fn halves(&self) -> (usize, usize) {
        match self.kind {
            NegativeKind::Random => (0, self.n),
            NegativeKind::Ld => (self.n, 0),
            NegativeKind::Mixed => (self.n / 2, self.n - self.n / 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeRow {
    pub variant: Token,
    pub candidate: Token,
}

impl NegativeRow {
    pub fn distance(&self) -> usize {
        levenshtein(self.variant.as_str(), self.candidate.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeSet {
    pub strategy: NegativeStrategy,
    pub rows: Vec<NegativeRow>,
}

impl NegativeSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Mean Levenshtein distance from variant to candidate over all rows.
    pub fn avg_ld(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        let total: usize = self.rows.iter().map(NegativeRow::distance).sum();
        total as f64 / self.rows.len() as f64
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\tcandidate\tlabel\tstrategy\tseed\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t0\t{}\t{}\n",
                r.variant, r.candidate, self.strategy.kind, self.strategy.seed
            ));
        }
        out
    }

    /// Parses [`NegativeSet::to_tsv`] output. The strategy's `n` is recovered
    /// as the largest per-variant row count.
    pub fn from_tsv(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = lines.next().ok_or_else(|| Error::EmptyFile { path: origin.into() })?.1;
        let expected = ["variant", "candidate", "label", "strategy", "seed"];
        let columns: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
        for col in expected {
            if !columns.contains(&col) {
                return Err(Error::MissingColumn {
                    path: origin.into(),
                    line: 1,
                    column: col.into(),
                });
            }
        }
        let idx = |name: &str| columns.iter().position(|c| *c == name).unwrap();
        let (iv, ic, il, is, ise) = (idx("variant"), idx("candidate"), idx("label"), idx("strategy"), idx("seed"));
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.into(),
            line,
            message,
        };
        let mut rows = Vec::new();
        let mut provenance: Option<(NegativeKind, u64)> = None;
        let mut per_variant: BTreeMap<Token, usize> = BTreeMap::new();
        for (k, line) in lines {
            let line_no = k + 1;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < columns.len() {
                return Err(parse_err(line_no, format!("expected {} fields", columns.len())));
            }
            if fields[il] != "0" {
                return Err(parse_err(line_no, format!("negative row with label {:?}", fields[il])));
            }
            let kind: NegativeKind = fields[is].parse().map_err(|e: Error| parse_err(line_no, e.to_string()))?;
            let seed: u64 = fields[ise]
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid seed {:?}", fields[ise])))?;
            match provenance {
                None => provenance = Some((kind, seed)),
                Some(p) if p != (kind, seed) => {
                    return Err(parse_err(line_no, "mixed strategies in one negative set".into()))
                }
                _ => {}
            }
            let variant = Token::new(fields[iv]).map_err(|e| parse_err(line_no, e.to_string()))?;
            let candidate = Token::new(fields[ic]).map_err(|e| parse_err(line_no, e.to_string()))?;
            *per_variant.entry(variant.clone()).or_default() += 1;
            rows.push(NegativeRow { variant, candidate });
        }
        let (kind, seed) = provenance.ok_or_else(|| Error::EmptyFile { path: origin.into() })?;
        let n = per_variant.values().copied().max().unwrap_or(0);
        Ok(NegativeSet {
            strategy: NegativeStrategy { kind, n, seed },
            rows,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, path)
    }
}

/// Seed for one variant's draws: the first 8 bytes of
/// `sha256(seed as little-endian u64 || variant UTF-8)`.
pub fn variant_seed(seed: u64, variant: &Token) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(variant.as_str().as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}

fn draw(variant: &Token, excluded: &HashSet<String>, lexicon: &Lexicon, strategy: &NegativeStrategy) -> Result<Vec<NegativeRow>> {
    let pool: Vec<&Token> = lexicon
        .tokens()
        .iter()
        .filter(|t| !excluded.contains(&t.as_str().to_lowercase()))
        .collect();
    if pool.len() < strategy.n {
        return Err(Error::LexiconTooSmall {
            variant: variant.to_string(),
            needed: strategy.n,
            available: pool.len(),
        });
    }
    let (n_ld, n_random) = strategy.halves();
    let mut chosen: Vec<&Token> = Vec::with_capacity(strategy.n);
    let mut rest = pool;
    if n_ld > 0 {
        let mut ranked: Vec<(usize, &Token)> = rest
            .iter()
            .map(|t| (levenshtein(variant.as_str(), t.as_str()), *t))
            .collect();
        ranked.sort();
        let picked: BTreeSet<&Token> = ranked[..n_ld].iter().map(|(_, t)| *t).collect();
        chosen.extend(ranked[..n_ld].iter().map(|(_, t)| *t));
        rest.retain(|t| !picked.contains(t));
    }
    if n_random > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(variant_seed(strategy.seed, variant));
        let mut idx = sample(&mut rng, rest.len(), n_random).into_vec();
        idx.sort_unstable();
        chosen.extend(idx.into_iter().map(|i| rest[i]));
    }
    Ok(chosen
        .into_iter()
        .map(|c| NegativeRow {
            variant: variant.clone(),
            candidate: c.clone(),
        })
        .collect())
}

/// Draws `strategy.n` negatives for every distinct variant in `pairs`.
///
/// A candidate is never the variant itself nor any standard the variant is
/// paired with (compared case-insensitively). Variants appear in order of
/// first occurrence.
pub fn generate_negatives(pairs: &[TokenPair], lexicon: &Lexicon, strategy: NegativeStrategy) -> Result<NegativeSet> {
    strategy.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus("no pairs to draw negatives for"));
    }
    let mut order: Vec<&Token> = Vec::new();
    let mut exclusions: BTreeMap<&Token, HashSet<String>> = BTreeMap::new();
    for p in pairs {
        let set = exclusions.entry(&p.variant).or_insert_with(|| {
            order.push(&p.variant);
            HashSet::from([p.variant.as_str().to_lowercase()])
        });
        set.insert(p.standard.as_str().to_lowercase());
    }
    let per_variant: Vec<Vec<NegativeRow>> = order
        .par_iter()
        .map(|v| draw(v, &exclusions[v], lexicon, &strategy))
        .collect::<Result<_>>()?;
    Ok(NegativeSet {
        strategy,
        rows: per_variant.into_iter().flatten().collect(),
    })
}

/// CSV with one `strategy,n,avg_ld` row per set.
pub fn negative_ld_report(sets: &BTreeMap<(NegativeKind, usize), NegativeSet>) -> String {
    let mut out = String::from("strategy,n,avg_ld\n");
    for ((kind, n), set) in sets {
        out.push_str(&format!("{kind},{n},{:.6}\n", set.avg_ld()));
    }
    out
}
