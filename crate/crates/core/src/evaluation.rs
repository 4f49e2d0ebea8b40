//! Pair classification metrics and lexicon ranking.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Lexicon;
use crate::error::{Error, Result};
use crate::memoryless::{GridNormalization, MemorylessEditModel};
use crate::negatives::NegativeKind;
use crate::neural::{Example, NeuralEditModel, PreparedToken};
use crate::strings::Token;

/// Scores string pairs for ranking; larger means more likely a match.
pub trait PairScorer: Sync {
    type Prepared: Send + Sync;

    fn prepare(&self, token: &Token) -> Self::Prepared;

    fn score(&self, source: &Self::Prepared, target: &Self::Prepared) -> Result<f64>;
}

/// Ranks by the pre-sigmoid match logit, which orders pairs exactly as the
/// match probability does but does not saturate.
impl PairScorer for NeuralEditModel {
    type Prepared = PreparedToken;

    fn prepare(&self, token: &Token) -> PreparedToken {
        NeuralEditModel::prepare(self, token)
    }

    fn score(&self, source: &PreparedToken, target: &PreparedToken) -> Result<f64> {
        Ok(self.score_prepared(source, target)?.logit)
    }
}

/// Ranks by length-normalized log-likelihood.
impl PairScorer for MemorylessEditModel {
    type Prepared = Token;

    fn prepare(&self, token: &Token) -> Token {
        token.clone()
    }

    fn score(&self, source: &Token, target: &Token) -> Result<f64> {
        let grid = self.cost_grid(source, target, GridNormalization::Joint);
        let ll = crate::lattice::log_likelihood(&grid)?;
        Ok(ll / (source.char_len() + target.char_len()) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Classification {
    pub fn from_counts(threshold: f64, tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Classification {
            threshold,
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1: f1_from_counts(tp, fp, fn_),
        }
    }
}

/// Positive-class F1, `2tp / (2tp + fp + fn)`; 0 when undefined.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Predicts a match iff `score >= threshold`.
pub fn classify_scores(scores: &[(f64, bool)], threshold: f64) -> Classification {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for &(s, label) in scores {
        match (s >= threshold, label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Classification::from_counts(threshold, tp, fp, fn_, tn)
}

/// Match probabilities of labelled pairs, in input order.
pub fn score_examples(model: &NeuralEditModel, examples: &[Example]) -> Result<Vec<(f64, bool)>> {
    examples
        .par_iter()
        .map(|ex| Ok((model.pair_score(&ex.source, &ex.target)?.p_match, ex.is_match)))
        .collect()
}

/// Classifies pairs at the model's calibrated threshold.
pub fn classify_pairs(model: &NeuralEditModel, examples: &[Example]) -> Result<Classification> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus("no test pairs to classify"));
    }
    Ok(classify_scores(&score_examples(model, examples)?, model.threshold()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRank {
    pub variant: Token,
    pub standard: Token,
    /// `None` when the standard is not in the lexicon.
    pub rank: Option<usize>,
    pub reciprocal_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub mrr: f64,
    /// Fraction of queries whose standard is in the lexicon.
    pub coverage: f64,
    pub lexicon_size: usize,
    pub queries: Vec<QueryRank>,
}

/// Pessimistic rank of `target` among `scores`: candidates scoring strictly
/// higher plus all tied candidates, itself included.
pub fn pessimistic_rank(scores: &[f64], target: f64) -> usize {
    scores.iter().filter(|&&s| s >= target).count()
}

pub fn mean_reciprocal_rank(ranks: &[Option<usize>]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|r| r.map_or(0.0, |r| 1.0 / r as f64)).sum::<f64>() / ranks.len() as f64
}

/// Scores every (variant, candidate) pairing of each query against the
/// case-folded lexicon and ranks the true standard.
pub fn rank_against_lexicon<S: PairScorer>(scorer: &S, queries: &[(Token, Token)], lexicon: &Lexicon) -> Result<Ranking> {
    let lexicon = lexicon.case_folded();
    if lexicon.is_empty() {
        return Err(Error::EmptyCorpus("ranking lexicon is empty"));
    }
    if queries.is_empty() {
        return Err(Error::EmptyCorpus("no ranking queries"));
    }
    let prepared: Vec<S::Prepared> = lexicon.tokens().par_iter().map(|t| scorer.prepare(t)).collect();
    let ranked: Vec<QueryRank> = queries
        .par_iter()
        .map(|(variant, standard)| {
            let source = scorer.prepare(variant);
            let scores: Vec<f64> = prepared
                .iter()
                .map(|c| scorer.score(&source, c))
                .collect::<Result<_>>()?;
            if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
                return Err(Error::InvalidGrid(format!("score {bad} while ranking {variant}")));
            }
            let rank = lexicon
                .tokens()
                .binary_search(&standard.to_lowercase())
                .ok()
                .map(|k| pessimistic_rank(&scores, scores[k]));
            Ok(QueryRank {
                variant: variant.clone(),
                standard: standard.clone(),
                rank,
                reciprocal_rank: rank.map_or(0.0, |r| 1.0 / r as f64),
            })
        })
        .collect::<Result<_>>()?;
    let ranks: Vec<Option<usize>> = ranked.iter().map(|q| q.rank).collect();
    let covered = ranks.iter().filter(|r| r.is_some()).count();
    Ok(Ranking {
        mrr: mean_reciprocal_rank(&ranks),
        coverage: covered as f64 / ranks.len() as f64,
        lexicon_size: lexicon.len(),
        queries: ranked,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub classification: Option<Classification>,
    pub ranking: Option<Ranking>,
}

impl EvalReport {
    /// `metric,value` rows for whichever sections are present.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        if let Some(c) = &self.classification {
            for (k, v) in [
                ("threshold", c.threshold),
                ("precision", c.precision),
                ("recall", c.recall),
                ("f1", c.f1),
            ] {
                out.push_str(&format!("{k},{v:.6}\n"));
            }
            for (k, v) in [("tp", c.tp), ("fp", c.fp), ("fn", c.fn_), ("tn", c.tn)] {
                out.push_str(&format!("{k},{v}\n"));
            }
        }
        if let Some(r) = &self.ranking {
            out.push_str(&format!("mrr,{:.6}\n", r.mrr));
            out.push_str(&format!("coverage,{:.6}\n", r.coverage));
            out.push_str(&format!("lexicon_size,{}\n", r.lexicon_size));
            out.push_str(&format!("queries,{}\n", r.queries.len()));
        }
        out
    }

    /// Per-query ranks; `rank` is `miss` for out-of-lexicon standards.
    pub fn ranks_tsv(&self) -> String {
        let mut out = String::from("variant\tstandard\trank\treciprocal_rank\n");
        if let Some(r) = &self.ranking {
            for q in &r.queries {
                let rank = q.rank.map_or_else(|| "miss".to_string(), |r| r.to_string());
                out.push_str(&format!("{}\t{}\t{rank}\t{:.6}\n", q.variant, q.standard, q.reciprocal_rank));
            }
        }
        out
    }
}

/// One `strategy,n,f1,mrr` row per sweep cell; missing metrics are empty.
pub fn sweep_report(results: &BTreeMap<(NegativeKind, usize), EvalReport>) -> String {
    let mut out = String::from("strategy,n,f1,mrr\n");
    for ((kind, n), report) in results {
        let f1 = report.classification.map_or(String::new(), |c| format!("{:.6}", c.f1));
        let mrr = report.ranking.as_ref().map_or(String::new(), |r| format!("{:.6}", r.mrr));
        out.push_str(&format!("{kind},{n},{f1},{mrr}\n"));
    }
    out
}
