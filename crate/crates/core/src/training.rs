//! Mini-batch training with periodic validation, F1-based early stopping and
//! threshold calibration.

use std::fmt;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenPair;
use crate::error::{Error, Result};
use crate::evaluation::{classify_scores, f1_from_counts};
use crate::negatives::NegativeSet;
use crate::neural::{loss_and_gradient, loss_and_scores, Example, LossBreakdown, LossWeights, ModelConfig, NeuralEditModel};
use crate::optim::{Adam, AdamConfig};
use crate::strings::Alphabet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Validate every this many batches.
    pub validation_frequency: usize,
    /// Validations without improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub d_emb: usize,
    pub layers: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            validation_frequency: 50,
            patience: 10,
            max_epochs: 100,
            seed: 0,
            d_emb: 256,
            layers: 2,
            learning_rate: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch size", self.batch_size),
            ("validation frequency", self.validation_frequency),
            ("patience", self.patience),
            ("max epochs", self.max_epochs),
            ("layers", self.layers),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::new(self.d_emb, self.layers)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Threshold maximizing positive-class F1 when predicting a match iff
/// `score >= tau`. Candidates are 0, 1 and the midpoints between adjacent
/// distinct scores; the smallest best candidate wins. Returns `(tau, f1)`.
pub fn calibrate_threshold(scores: &[(f64, bool)]) -> Result<(f64, f64)> {
    let mut pos: Vec<f64> = scores.iter().filter(|s| s.1).map(|s| s.0).collect();
    let mut neg: Vec<f64> = scores.iter().filter(|s| !s.1).map(|s| s.0).collect();
    if pos.is_empty() {
        return Err(Error::NoPositives(scores.len()));
    }
    if scores.iter().any(|s| s.0.is_nan()) {
        return Err(Error::InvalidGrid("NaN score during threshold calibration".into()));
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = scores.iter().map(|s| s.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut candidates = vec![0.0, 1.0];
    candidates.extend(distinct.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let at_least = |sorted: &[f64], t: f64| sorted.len() - sorted.partition_point(|&s| s < t);
    let mut best = (f64::NAN, -1.0);
    for &t in &candidates {
        let tp = at_least(&pos, t);
        let fp = at_least(&neg, t);
        let f1 = f1_from_counts(tp, fp, pos.len() - tp);
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    Ok(best)
}

/// Positives plus their negatives as labelled examples.
pub fn build_examples(pairs: &[TokenPair], negatives: Option<&NegativeSet>) -> Vec<Example> {
    let mut out: Vec<Example> = pairs
        .iter()
        .map(|p| Example::new(p.variant.clone(), p.standard.clone(), true))
        .collect();
    if let Some(neg) = negatives {
        out.extend(
            neg.rows
                .iter()
                .map(|r| Example::new(r.variant.clone(), r.candidate.clone(), false)),
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: usize,
    pub epoch: usize,
    pub val_f1: f64,
    pub threshold: f64,
    pub em_loss: f64,
    pub bce_loss: f64,
    pub nonmatch_nll: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Patience => "patience",
            StopReason::MaxEpochs => "max_epochs",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<ValidationRecord>,
    /// Index into `history` of the returned checkpoint.
    pub best: usize,
    pub stop_reason: StopReason,
    pub steps: usize,
    pub epochs: usize,
}

impl TrainReport {
    pub fn best_record(&self) -> &ValidationRecord {
        &self.history[self.best]
    }

    pub fn history_csv(&self) -> String {
        let mut out = String::from("step,epoch,val_f1,threshold,em_loss,bce_loss,nonmatch_nll,total\n");
        for r in &self.history {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.step, r.epoch, r.val_f1, r.threshold, r.em_loss, r.bce_loss, r.nonmatch_nll, r.total
            ));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let best = self.best_record();
        let summary = serde_json::json!({
            "best_step": best.step,
            "best_epoch": best.epoch,
            "best_val_f1": best.val_f1,
            "threshold": best.threshold,
            "stop_reason": self.stop_reason.to_string(),
            "steps": self.steps,
            "epochs": self.epochs,
            "validations": self.history.len(),
        });
        serde_json::to_string_pretty(&summary).expect("summary is serializable") + "\n"
    }
}

/// Everything needed to resume training bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model_config: ModelConfig,
    pub alphabet: Vec<char>,
    pub params: Vec<f64>,
    pub threshold: f64,
    pub best_params: Option<Vec<f64>>,
    pub best_threshold: f64,
    pub optimizer: Adam,
    pub epoch: usize,
    /// Next batch within `epoch`.
    pub batch: usize,
    pub step: usize,
    pub since_validation: usize,
    pub since_best: usize,
    pub history: Vec<ValidationRecord>,
    pub best: Option<usize>,
    pub finished: Option<StopReason>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint is serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid checkpoint: {e}")))
    }
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    model: NeuralEditModel,
    best_model: Option<NeuralEditModel>,
    optimizer: Adam,
    train: &'a [Example],
    val: &'a [Example],
    epoch: usize,
    batch: usize,
    step: usize,
    since_validation: usize,
    since_best: usize,
    history: Vec<ValidationRecord>,
    best: Option<usize>,
    finished: Option<StopReason>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: NeuralEditModel, train: &'a [Example], val: &'a [Example], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::EmptyCorpus("training set is empty"));
        }
        if !val.iter().any(|e| e.is_match) {
            return Err(Error::NoPositives(val.len()));
        }
        let optimizer = Adam::new(cfg.adam(), model.num_params());
        Ok(Trainer {
            cfg,
            model,
            best_model: None,
            optimizer,
            train,
            val,
            epoch: 0,
            batch: 0,
            step: 0,
            since_validation: 0,
            since_best: 0,
            history: Vec::new(),
            best: None,
            finished: None,
        })
    }

    pub fn resume(ck: Checkpoint, train: &'a [Example], val: &'a [Example]) -> Result<Self> {
        let alphabet = Alphabet::from_listing(ck.alphabet)?;
        let rebuild = |params: Vec<f64>, tau: f64| -> Result<NeuralEditModel> {
            let mut m = NeuralEditModel::new(alphabet.clone(), ck.model_config, 0)?;
            if params.len() != m.num_params() {
                return Err(Error::Config("checkpoint parameter count mismatch".into()));
            }
            m.params_mut().copy_from_slice(&params);
            m.set_threshold(tau)?;
            Ok(m)
        };
        let model = rebuild(ck.params, ck.threshold)?;
        let best_model = ck.best_params.map(|p| rebuild(p, ck.best_threshold)).transpose()?;
        let mut t = Trainer::new(model, train, val, ck.config)?;
        t.best_model = best_model;
        t.optimizer = ck.optimizer;
        t.epoch = ck.epoch;
        t.batch = ck.batch;
        t.step = ck.step;
        t.since_validation = ck.since_validation;
        t.since_best = ck.since_best;
        t.history = ck.history;
        t.best = ck.best;
        t.finished = ck.finished;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg,
            model_config: self.model.config(),
            alphabet: self.model.alphabet().chars().to_vec(),
            params: self.model.params().to_vec(),
            threshold: self.model.threshold(),
            best_params: self.best_model.as_ref().map(|m| m.params().to_vec()),
            best_threshold: self.best_model.as_ref().map_or(0.5, |m| m.threshold()),
            optimizer: self.optimizer.clone(),
            epoch: self.epoch,
            batch: self.batch,
            step: self.step,
            since_validation: self.since_validation,
            since_best: self.since_best,
            history: self.history.clone(),
            best: self.best,
            finished: self.finished,
        }
    }

    pub fn model(&self) -> &NeuralEditModel {
        &self.model
    }

    pub fn history(&self) -> &[ValidationRecord] {
        &self.history
    }

    pub fn is_finished(&self) -> bool {
        self.finished.is_some()
    }

    fn epoch_order(&self) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(self.epoch as u64);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    fn batches_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.cfg.batch_size)
    }

    fn validate(&mut self) -> Result<()> {
        let (losses, scores): (LossBreakdown, _) = loss_and_scores(&self.model, self.val)?;
        let labelled: Vec<(f64, bool)> = scores
            .iter()
            .zip(self.val)
            .map(|(s, e)| (s.p_match, e.is_match))
            .collect();
        let (tau, f1) = calibrate_threshold(&labelled)?;
        debug_assert_eq!(classify_scores(&labelled, tau).f1, f1);
        let record = ValidationRecord {
            step: self.step,
            epoch: self.epoch,
            val_f1: f1,
            threshold: tau,
            em_loss: losses.em_loss,
            bce_loss: losses.bce_loss,
            nonmatch_nll: losses.nonmatch_nll,
            total: losses.total,
        };
        info!(
            "validation at step {} (epoch {}): f1 {:.4} tau {:.4} loss {:.4}",
            record.step, record.epoch, f1, tau, losses.total
        );
        self.history.push(record);
        self.since_validation = 0;
        let improved = self.best.is_none_or(|b| f1 > self.history[b].val_f1);
        if improved {
            self.best = Some(self.history.len() - 1);
            self.since_best = 0;
            let mut best = self.model.clone();
            best.set_threshold(tau)?;
            self.best_model = Some(best);
        } else {
            self.since_best += 1;
            if self.since_best >= self.cfg.patience {
                self.finished = Some(StopReason::Patience);
            }
        }
        Ok(())
    }

    /// Runs one optimizer step, validating when due. Returns `false` once
    /// training has stopped.
    pub fn step(&mut self) -> Result<bool> {
        if self.finished.is_some() {
            return Ok(false);
        }
        if self.epoch >= self.cfg.max_epochs {
            if self.since_validation > 0 || self.history.is_empty() {
                self.validate()?;
            }
            self.finished.get_or_insert(StopReason::MaxEpochs);
            return Ok(false);
        }
        let order = self.epoch_order();
        let start = self.batch * self.cfg.batch_size;
        let end = (start + self.cfg.batch_size).min(order.len());
        let batch: Vec<Example> = order[start..end].iter().map(|&k| self.train[k].clone()).collect();
        let (losses, grads) = loss_and_gradient(&self.model, &batch, LossWeights::ALL)?;
        if !losses.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                step: self.step,
                epoch: self.epoch,
                loss: losses.total,
            });
        }
        let norm = self.optimizer.update(self.model.params_mut(), &grads);
        debug!("step {} loss {:.5} grad norm {:.4}", self.step, losses.total, norm);
        self.step += 1;
        self.since_validation += 1;
        self.batch += 1;
        if self.batch == self.batches_per_epoch() {
            self.batch = 0;
            self.epoch += 1;
        }
        if self.step.is_multiple_of(self.cfg.validation_frequency) {
            self.validate()?;
        }
        Ok(self.finished.is_none())
    }

    /// Steps until stopped, or until `max_steps` more steps have run.
    pub fn run(&mut self, max_steps: Option<usize>) -> Result<()> {
        let mut taken = 0;
        while max_steps.is_none_or(|m| taken < m) && self.step()? {
            taken += 1;
        }
        Ok(())
    }

    /// The best validated model (carrying its threshold) and the report.
    pub fn finish(mut self) -> Result<(NeuralEditModel, TrainReport)> {
        self.run(None)?;
        let stop_reason = self.finished.expect("run returns only once finished");
        let best = self.best.expect("at least one validation ran");
        let model = self.best_model.expect("best model recorded with best index");
        Ok((
            model,
            TrainReport {
                history: self.history,
                best,
                stop_reason,
                steps: self.step,
                epochs: self.epoch,
            },
        ))
    }
}

pub fn train(
    model: NeuralEditModel,
    train: &[Example],
    val: &[Example],
    cfg: TrainConfig,
) -> Result<(NeuralEditModel, TrainReport)> {
    Trainer::new(model, train, val, cfg)?.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strings::Token;

    fn tok(s: &str) -> Token {
        Token::new(s).unwrap()
    }

    #[test]
    fn calibration_example() {
        let (tau, f1) = calibrate_threshold(&[(0.9, true), (0.8, false), (0.7, true)]).unwrap();
        assert!((f1 - 0.8).abs() < 1e-12);
        assert!(tau <= 0.7);
        assert_eq!(tau, 0.0);
    }

    #[test]
    fn calibration_separated_and_all_positive() {
        let (tau, f1) = calibrate_threshold(&[(0.9, true), (0.2, false), (0.8, true)]).unwrap();
        assert_eq!(f1, 1.0);
        assert_eq!(tau, 0.5);
        let (tau, f1) = calibrate_threshold(&[(0.3, true), (0.6, true)]).unwrap();
        assert_eq!((tau, f1), (0.0, 1.0));
        assert!(matches!(calibrate_threshold(&[(0.3, false)]), Err(Error::NoPositives(1))));
    }

    #[test]
    fn config_defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.validation_frequency, c.patience), (512, 50, 10));
        assert_eq!((c.d_emb, c.layers, c.max_epochs), (256, 2, 100));
        assert_eq!(c.learning_rate, 1e-3);
        assert!(TrainConfig { batch_size: 0, ..c }.validate().is_err());
    }

    fn toy() -> (NeuralEditModel, Vec<Example>, Vec<Example>) {
        let alphabet = Alphabet::from_chars("abcdotx".chars());
        let model = NeuralEditModel::new(alphabet, ModelConfig::new(4, 1), 3).unwrap();
        let train = vec![
            Example::new(tok("cxt"), tok("cat"), true),
            Example::new(tok("dxg"), tok("dog"), true),
            Example::new(tok("cxt"), tok("dog"), false),
        ];
        let val = vec![
            Example::new(tok("bxd"), tok("bad"), true),
            Example::new(tok("bxd"), tok("cot"), false),
        ];
        (model, train, val)
    }

    #[test]
    fn frozen_optimizer_stops_after_two_validations() {
        let (model, train, val) = toy();
        let cfg = TrainConfig {
            batch_size: 2,
            validation_frequency: 1,
            patience: 1,
            learning_rate: 0.0,
            d_emb: 4,
            layers: 1,
            ..TrainConfig::default()
        };
        let (_, report) = train_fn(model, &train, &val, cfg);
        assert_eq!(report.history.len(), 2);
        assert_eq!(report.stop_reason, StopReason::Patience);
        assert_eq!(report.best, 0);
    }

    fn train_fn(model: NeuralEditModel, t: &[Example], v: &[Example], cfg: TrainConfig) -> (NeuralEditModel, TrainReport) {
        train(model, t, v, cfg).unwrap()
    }

    #[test]
    fn max_epochs_forces_final_validation() {
        let (model, train, val) = toy();
        let cfg = TrainConfig {
            batch_size: 2,
            validation_frequency: 1000,
            max_epochs: 2,
            d_emb: 4,
            layers: 1,
            ..TrainConfig::default()
        };
        let (model, report) = train_fn(model, &train, &val, cfg);
        assert_eq!(report.stop_reason, StopReason::MaxEpochs);
        assert_eq!(report.steps, 4);
        assert_eq!(report.history.len(), 1);
        assert_eq!(model.threshold(), report.best_record().threshold);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (model, train, val) = toy();
        let cfg = TrainConfig {
            batch_size: 2,
            validation_frequency: 2,
            patience: 3,
            max_epochs: 6,
            learning_rate: 0.01,
            d_emb: 4,
            layers: 1,
            ..TrainConfig::default()
        };
        let (m1, r1) = train_fn(model.clone(), &train, &val, cfg);
        let mut t = Trainer::new(model, &train, &val, cfg).unwrap();
        t.run(Some(5)).unwrap();
        let json = t.checkpoint().to_json();
        let resumed = Trainer::resume(Checkpoint::from_json(&json).unwrap(), &train, &val).unwrap();
        let (m2, r2) = resumed.finish().unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
    }
}
