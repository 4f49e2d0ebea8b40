use orthopair::neural::{
    batch_posteriors, em_loss_frozen, loss, loss_and_gradient, Example, LossWeights, ModelConfig, NeuralEditModel,
};
use orthopair::{Alphabet, Token};

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
/// Relative error is taken against max(|analytic|, |numeric|, FLOOR); the
/// floor sits above central-difference round-off (about 1e-16 * |loss| / step).
const FLOOR: f64 = 1e-5;

fn tok(s: &str) -> Token {
    Token::new(s).unwrap()
}

fn model() -> NeuralEditModel {
    let alphabet = Alphabet::from_chars("abcdot'".chars());
    let mut m = NeuralEditModel::new(alphabet, ModelConfig::new(8, 2), 17).unwrap();
    // move the match head off its initial values so every branch is exercised
    let g = m.layout().gain;
    let c = m.layout().bias;
    m.params_mut()[g] = 2.5;
    m.params_mut()[c] = 1.5;
    m
}

fn batch() -> Vec<Example> {
    vec![
        Example::new(tok("cat"), tok("ca't"), true),
        Example::new(tok("dob"), tok("cat"), false),
    ]
}

fn worst_relative_error(model: &NeuralEditModel, weights: LossWeights, objective: impl Fn(&NeuralEditModel) -> f64) -> (f64, usize) {
    let batch = batch();
    let (_, analytic) = loss_and_gradient(model, &batch, weights).unwrap();
    let mut worst = (0.0, 0);
    let mut probe = model.clone();
    for (k, &a) in analytic.iter().enumerate() {
        let orig = probe.params()[k];
        probe.params_mut()[k] = orig + STEP;
        let up = objective(&probe);
        probe.params_mut()[k] = orig - STEP;
        let down = objective(&probe);
        probe.params_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        if err > worst.0 {
            worst = (err, k);
        }
    }
    worst
}

#[test]
fn em_loss_gradient() {
    let m = model();
    let b = batch();
    let post = batch_posteriors(&m, &b).unwrap();
    let (err, k) = worst_relative_error(&m, LossWeights::EM, |p| em_loss_frozen(p, &b, &post).unwrap());
    assert!(err < TOLERANCE, "em: worst relative error {err:e} at parameter {k}");
}

#[test]
fn bce_loss_gradient() {
    let m = model();
    let b = batch();
    let (err, k) = worst_relative_error(&m, LossWeights::BCE, |p| loss(p, &b).unwrap().bce_loss);
    assert!(err < TOLERANCE, "bce: worst relative error {err:e} at parameter {k}");
}

#[test]
fn nonmatch_loss_gradient() {
    let m = model();
    let b = batch();
    let (err, k) = worst_relative_error(&m, LossWeights::NONMATCH, |p| loss(p, &b).unwrap().nonmatch_nll);
    assert!(err < TOLERANCE, "nonmatch: worst relative error {err:e} at parameter {k}");
}
