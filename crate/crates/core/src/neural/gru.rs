//! Stacked bidirectional GRU encoder with backpropagation through time.
//!
//! One step, with gate rows ordered reset/update/candidate:
//!
//! ```text
//! r  = sigmoid(Wx_r x + bx_r + Wh_r h + bh_r)
//! z  = sigmoid(Wx_z x + bx_z + Wh_z h + bh_z)
//! n  = tanh(Wx_n x + bx_n + r * (Wh_n h + bh_n))
//! h' = (1 - z) * n + z * h
//! ```

use super::linalg::{add_outer, matvec, matvec_t_add, sigmoid};
use super::params::{GruOffsets, Layout};

struct Step {
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `Wh_n h + bh_n`, needed for the reset-gate gradient.
    hn: Vec<f64>,
}

/// Activations of one direction over a sequence, in time order.
struct DirectionTrace {
    steps: Vec<Step>,
    outputs: Vec<Vec<f64>>,
}

fn run_direction(params: &[f64], off: &GruOffsets, inputs: &[Vec<f64>], reverse: bool) -> DirectionTrace {
    let h = off.hidden;
    let t_len = inputs.len();
    let wx = &params[off.wx..off.wx + 3 * h * off.input];
    let wh = &params[off.wh..off.wh + 3 * h * h];
    let bx = &params[off.bx..off.bx + 3 * h];
    let bh = &params[off.bh..off.bh + 3 * h];

    let mut steps: Vec<Option<Step>> = (0..t_len).map(|_| None).collect();
    let mut outputs = vec![Vec::new(); t_len];
    let mut state = vec![0.0; h];
    let mut gx = vec![0.0; 3 * h];
    let mut gh = vec![0.0; 3 * h];
    for k in 0..t_len {
        let t = if reverse { t_len - 1 - k } else { k };
        matvec(wx, 3 * h, off.input, &inputs[t], &mut gx);
        matvec(wh, 3 * h, h, &state, &mut gh);
        let mut r = vec![0.0; h];
        let mut z = vec![0.0; h];
        let mut n = vec![0.0; h];
        let mut hn = vec![0.0; h];
        let mut next = vec![0.0; h];
        for u in 0..h {
            r[u] = sigmoid(gx[u] + bx[u] + gh[u] + bh[u]);
            z[u] = sigmoid(gx[h + u] + bx[h + u] + gh[h + u] + bh[h + u]);
            hn[u] = gh[2 * h + u] + bh[2 * h + u];
            n[u] = (gx[2 * h + u] + bx[2 * h + u] + r[u] * hn[u]).tanh();
            next[u] = (1.0 - z[u]) * n[u] + z[u] * state[u];
        }
        let h_prev = std::mem::replace(&mut state, next);
        outputs[t] = state.clone();
        steps[t] = Some(Step { h_prev, r, z, n, hn });
    }
    DirectionTrace {
        steps: steps.into_iter().map(|s| s.expect("every step visited")).collect(),
        outputs,
    }
}

/// Backpropagates `d_out` (gradient w.r.t. each step's output) through one
/// direction, accumulating parameter gradients into `grads` and returning
/// the gradient w.r.t. each input vector.
fn backprop_direction(
    params: &[f64],
    grads: &mut [f64],
    off: &GruOffsets,
    inputs: &[Vec<f64>],
    trace: &DirectionTrace,
    d_out: &[Vec<f64>],
    reverse: bool,
) -> Vec<Vec<f64>> {
    let h = off.hidden;
    let t_len = inputs.len();
    let mut d_inputs = vec![vec![0.0; off.input]; t_len];
    let mut d_state = vec![0.0; h];
    let mut dgx = vec![0.0; 3 * h];
    let mut dgh = vec![0.0; 3 * h];
    for k in (0..t_len).rev() {
        let t = if reverse { t_len - 1 - k } else { k };
        let s = &trace.steps[t];
        let mut d_prev = vec![0.0; h];
        for u in 0..h {
            let dh = d_state[u] + d_out[t][u];
            let dn = dh * (1.0 - s.z[u]);
            let dz = dh * (s.h_prev[u] - s.n[u]);
            d_prev[u] = dh * s.z[u];
            let dn_pre = dn * (1.0 - s.n[u] * s.n[u]);
            let dr = dn_pre * s.hn[u];
            let dr_pre = dr * s.r[u] * (1.0 - s.r[u]);
            let dz_pre = dz * s.z[u] * (1.0 - s.z[u]);
            dgx[u] = dr_pre;
            dgx[h + u] = dz_pre;
            dgx[2 * h + u] = dn_pre;
            dgh[u] = dr_pre;
            dgh[h + u] = dz_pre;
            dgh[2 * h + u] = dn_pre * s.r[u];
        }
        add_outer(&mut grads[off.wx..off.wx + 3 * h * off.input], &dgx, &inputs[t]);
        add_outer(&mut grads[off.wh..off.wh + 3 * h * h], &dgh, &s.h_prev);
        for (g, d) in grads[off.bx..off.bx + 3 * h].iter_mut().zip(&dgx) {
            *g += d;
        }
        for (g, d) in grads[off.bh..off.bh + 3 * h].iter_mut().zip(&dgh) {
            *g += d;
        }
        matvec_t_add(
            &params[off.wx..off.wx + 3 * h * off.input],
            3 * h,
            off.input,
            &dgx,
            &mut d_inputs[t],
        );
        matvec_t_add(&params[off.wh..off.wh + 3 * h * h], 3 * h, h, &dgh, &mut d_prev);
        d_state = d_prev;
    }
    d_inputs
}

struct LayerTrace {
    inputs: Vec<Vec<f64>>,
    dirs: [DirectionTrace; 2],
}

/// Everything the backward pass needs from encoding one token.
pub struct EncoderTrace {
    symbols: Vec<usize>,
    layers: Vec<LayerTrace>,
    pub outputs: Vec<Vec<f64>>,
}

pub fn encode(layout: &Layout, params: &[f64], symbols: &[usize]) -> EncoderTrace {
    let d = layout.config.d_emb;
    let mut inputs: Vec<Vec<f64>> = symbols
        .iter()
        .map(|&s| params[layout.embed + s * d..layout.embed + (s + 1) * d].to_vec())
        .collect();
    let mut layers = Vec::with_capacity(layout.gru.len());
    for dirs in &layout.gru {
        let fwd = run_direction(params, &dirs[0], &inputs, false);
        let bwd = run_direction(params, &dirs[1], &inputs, true);
        let outputs: Vec<Vec<f64>> = fwd
            .outputs
            .iter()
            .zip(&bwd.outputs)
            .map(|(f, b)| f.iter().chain(b).copied().collect())
            .collect();
        layers.push(LayerTrace {
            inputs: std::mem::replace(&mut inputs, outputs),
            dirs: [fwd, bwd],
        });
    }
    EncoderTrace {
        symbols: symbols.to_vec(),
        layers,
        outputs: inputs,
    }
}

/// Accumulates encoder gradients given the gradient w.r.t. every output
/// vector.
pub fn backprop(layout: &Layout, params: &[f64], grads: &mut [f64], trace: &EncoderTrace, d_outputs: Vec<Vec<f64>>) {
    let d = layout.config.d_emb;
    let h = layout.config.hidden();
    let mut d_layer = d_outputs;
    for (dirs, lt) in layout.gru.iter().zip(&trace.layers).rev() {
        let d_fwd: Vec<Vec<f64>> = d_layer.iter().map(|v| v[..h].to_vec()).collect();
        let d_bwd: Vec<Vec<f64>> = d_layer.iter().map(|v| v[h..].to_vec()).collect();
        let mut d_in = backprop_direction(params, grads, &dirs[0], &lt.inputs, &lt.dirs[0], &d_fwd, false);
        let d_in_b = backprop_direction(params, grads, &dirs[1], &lt.inputs, &lt.dirs[1], &d_bwd, true);
        for (a, b) in d_in.iter_mut().zip(&d_in_b) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        d_layer = d_in;
    }
    for (&s, dv) in trace.symbols.iter().zip(&d_layer) {
        for (g, x) in grads[layout.embed + s * d..layout.embed + (s + 1) * d].iter_mut().zip(dv) {
            *g += x;
        }
    }
}
