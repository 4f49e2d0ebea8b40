//! Row-major dense helpers.

/// `out = W x` for `W` of shape `[rows x cols]`.
#[inline]
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o = dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `out += W^T y`.
#[inline]
pub fn matvec_t_add(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for (r, &yr) in y.iter().enumerate().take(rows) {
        if yr == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += wv * yr;
        }
    }
}

/// `G += a b^T`.
#[inline]
pub fn add_outer(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    debug_assert_eq!(g.len(), a.len() * cols);
    for (r, &ar) in a.iter().enumerate() {
        if ar == 0.0 {
            continue;
        }
        for (gv, &bv) in g[r * cols..(r + 1) * cols].iter_mut().zip(b) {
            *gv += ar * bv;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
