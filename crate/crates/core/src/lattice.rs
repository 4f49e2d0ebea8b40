//! Probabilistic edit lattice over insert/delete/substitute moves.
//!
//! Cell `(i, j)` of an `(m+1) x (n+1)` lattice is reached by deleting
//! source character `i` from `(i-1, j)`, inserting target character `j`
//! from `(i, j-1)`, or substituting from `(i-1, j-1)`. Row 0 therefore only
//! admits inserts, column 0 only deletes, and `(0, 0)` is the start state.
//! All arithmetic is in log space.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EditOp {
    Delete,
    Insert,
    Substitute,
}

impl EditOp {
    pub const ALL: [EditOp; 3] = [EditOp::Delete, EditOp::Insert, EditOp::Substitute];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The cell a move into `(i, j)` starts from.
    pub fn predecessor(self, i: usize, j: usize) -> (usize, usize) {
        match self {
            EditOp::Delete => (i - 1, j),
            EditOp::Insert => (i, j - 1),
            EditOp::Substitute => (i - 1, j - 1),
        }
    }

    pub fn defined_at(self, i: usize, j: usize) -> bool {
        match self {
            EditOp::Delete => i >= 1,
            EditOp::Insert => j >= 1,
            EditOp::Substitute => i >= 1 && j >= 1,
        }
    }
}

/// Log-weights of the moves entering each cell.
///
/// Undefined moves (e.g. a substitution into row 0) hold `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostGrid {
    m: usize,
    n: usize,
    /// Indexed `[cell][op]` with cell = `i * (n + 1) + j`.
    logp: Vec<[f64; 3]>,
}

/// How strictly [`CostGrid::validate`] treats per-cell mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridMode {
    /// Every cell's defined moves sum to exactly 1.
    Normalized,
    /// Every cell's defined moves sum to at most 1.
    SubStochastic,
    /// Arbitrary finite log-scores.
    Scores,
}

impl CostGrid {
    pub fn new(m: usize, n: usize) -> Self {
        CostGrid {
            m,
            n,
            logp: vec![[f64::NEG_INFINITY; 3]; (m + 1) * (n + 1)],
        }
    }

    /// Builds a grid by calling `f(op, i, j)` for every defined move.
    pub fn from_fn(m: usize, n: usize, mut f: impl FnMut(EditOp, usize, usize) -> f64) -> Self {
        let mut grid = CostGrid::new(m, n);
        for i in 0..=m {
            for j in 0..=n {
                for op in EditOp::ALL {
                    if op.defined_at(i, j) {
                        grid.set(op, i, j, f(op, i, j));
                    }
                }
            }
        }
        grid
    }

    pub fn source_len(&self) -> usize {
        self.m
    }

    pub fn target_len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        i * (self.n + 1) + j
    }

    #[inline]
    pub fn get(&self, op: EditOp, i: usize, j: usize) -> f64 {
        self.logp[self.cell(i, j)][op.index()]
    }

    /// Sets the log-weight of a move. Writes to undefined moves are ignored.
    #[inline]
    pub fn set(&mut self, op: EditOp, i: usize, j: usize, logp: f64) {
        if op.defined_at(i, j) {
            let c = self.cell(i, j);
            self.logp[c][op.index()] = logp;
        }
    }

    pub fn cells(&self) -> &[[f64; 3]] {
        &self.logp
    }

    /// Linear-space mass of the defined moves entering `(i, j)`.
    pub fn cell_mass(&self, i: usize, j: usize) -> f64 {
        EditOp::ALL
            .iter()
            .filter(|op| op.defined_at(i, j))
            .map(|&op| self.get(op, i, j).exp())
            .sum()
    }

    /// Renormalizes each cell so its defined moves sum to one.
    pub fn renormalize_cells(&mut self) {
        for i in 0..=self.m {
            for j in 0..=self.n {
                if i == 0 && j == 0 {
                    continue;
                }
                let defined: Vec<EditOp> =
                    EditOp::ALL.into_iter().filter(|op| op.defined_at(i, j)).collect();
                let logps: Vec<f64> = defined.iter().map(|&op| self.get(op, i, j)).collect();
                let z = log_sum_exp(&logps);
                for op in defined {
                    let v = self.get(op, i, j) - z;
                    self.set(op, i, j, v);
                }
            }
        }
    }

    pub fn validate(&self, mode: GridMode) -> Result<()> {
        const TOL: f64 = 1e-9;
        for i in 0..=self.m {
            for j in 0..=self.n {
                for op in EditOp::ALL {
                    let v = self.get(op, i, j);
                    if !op.defined_at(i, j) {
                        if v != f64::NEG_INFINITY {
                            return Err(Error::InvalidGrid(format!(
                                "undefined {op:?} into ({i},{j}) carries weight {v}"
                            )));
                        }
                        continue;
                    }
                    if v.is_nan() || v == f64::INFINITY {
                        return Err(Error::InvalidGrid(format!(
                            "{op:?} into ({i},{j}) is {v}"
                        )));
                    }
                    if mode != GridMode::Scores && v > TOL {
                        return Err(Error::InvalidGrid(format!(
                            "{op:?} into ({i},{j}) has log-probability {v} > 0"
                        )));
                    }
                }
                if i == 0 && j == 0 {
                    continue;
                }
                let mass = self.cell_mass(i, j);
                match mode {
                    GridMode::Normalized if (mass - 1.0).abs() > TOL => {
                        return Err(Error::InvalidGrid(format!(
                            "cell ({i},{j}) mass {mass} is not 1"
                        )))
                    }
                    GridMode::SubStochastic if mass > 1.0 + TOL => {
                        return Err(Error::InvalidGrid(format!(
                            "cell ({i},{j}) mass {mass} exceeds 1"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// Numerically stable `log(sum(exp(x)))`; `-inf` for an empty or all
/// `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

#[inline]
fn lse3(a: f64, b: f64, c: f64) -> f64 {
    let max = a.max(b).max(c);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + ((a - max).exp() + (b - max).exp() + (c - max).exp()).ln()
}

/// Forward/backward masses and operation posteriors of one lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeResult {
    m: usize,
    n: usize,
    pub log_alpha: Vec<f64>,
    pub log_beta: Vec<f64>,
    pub loglik: f64,
    /// Expected number of times each move into each cell is taken.
    pub posteriors: Vec<[f64; 3]>,
}

impl LatticeResult {
    pub fn cell(&self, i: usize, j: usize) -> usize {
        i * (self.n + 1) + j
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn alpha(&self, i: usize, j: usize) -> f64 {
        self.log_alpha[self.cell(i, j)]
    }

    pub fn beta(&self, i: usize, j: usize) -> f64 {
        self.log_beta[self.cell(i, j)]
    }

    pub fn posterior(&self, op: EditOp, i: usize, j: usize) -> f64 {
        self.posteriors[self.cell(i, j)][op.index()]
    }

    /// Expected number of moves on a path, i.e. the total posterior mass.
    pub fn expected_path_length(&self) -> f64 {
        self.posteriors.iter().flat_map(|p| p.iter()).sum()
    }
}

fn forward(grid: &CostGrid) -> Vec<f64> {
    let (m, n) = (grid.m, grid.n);
    let w = n + 1;
    let mut alpha = vec![f64::NEG_INFINITY; (m + 1) * w];
    alpha[0] = 0.0;
    for i in 0..=m {
        for j in 0..=n {
            if i == 0 && j == 0 {
                continue;
            }
            let lp = &grid.logp[i * w + j];
            let del = if i > 0 { alpha[(i - 1) * w + j] + lp[0] } else { f64::NEG_INFINITY };
            let ins = if j > 0 { alpha[i * w + j - 1] + lp[1] } else { f64::NEG_INFINITY };
            let sub = if i > 0 && j > 0 {
                alpha[(i - 1) * w + j - 1] + lp[2]
            } else {
                f64::NEG_INFINITY
            };
            alpha[i * w + j] = lse3(del, ins, sub);
        }
    }
    alpha
}

/// Total log-mass of all paths from `(0,0)` to `(m,n)`, without the
/// backward pass.
pub fn log_likelihood(grid: &CostGrid) -> Result<f64> {
    let alpha = forward(grid);
    let ll = alpha[alpha.len() - 1];
    if ll == f64::NEG_INFINITY || ll.is_nan() {
        return Err(Error::DegenerateLattice { m: grid.m, n: grid.n });
    }
    Ok(ll)
}

/// Runs the forward and backward recursions and derives per-move
/// posteriors `alpha(prev) * p(move) * beta(cell) / alpha(m, n)`.
pub fn forward_backward(grid: &CostGrid) -> Result<LatticeResult> {
    let (m, n) = (grid.m, grid.n);
    let w = n + 1;
    let alpha = forward(grid);
    let loglik = alpha[(m + 1) * w - 1];
    if loglik == f64::NEG_INFINITY || loglik.is_nan() {
        return Err(Error::DegenerateLattice { m, n });
    }

    let mut beta = vec![f64::NEG_INFINITY; (m + 1) * w];
    beta[m * w + n] = 0.0;
    for i in (0..=m).rev() {
        for j in (0..=n).rev() {
            if i == m && j == n {
                continue;
            }
            let del = if i < m {
                grid.logp[(i + 1) * w + j][0] + beta[(i + 1) * w + j]
            } else {
                f64::NEG_INFINITY
            };
            let ins = if j < n {
                grid.logp[i * w + j + 1][1] + beta[i * w + j + 1]
            } else {
                f64::NEG_INFINITY
            };
            let sub = if i < m && j < n {
                grid.logp[(i + 1) * w + j + 1][2] + beta[(i + 1) * w + j + 1]
            } else {
                f64::NEG_INFINITY
            };
            beta[i * w + j] = lse3(del, ins, sub);
        }
    }

    let mut posteriors = vec![[0.0; 3]; (m + 1) * w];
    for i in 0..=m {
        for j in 0..=n {
            let c = i * w + j;
            if beta[c] == f64::NEG_INFINITY {
                continue;
            }
            for op in EditOp::ALL {
                if !op.defined_at(i, j) {
                    continue;
                }
                let (pi, pj) = op.predecessor(i, j);
                let lg = alpha[pi * w + pj] + grid.logp[c][op.index()] + beta[c] - loglik;
                if lg > f64::NEG_INFINITY {
                    posteriors[c][op.index()] = lg.exp();
                }
            }
        }
    }

    Ok(LatticeResult {
        m,
        n,
        log_alpha: alpha,
        log_beta: beta,
        loglik,
        posteriors,
    })
}

/// A single move on a best path: the move enters cell `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathStep {
    pub i: usize,
    pub j: usize,
    pub op: EditOp,
}

/// Highest-weight path through the lattice and its log-weight.
///
/// Ties prefer substitution, then deletion, then insertion.
pub fn viterbi(grid: &CostGrid) -> Result<(Vec<PathStep>, f64)> {
    let (m, n) = (grid.m, grid.n);
    let w = n + 1;
    let mut best = vec![f64::NEG_INFINITY; (m + 1) * w];
    let mut back: Vec<Option<EditOp>> = vec![None; (m + 1) * w];
    best[0] = 0.0;
    const PRIORITY: [EditOp; 3] = [EditOp::Substitute, EditOp::Delete, EditOp::Insert];
    for i in 0..=m {
        for j in 0..=n {
            if i == 0 && j == 0 {
                continue;
            }
            let c = i * w + j;
            for op in PRIORITY {
                if !op.defined_at(i, j) {
                    continue;
                }
                let (pi, pj) = op.predecessor(i, j);
                let v = best[pi * w + pj] + grid.logp[c][op.index()];
                if v > best[c] {
                    best[c] = v;
                    back[c] = Some(op);
                }
            }
        }
    }
    let best_logp = best[m * w + n];
    if best_logp == f64::NEG_INFINITY || best_logp.is_nan() {
        return Err(Error::DegenerateLattice { m, n });
    }
    let mut path = Vec::with_capacity(m + n);
    let (mut i, mut j) = (m, n);
    while let Some(op) = back[i * w + j] {
        path.push(PathStep { i, j, op });
        (i, j) = op.predecessor(i, j);
    }
    path.reverse();
    Ok((path, best_logp))
}
