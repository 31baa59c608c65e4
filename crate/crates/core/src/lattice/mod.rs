//! Log-space dynamic programming over the transducer alignment lattice.
//!
//! Frames are indexed `0..T` and the emitted-token count `0..=N`. A label
//! transition stays on the current frame and advances `u`; a blank advances
//! `t`. The final blank at `(T-1, N)` terminates every alignment, so each
//! complete path has exactly `T` blanks and `N` labels.
//!
//! All recursions run in `f64` with a max-shifted log-add-exp. Unreachable
//! states hold `-inf` and contribute zero gradient.

mod alnq;
pub mod oracle;

pub use alnq::{read_alnq, write_alnq, PosteriorStore, ALNQ_MAGIC, ALNQ_VERSION};

use crate::error::{Error, Result};
use crate::tensor::{log_add_exp, log_sum_exp, Matrix};
use crate::TokenId;

/// Joint log-probabilities for one utterance, shape `T × (N+1) × classes`
/// where `classes = |V| + 1` includes the blank.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLogProbGrid {
    frames: usize,
    tokens: usize,
    classes: usize,
    blank: usize,
    values: Vec<f64>,
}

impl JointLogProbGrid {
    pub fn new(
        frames: usize,
        tokens: usize,
        classes: usize,
        blank: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(Error::input("lattice needs at least one frame"));
        }
        if classes < 2 || blank >= classes {
            return Err(Error::contract(format!(
                "blank index {blank} invalid for {classes} classes"
            )));
        }
        let expected = frames * (tokens + 1) * classes;
        if values.len() != expected {
            return Err(Error::contract(format!(
                "grid holds {} values, expected {frames}x{}x{classes} = {expected}",
                values.len(),
                tokens + 1
            )));
        }
        if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::input("grid contains NaN or +inf"));
        }
        Ok(Self {
            frames,
            tokens,
            classes,
            blank,
            values,
        })
    }

    /// Builds a grid from per-cell probability rows (not logs). Rows are
    /// ordered `(t, u)` with `u` fastest.
    pub fn from_probs(
        frames: usize,
        tokens: usize,
        blank: usize,
        cells: &[Vec<f64>],
    ) -> Result<Self> {
        let classes = cells.first().map_or(0, Vec::len);
        let values = cells
            .iter()
            .flat_map(|c| c.iter().map(|p| p.ln()))
            .collect();
        Self::new(frames, tokens, classes, blank, values)
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn blank(&self) -> usize {
        self.blank
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn index(&self, t: usize, u: usize, k: usize) -> usize {
        (t * (self.tokens + 1) + u) * self.classes + k
    }

    #[inline]
    pub fn log_prob(&self, t: usize, u: usize, k: usize) -> f64 {
        self.values[self.index(t, u, k)]
    }

    #[inline]
    pub fn cell(&self, t: usize, u: usize) -> &[f64] {
        let start = self.index(t, u, 0);
        &self.values[start..start + self.classes]
    }

    #[inline]
    fn blank_lp(&self, t: usize, u: usize) -> f64 {
        self.log_prob(t, u, self.blank)
    }

    /// Largest deviation of any cell's log-normalizer from zero.
    pub fn max_normalization_error(&self) -> f64 {
        (0..self.frames)
            .flat_map(|t| (0..=self.tokens).map(move |u| (t, u)))
            .map(|(t, u)| log_sum_exp(self.cell(t, u)).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_target(&self, y: &[TokenId]) -> Result<()> {
        if y.len() != self.tokens {
            return Err(Error::contract(format!(
                "grid built for N={} but target has {} tokens",
                self.tokens,
                y.len()
            )));
        }
        for &tok in y {
            let k = tok as usize;
            if k >= self.classes || k == self.blank {
                return Err(Error::contract(format!(
                    "target token {tok} is blank or outside {} classes",
                    self.classes
                )));
            }
        }
        Ok(())
    }
}

/// A `T × (N+1)` table of log-probabilities indexed by (frame, emitted count).
#[derive(Debug, Clone, PartialEq)]
pub struct LogTable {
    frames: usize,
    states: usize,
    values: Vec<f64>,
}

impl LogTable {
    fn filled(frames: usize, states: usize) -> Self {
        Self {
            frames,
            states,
            values: vec![f64::NEG_INFINITY; frames * states],
        }
    }

    #[inline]
    pub fn at(&self, t: usize, u: usize) -> f64 {
        self.values[t * self.states + u]
    }

    #[inline]
    fn set(&mut self, t: usize, u: usize, v: f64) {
        self.values[t * self.states + u] = v;
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn states(&self) -> usize {
        self.states
    }
}

/// Forward variables: `alpha(t, u)` is the log-probability of reaching
/// frame `t` having emitted `y_1..y_u`.
pub fn forward_alphas(grid: &JointLogProbGrid, y: &[TokenId]) -> Result<LogTable> {
    grid.check_target(y)?;
    let (frames, n) = (grid.frames, grid.tokens);
    let mut alpha = LogTable::filled(frames, n + 1);
    alpha.set(0, 0, 0.0);
    for t in 0..frames {
        for u in 0..=n {
            if t == 0 && u == 0 {
                continue;
            }
            let from_blank = if t > 0 {
                alpha.at(t - 1, u) + grid.blank_lp(t - 1, u)
            } else {
                f64::NEG_INFINITY
            };
            let from_label = if u > 0 {
                alpha.at(t, u - 1) + grid.log_prob(t, u - 1, y[u - 1] as usize)
            } else {
                f64::NEG_INFINITY
            };
            alpha.set(t, u, log_add_exp(from_blank, from_label));
        }
    }
    Ok(alpha)
}

/// Backward variables: `beta(t, u)` is the log-probability of completing
/// the alignment from state `(t, u)`, including the terminal blank.
pub fn backward_betas(grid: &JointLogProbGrid, y: &[TokenId]) -> Result<LogTable> {
    grid.check_target(y)?;
    let (frames, n) = (grid.frames, grid.tokens);
    let mut beta = LogTable::filled(frames, n + 1);
    beta.set(frames - 1, n, grid.blank_lp(frames - 1, n));
    for t in (0..frames).rev() {
        for u in (0..=n).rev() {
            if t == frames - 1 && u == n {
                continue;
            }
            let via_blank = if t + 1 < frames {
                beta.at(t + 1, u) + grid.blank_lp(t, u)
            } else {
                f64::NEG_INFINITY
            };
            let via_label = if u < n {
                beta.at(t, u + 1) + grid.log_prob(t, u, y[u] as usize)
            } else {
                f64::NEG_INFINITY
            };
            beta.set(t, u, log_add_exp(via_blank, via_label));
        }
    }
    Ok(beta)
}

/// Both halves of the lattice for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaBetaGrids {
    pub alpha: LogTable,
    pub beta: LogTable,
}

impl AlphaBetaGrids {
    pub fn compute(grid: &JointLogProbGrid, y: &[TokenId]) -> Result<Self> {
        Ok(Self {
            alpha: forward_alphas(grid, y)?,
            beta: backward_betas(grid, y)?,
        })
    }

    /// `log p(y|X)` read off the terminal alpha cell.
    pub fn total_from_alpha(&self, grid: &JointLogProbGrid) -> f64 {
        let (t, n) = (grid.frames - 1, grid.tokens);
        self.alpha.at(t, n) + grid.blank_lp(t, n)
    }

    /// `log p(y|X)` read off the initial beta cell.
    pub fn total_from_beta(&self) -> f64 {
        self.beta.at(0, 0)
    }
}

fn require_finite_total(total: f64) -> Result<f64> {
    if total == f64::NEG_INFINITY {
        Err(Error::DegenerateModel(
            "every alignment path has zero probability".into(),
        ))
    } else {
        Ok(total)
    }
}

/// Negative log-likelihood `-log p(y|X)`.
pub fn transducer_nll(grid: &JointLogProbGrid, y: &[TokenId]) -> Result<f64> {
    let alpha = forward_alphas(grid, y)?;
    let (t, n) = (grid.frames - 1, grid.tokens);
    let total = require_finite_total(alpha.at(t, n) + grid.blank_lp(t, n))?;
    Ok(-total)
}

/// Per-token alignment posterior `q_i(t)`: probability that `y_i` is emitted
/// while frame `t` is being consumed. Rows index tokens, columns frames.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPosterior {
    pub q: Matrix<f64>,
    pub frozen: bool,
}

impl AlignmentPosterior {
    pub fn tokens(&self) -> usize {
        self.q.rows()
    }

    pub fn frames(&self) -> usize {
        self.q.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.q.row(i)
    }

    /// Largest `|Σ_t q_i(t) − 1|` across rows.
    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.q.rows())
            .map(|i| (self.q.row(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

pub fn alignment_posterior(
    grids: &AlphaBetaGrids,
    grid: &JointLogProbGrid,
    y: &[TokenId],
) -> Result<AlignmentPosterior> {
    grid.check_target(y)?;
    if grids.alpha.frames != grid.frames || grids.alpha.states != grid.tokens + 1 {
        return Err(Error::contract("alpha/beta tables do not match the grid"));
    }
    let total = require_finite_total(grids.total_from_alpha(grid))?;
    let (frames, n) = (grid.frames, grid.tokens);
    let mut q = Matrix::zeros(n, frames);
    for i in 0..n {
        let row = q.row_mut(i);
        for (t, slot) in row.iter_mut().enumerate() {
            let lp = grids.alpha.at(t, i)
                + grid.log_prob(t, i, y[i] as usize)
                + grids.beta.at(t, i + 1)
                - total;
            *slot = lp.exp();
        }
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    Ok(AlignmentPosterior { q, frozen: false })
}

/// Gradient of the NLL with respect to every grid entry (before any
/// softmax). Entries never touched by a complete path are zero.
pub fn transducer_grad(grid: &JointLogProbGrid, y: &[TokenId]) -> Result<Vec<f64>> {
    let ab = AlphaBetaGrids::compute(grid, y)?;
    let total = require_finite_total(ab.total_from_alpha(grid))?;
    Ok(grad_from_tables(&ab, grid, y, total))
}

fn grad_from_tables(
    ab: &AlphaBetaGrids,
    grid: &JointLogProbGrid,
    y: &[TokenId],
    total: f64,
) -> Vec<f64> {
    let (frames, n) = (grid.frames, grid.tokens);
    let mut grad = vec![0.0; grid.values.len()];
    for t in 0..frames {
        for u in 0..=n {
            let a = ab.alpha.at(t, u);
            if a == f64::NEG_INFINITY {
                continue;
            }
            let after_blank = if t + 1 < frames {
                ab.beta.at(t + 1, u)
            } else if u == n {
                0.0
            } else {
                f64::NEG_INFINITY
            };
            let lp = a + grid.blank_lp(t, u) + after_blank - total;
            grad[grid.index(t, u, grid.blank)] = -lp.exp();
            if u < n {
                let k = y[u] as usize;
                let lp = a + grid.log_prob(t, u, k) + ab.beta.at(t, u + 1) - total;
                grad[grid.index(t, u, k)] = -lp.exp();
            }
        }
    }
    grad
}

/// Loss, grid gradient and alignment posterior from one alpha/beta pass.
#[derive(Debug, Clone)]
pub struct LatticeResult {
    pub nll: f64,
    pub grad: Vec<f64>,
    pub posterior: AlignmentPosterior,
}

pub fn analyze(grid: &JointLogProbGrid, y: &[TokenId]) -> Result<LatticeResult> {
    let ab = AlphaBetaGrids::compute(grid, y)?;
    let total = require_finite_total(ab.total_from_alpha(grid))?;
    let grad = grad_from_tables(&ab, grid, y, total);
    let posterior = alignment_posterior(&ab, grid, y)?;
    Ok(LatticeResult {
        nll: -total,
        grad,
        posterior,
    })
}

/// Chains a log-prob gradient through a per-cell log-softmax:
/// `∂/∂logit_k = g_k − softmax_k · Σ_j g_j`.
pub fn logits_grad(grid: &JointLogProbGrid, grad: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grad.len()];
    let c = grid.classes;
    for (cell, (lp, g)) in grid.values.chunks(c).zip(grad.chunks(c)).enumerate() {
        let gs: f64 = g.iter().sum();
        for k in 0..c {
            out[cell * c + k] = g[k] - lp[k].exp() * gs;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_grid(
        rng: &mut ChaCha8Rng,
        frames: usize,
        tokens: usize,
        classes: usize,
    ) -> JointLogProbGrid {
        let mut values = Vec::with_capacity(frames * (tokens + 1) * classes);
        for _ in 0..frames * (tokens + 1) {
            let logits: Vec<f64> = (0..classes).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lse = log_sum_exp(&logits);
            values.extend(logits.iter().map(|l| l - lse));
        }
        JointLogProbGrid::new(frames, tokens, classes, classes - 1, values).unwrap()
    }

    fn random_target(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<TokenId> {
        (0..n)
            .map(|_| rng.random_range(0..classes as u32 - 1))
            .collect()
    }

    #[test]
    fn single_frame_no_tokens() {
        let g = JointLogProbGrid::from_probs(1, 0, 1, &[vec![0.3, 0.7]]).unwrap();
        let nll = transducer_nll(&g, &[]).unwrap();
        assert!((nll - 0.356675).abs() < 1e-6);
        let beta = backward_betas(&g, &[]).unwrap();
        assert!((beta.at(0, 0) - 0.7f64.ln()).abs() < 1e-12);
        let alpha = forward_alphas(&g, &[]).unwrap();
        assert_eq!(alpha.at(0, 0), 0.0);
    }

    #[test]
    fn single_frame_single_token() {
        // cell (0,0): p(y1)=0.5, p(blank)=0.5; cell (0,1): p(blank)=0.8
        let g = JointLogProbGrid::from_probs(1, 1, 1, &[vec![0.5, 0.5], vec![0.2, 0.8]])
            .unwrap();
        let nll = transducer_nll(&g, &[0]).unwrap();
        assert!((nll - 0.916291).abs() < 1e-6);
        let beta = backward_betas(&g, &[0]).unwrap();
        assert!((beta.at(0, 0) - 0.4f64.ln()).abs() < 1e-12);
        let ab = AlphaBetaGrids::compute(&g, &[0]).unwrap();
        let post = alignment_posterior(&ab, &g, &[0]).unwrap();
        assert_eq!(post.q.data(), &[1.0]);
    }

    #[test]
    fn perfect_model_has_zero_loss() {
        // T=2, N=1 forced path: y1 at frame 0, then blank, blank.
        let cells = vec![
            vec![1.0, 0.0], // (0,0): emit y1
            vec![0.0, 1.0], // (0,1): blank
            vec![0.0, 1.0], // (1,0): unreachable by the gold path
            vec![0.0, 1.0], // (1,1): final blank
        ];
        let g = JointLogProbGrid::from_probs(2, 1, 1, &cells).unwrap();
        assert_eq!(transducer_nll(&g, &[0]).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_frames_split_posterior_evenly() {
        let cell = vec![0.3, 0.7];
        let g = JointLogProbGrid::from_probs(2, 1, 1, &vec![cell; 4]).unwrap();
        let ab = AlphaBetaGrids::compute(&g, &[0]).unwrap();
        let post = alignment_posterior(&ab, &g, &[0]).unwrap();
        assert!((post.q.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((post.q.get(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gradient_single_cell_is_minus_one_at_blank() {
        let g = JointLogProbGrid::from_probs(1, 0, 1, &[vec![0.3, 0.7]]).unwrap();
        let grad = transducer_grad(&g, &[]).unwrap();
        assert_eq!(grad, vec![0.0, -1.0]);
    }

    #[test]
    fn degenerate_grid_is_reported() {
        let g = JointLogProbGrid::from_probs(1, 0, 1, &[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            transducer_nll(&g, &[]),
            Err(Error::DegenerateModel(_))
        ));
    }

    #[test]
    fn dimension_errors() {
        assert!(matches!(
            JointLogProbGrid::new(0, 0, 2, 1, vec![]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            JointLogProbGrid::new(1, 1, 2, 1, vec![0.0; 3]),
            Err(Error::Contract(_))
        ));
        let g = JointLogProbGrid::from_probs(1, 1, 1, &[vec![0.5, 0.5], vec![0.2, 0.8]])
            .unwrap();
        assert!(matches!(forward_alphas(&g, &[]), Err(Error::Contract(_))));
        assert!(matches!(forward_alphas(&g, &[1]), Err(Error::Contract(_))));
    }

    #[test]
    fn alpha_beta_totals_agree_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let frames = rng.random_range(1..8);
            let n = rng.random_range(0..6);
            let classes = rng.random_range(2..6);
            let g = random_grid(&mut rng, frames, n, classes);
            let y = random_target(&mut rng, n, classes);
            let ab = AlphaBetaGrids::compute(&g, &y).unwrap();
            let a = ab.total_from_alpha(&g);
            let b = ab.total_from_beta();
            assert!((a - b).abs() < 1e-6, "alpha {a} beta {b}");
            for t in 0..frames {
                for u in 0..=n {
                    assert!(ab.alpha.at(t, u) + ab.beta.at(t, u) <= a + 1e-9);
                }
            }
        }
    }

    #[test]
    fn posterior_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let g = random_grid(&mut rng, 6, 4, 5);
            let y = random_target(&mut rng, 4, 5);
            let r = analyze(&g, &y).unwrap();
            assert!(r.posterior.max_row_sum_error() < 1e-6);
            assert!(r.posterior.q.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn logit_gradient_sums_to_zero_per_reachable_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_grid(&mut rng, 4, 3, 5);
        let y = random_target(&mut rng, 3, 5);
        let grad = transducer_grad(&g, &y).unwrap();
        let lg = logits_grad(&g, &grad);
        for cell in lg.chunks(5) {
            assert!(cell.iter().sum::<f64>().abs() < 1e-6);
        }
    }

    #[test]
    fn no_underflow_on_long_lattices() {
        // 400 frames of p(blank)=0.1: total ≈ e^-921 would underflow in
        // linear space.
        let frames = 400;
        let cells = vec![vec![0.9, 0.1]; frames];
        let g = JointLogProbGrid::from_probs(frames, 0, 1, &cells).unwrap();
        let nll = transducer_nll(&g, &[]).unwrap();
        assert!((nll - frames as f64 * 10f64.ln()).abs() < 1e-8);
    }
}
