//! Brute-force lattice oracles used by the test suites.
//!
//! Everything here walks explicit alignment paths and never touches the
//! alpha/beta recursions, so it can check them independently.

use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, Matrix};
use crate::TokenId;

use super::JointLogProbGrid;

/// Upper bound on `T + N` accepted by [`enumerate_paths`].
pub const MAX_PATH_LEN: usize = 14;

/// One complete alignment: `T + N` steps, `None` meaning blank.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AlignmentPath {
    pub steps: Vec<Option<TokenId>>,
}

impl AlignmentPath {
    /// The label sequence left after dropping blanks.
    pub fn labels(&self) -> Vec<TokenId> {
        self.steps.iter().flatten().copied().collect()
    }

    pub fn blank_count(&self) -> usize {
        self.steps.iter().filter(|s| s.is_none()).count()
    }

    /// Frame on which each label is emitted.
    pub fn emission_frames(&self) -> Vec<usize> {
        let mut t = 0;
        let mut out = Vec::new();
        for s in &self.steps {
            match s {
                Some(_) => out.push(t),
                None => t += 1,
            }
        }
        out
    }
}

/// All monotone alignments of `y` against `frames` frames. The last step is
/// always the terminal blank.
pub fn enumerate_paths(frames: usize, y: &[TokenId]) -> Result<Vec<AlignmentPath>> {
    let n = y.len();
    if frames == 0 {
        return Err(Error::input("enumeration needs at least one frame"));
    }
    if frames + n > MAX_PATH_LEN {
        return Err(Error::input(format!(
            "refusing to enumerate T+N = {} > {MAX_PATH_LEN}",
            frames + n
        )));
    }
    let mut out = Vec::new();
    let mut steps = Vec::with_capacity(frames + n);
    extend(frames - 1, 0, y, &mut steps, &mut out);
    Ok(out)
}

// `blanks_left` counts non-terminal blanks still to place.
fn extend(
    blanks_left: usize,
    emitted: usize,
    y: &[TokenId],
    steps: &mut Vec<Option<TokenId>>,
    out: &mut Vec<AlignmentPath>,
) {
    if blanks_left == 0 && emitted == y.len() {
        let mut full = steps.clone();
        full.push(None);
        out.push(AlignmentPath { steps: full });
        return;
    }
    if emitted < y.len() {
        steps.push(Some(y[emitted]));
        extend(blanks_left, emitted + 1, y, steps, out);
        steps.pop();
    }
    if blanks_left > 0 {
        steps.push(None);
        extend(blanks_left - 1, emitted, y, steps, out);
        steps.pop();
    }
}

/// Log-probability of a single path under the grid.
pub fn path_log_prob(grid: &JointLogProbGrid, path: &AlignmentPath) -> f64 {
    let (mut t, mut u) = (0usize, 0usize);
    let mut lp = 0.0;
    for step in &path.steps {
        match step {
            Some(k) => {
                lp += grid.log_prob(t, u, *k as usize);
                u += 1;
            }
            None => {
                lp += grid.log_prob(t, u, grid.blank());
                t += 1;
            }
        }
    }
    lp
}

/// `-log Σ_paths p(path)` by enumeration.
pub fn nll_by_enumeration(grid: &JointLogProbGrid, y: &[TokenId]) -> Result<f64> {
    let paths = enumerate_paths(grid.frames(), y)?;
    let lps: Vec<f64> = paths.iter().map(|p| path_log_prob(grid, p)).collect();
    Ok(-log_sum_exp(&lps))
}

/// `q_i(t)` as the normalized mass of paths emitting `y_i` on frame `t`.
pub fn posterior_by_enumeration(grid: &JointLogProbGrid, y: &[TokenId]) -> Result<Matrix<f64>> {
    let paths = enumerate_paths(grid.frames(), y)?;
    let lps: Vec<f64> = paths.iter().map(|p| path_log_prob(grid, p)).collect();
    let total = log_sum_exp(&lps);
    let mut q = Matrix::zeros(y.len(), grid.frames());
    for (path, lp) in paths.iter().zip(&lps) {
        let w = (lp - total).exp();
        for (i, t) in path.emission_frames().into_iter().enumerate() {
            q.set(i, t, q.get(i, t) + w);
        }
    }
    Ok(q)
}

/// `C(n, k)` in exact integer arithmetic.
pub fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_counts() {
        assert_eq!(enumerate_paths(1, &[3]).unwrap().len(), 1);
        assert_eq!(enumerate_paths(2, &[3]).unwrap().len(), 2);
        let paths = enumerate_paths(4, &[1, 2, 3]).unwrap();
        assert_eq!(paths.len() as u64, binomial(6, 3));
        assert_eq!(paths.len(), 20);
    }

    #[test]
    fn paths_are_distinct_and_valid() {
        let y = [0, 1, 0];
        let paths = enumerate_paths(3, &y).unwrap();
        let set: std::collections::HashSet<_> = paths.iter().cloned().collect();
        assert_eq!(set.len(), paths.len());
        for p in &paths {
            assert_eq!(p.steps.len(), 6);
            assert_eq!(p.blank_count(), 3);
            assert_eq!(p.labels(), y);
            assert_eq!(p.steps.last(), Some(&None));
        }
    }

    #[test]
    fn refuses_large_lattices() {
        assert!(enumerate_paths(10, &[0; 5]).is_err());
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(6, 3), 20);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(13, 6), 1716);
    }
}
