use crate::error::Result;
use crate::nn::{encode_acoustic, joint, Model};
use crate::tensor::{Matrix, Real};
use crate::TokenId;

/// Emission cap per frame in greedy search.
pub const DEFAULT_MAX_SYMBOLS: usize = 10;

/// Frame-synchronous scoring interface for greedy search.
pub trait StepScorer {
    type State: Clone;

    fn frames(&self) -> usize;
    fn blank(&self) -> usize;
    fn initial(&self) -> Self::State;
    fn advance(&self, state: &Self::State, token: TokenId) -> Self::State;
    fn log_probs(&self, t: usize, state: &Self::State) -> Result<Vec<f64>>;
}

/// Argmax at each step: blank moves to the next frame, a label is emitted
/// and fed back. At most `max_symbols` labels per frame.
pub fn greedy_search<S: StepScorer>(scorer: &S, max_symbols: usize) -> Result<Vec<TokenId>> {
    let mut out = Vec::new();
    let mut state = scorer.initial();
    for t in 0..scorer.frames() {
        for _ in 0..max_symbols {
            let lp = scorer.log_probs(t, &state)?;
            let mut best = 0;
            for k in 1..lp.len() {
                if lp[k] > lp[best] {
                    best = k;
                }
            }
            if best == scorer.blank() {
                break;
            }
            out.push(best as TokenId);
            state = scorer.advance(&state, best as TokenId);
        }
    }
    Ok(out)
}

struct ModelScorer<'a, T> {
    model: &'a Model<T>,
    phi: Matrix<T>,
}

impl<T: Real> StepScorer for ModelScorer<'_, T> {
    type State = Vec<T>;

    fn frames(&self) -> usize {
        self.phi.rows()
    }

    fn blank(&self) -> usize {
        self.model.config.blank()
    }

    fn initial(&self) -> Vec<T> {
        self.model.prediction.start.clone()
    }

    fn advance(&self, state: &Vec<T>, token: TokenId) -> Vec<T> {
        self.model.prediction.step(state, token)
    }

    fn log_probs(&self, t: usize, state: &Vec<T>) -> Result<Vec<f64>> {
        Ok(joint(self.phi.row(t), state, &self.model.joint)?
            .into_iter()
            .map(|v| v.to_f64())
            .collect())
    }
}

pub fn greedy_decode<T: Real>(model: &Model<T>, frames: &Matrix<T>, max_symbols: usize) -> Result<Vec<TokenId>> {
    let (phi, _) = encode_acoustic(frames, &model.encoder)?;
    greedy_search(&ModelScorer { model, phi }, max_symbols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;

    /// Scores a fixed table indexed by `(t, emitted so far)`.
    struct Table {
        frames: usize,
        classes: usize,
        best: Vec<Vec<usize>>,
    }

    impl StepScorer for Table {
        type State = usize;
        fn frames(&self) -> usize {
            self.frames
        }
        fn blank(&self) -> usize {
            self.classes - 1
        }
        fn initial(&self) -> usize {
            0
        }
        fn advance(&self, u: &usize, _: TokenId) -> usize {
            u + 1
        }
        fn log_probs(&self, t: usize, u: &usize) -> Result<Vec<f64>> {
            let mut v = vec![-5.0; self.classes];
            v[self.best[t].get(*u).copied().unwrap_or(self.classes - 1)] = -0.1;
            Ok(v)
        }
    }

    #[test]
    fn follows_a_known_path() {
        // path: t0 emits 2, blank; t1 blank; t2 emits 0, 1, blank
        let blank = 3;
        let best = vec![
            vec![2, blank],
            vec![blank, blank, blank],
            vec![blank, 0, 1, blank],
        ];
        let table = Table {
            frames: 3,
            classes: 4,
            best,
        };
        assert_eq!(greedy_search(&table, 10).unwrap(), [2, 0, 1]);
    }

    #[test]
    fn emission_cap_terminates() {
        let table = Table {
            frames: 2,
            classes: 3,
            best: vec![vec![0; 100], vec![1; 100]],
        };
        assert_eq!(greedy_search(&table, 3).unwrap(), [0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn all_blank_model_is_empty() {
        let cfg = ModelConfig::default();
        let mut m = Model::<f32>::init(&cfg, 1).unwrap();
        m.joint.w.fill(0.0);
        m.joint.w.set(cfg.blank(), 0, 1.0);
        m.joint.bias.fill(5.0);
        m.joint.a.fill(0.0);
        let frames = Matrix::from_vec(8, cfg.d_in, vec![0.3; 8 * cfg.d_in]);
        assert!(greedy_decode(&m, &frames, 10).unwrap().is_empty());
    }
}
