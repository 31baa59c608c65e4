use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Blob, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Heavy-ball momentum SGD.
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" | "momentum" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::config(format!("unknown optimizer {other:?} (expected sgd or adam)"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr: 0.02,
            momentum: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("momentum and beta2 must be in [0, 1)"));
        }
        if self.clip_norm.is_nan() || self.clip_norm < 0.0 {
            return Err(Error::config("clip_norm must be >= 0"));
        }
        Ok(())
    }
}

/// Moments in flat parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<f32>,
    pub second: Vec<f32>,
}

impl OptimizerState {
    pub fn new(num_params: usize) -> Self {
        Self {
            step: 0,
            first: vec![0.0; num_params],
            second: vec![0.0; num_params],
        }
    }

    /// Applies one update with the (batch-averaged) gradient.
    pub fn apply(&mut self, cfg: &OptimizerConfig, model: &mut Model<f32>, grads: &Model<f32>) {
        let mut p = model.flatten();
        let mut g = grads.flatten();
        assert_eq!(p.len(), self.first.len(), "optimizer state does not match the model");
        if cfg.clip_norm > 0.0 {
            let norm = g.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if norm > cfg.clip_norm {
                let s = (cfg.clip_norm / norm) as f32;
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
        self.step += 1;
        let lr = cfg.lr as f32;
        match cfg.kind {
            OptimizerKind::Sgd => {
                let mu = cfg.momentum as f32;
                for ((x, m), &gi) in p.iter_mut().zip(&mut self.first).zip(&g) {
                    *m = mu * *m + gi;
                    *x -= lr * *m;
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (cfg.momentum, cfg.beta2);
                let c1 = 1.0 - b1.powi(self.step as i32);
                let c2 = 1.0 - b2.powi(self.step as i32);
                for i in 0..p.len() {
                    let gi = g[i] as f64;
                    let m = b1 * self.first[i] as f64 + (1.0 - b1) * gi;
                    let v = b2 * self.second[i] as f64 + (1.0 - b2) * gi * gi;
                    self.first[i] = m as f32;
                    self.second[i] = v as f32;
                    p[i] -= (cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps)) as f32;
                }
            }
        }
        model.assign_flat(&p);
    }

    pub(crate) fn blobs(&self) -> Vec<Blob> {
        let n = self.first.len() as u32;
        vec![
            Blob {
                name: "optim.first".into(),
                dims: vec![n],
                data: self.first.clone(),
            },
            Blob {
                name: "optim.second".into(),
                dims: vec![n],
                data: self.second.clone(),
            },
            // split so counts beyond 2^24 stay exact
            Blob {
                name: "optim.step".into(),
                dims: vec![2],
                data: vec![(self.step >> 20) as f32, (self.step & 0xF_FFFF) as f32],
            },
        ]
    }

    pub(crate) fn from_blobs(find: impl Fn(&str) -> Option<Blob>, num_params: usize) -> Result<Self> {
        let get = |name: &str| {
            find(name).ok_or_else(|| Error::Consistency(format!("training state lacks {name}")))
        };
        let (first, second, step) = (get("optim.first")?, get("optim.second")?, get("optim.step")?);
        if first.data.len() != num_params || second.data.len() != num_params || step.data.len() != 2 {
            return Err(Error::Consistency("optimizer state does not match the model".into()));
        }
        Ok(Self {
            step: ((step.data[0] as u64) << 20) | step.data[1] as u64,
            first: first.data,
            second: second.data,
        })
    }
}
