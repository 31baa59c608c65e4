//! The student transducer: acoustic encoder, causal prediction network and
//! multiplicative-integration joint network, with hand-written reverse-mode
//! gradients.
//!
//! Parameters are generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for gradient checks. A [`Model`] doubles as its own
//! gradient container: [`Model::zeros_like`] gives a zeroed copy with the same
//! parameter names and shapes.

mod checkpoint;
mod encoder;
mod joint;
mod prediction;

pub use checkpoint::{Blob, Checkpoint, TKDM_MAGIC, TKDM_VERSION};
pub use encoder::{encode_acoustic, EncoderCache, EncoderParams};
pub use joint::{joint, joint_grid, JointCache, JointParams};
pub use prediction::{encode_prefix, PredictionCache, PredictionParams};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::distill::RegressionParams;
use crate::error::{Error, Result};
use crate::lattice::JointLogProbGrid;
use crate::tensor::{Matrix, Real};
use crate::TokenId;

/// Architecture of the student. Desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Vocabulary size `|V|`, excluding the blank.
    pub vocab: usize,
    pub d_in: usize,
    /// Hidden widths of the encoder stack before the `d_trs` output layer.
    pub encoder_hidden: Vec<usize>,
    pub d_trs: usize,
    pub d_embed: usize,
    pub d_prd: usize,
    pub d_joint: usize,
    pub subsample: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab: 20,
            d_in: 16,
            encoder_hidden: vec![64],
            d_trs: 64,
            d_embed: 32,
            d_prd: 64,
            d_joint: 64,
            subsample: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab", self.vocab),
            ("d_in", self.d_in),
            ("d_trs", self.d_trs),
            ("d_embed", self.d_embed),
            ("d_prd", self.d_prd),
            ("d_joint", self.d_joint),
            ("subsample", self.subsample),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::config(format!("model.{name} must be positive")));
            }
        }
        if self.encoder_hidden.contains(&0) {
            return Err(Error::config("encoder hidden widths must be positive"));
        }
        Ok(())
    }

    /// Output classes of the joint network: `|V|` tokens plus blank.
    pub fn classes(&self) -> usize {
        self.vocab + 1
    }

    /// The blank is the last class.
    pub fn blank(&self) -> usize {
        self.vocab
    }

    pub fn canonical_string(&self) -> String {
        let hidden: Vec<String> = self.encoder_hidden.iter().map(|h| h.to_string()).collect();
        format!(
            "vocab={};d_in={};encoder_hidden=[{}];d_trs={};d_embed={};d_prd={};d_joint={};subsample={}",
            self.vocab,
            self.d_in,
            hidden.join(","),
            self.d_trs,
            self.d_embed,
            self.d_prd,
            self.d_joint,
            self.subsample
        )
    }

    /// SHA-256 of [`Self::canonical_string`], stored in checkpoints.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_string().as_bytes()).into()
    }

    /// Encoder output length for `raw_frames` input frames.
    pub fn output_frames(&self, raw_frames: usize) -> usize {
        raw_frames.div_ceil(self.subsample)
    }
}

/// Affine map `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Affine<T> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![T::ZERO; out_dim],
        }
    }

    pub fn init(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: init_matrix(out_dim, in_dim, in_dim, rng),
            bias: init_vec(out_dim, in_dim, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = self.weight.matvec(x);
        for (yi, &bi) in y.iter_mut().zip(&self.bias) {
            *yi += bi;
        }
        y
    }

    pub(crate) fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        f(
            &format!("{prefix}.weight"),
            &[self.weight.rows(), self.weight.cols()],
            self.weight.data(),
        );
        f(&format!("{prefix}.bias"), &[self.bias.len()], &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        f(&format!("{prefix}.weight"), self.weight.data_mut());
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

/// Uniform(−1/√fan_in, 1/√fan_in).
pub(crate) fn init_matrix<T: Real>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Matrix<T> {
    Matrix::from_vec(rows, cols, init_vec(rows * cols, fan_in, rng))
}

pub(crate) fn init_vec<T: Real>(len: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..len)
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect()
}

/// Full student: encoder, prediction network, joint network and the optional
/// regression head used for distillation.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub encoder: EncoderParams<T>,
    pub prediction: PredictionParams<T>,
    pub joint: JointParams<T>,
    pub regression: Option<RegressionParams<T>>,
}

impl<T: Real> Model<T> {
    /// Seeded initialization of every parameter (no regression head).
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            config: config.clone(),
            encoder: EncoderParams::init(config, &mut rng),
            prediction: PredictionParams::init(config, &mut rng),
            joint: JointParams::init(config, &mut rng),
            regression: None,
        })
    }

    /// Attaches a freshly initialized regression head mapping
    /// `d_trs + d_prd` onto `out_dim` teacher features.
    pub fn attach_regression(&mut self, out_dim: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.regression = Some(RegressionParams::init(
            self.config.d_trs + self.config.d_prd,
            out_dim,
            &mut rng,
        ));
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, data| data.iter_mut().for_each(|v| *v = T::ZERO));
        z
    }

    /// Visits every parameter tensor in a fixed order.
    pub fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.encoder.visit(f);
        self.prediction.visit(f);
        self.joint.visit(f);
        if let Some(r) = &self.regression {
            r.visit(f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        self.encoder.visit_mut(f);
        self.prediction.visit_mut(f);
        self.joint.visit_mut(f);
        if let Some(r) = &mut self.regression {
            r.visit_mut(f);
        }
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, d| n += d.len());
        n
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, _, d| out.extend_from_slice(d));
        out
    }

    /// Overwrites all parameters from a flat vector in visit order.
    pub fn assign_flat(&mut self, flat: &[T]) {
        let mut offset = 0;
        self.visit_mut(&mut |_, d| {
            d.copy_from_slice(&flat[offset..offset + d.len()]);
            offset += d.len();
        });
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    /// `self += alpha · other`; both must share the same parameter layout.
    pub fn add_scaled(&mut self, other: &Self, alpha: T) {
        let flat = other.flatten();
        let mut offset = 0;
        self.visit_mut(&mut |_, d| {
            let len = d.len();
            for (x, &g) in d.iter_mut().zip(&flat[offset..offset + len]) {
                *x += alpha * g;
            }
            offset += len;
        });
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, _, d| ok &= d.iter().all(|v| v.is_finite()));
        ok
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            encoder: self.encoder.cast(),
            prediction: self.prediction.cast(),
            joint: self.joint.cast(),
            regression: self.regression.as_ref().map(RegressionParams::cast),
        }
    }

    /// Runs encoder, prediction network and joint grid for one utterance.
    pub fn forward(&self, frames: &Matrix<T>, tokens: &[TokenId]) -> Result<Forward<T>> {
        let (phi, encoder) = encode_acoustic(frames, &self.encoder)?;
        let (states, prediction) = encode_prefix(tokens, &self.prediction)?;
        let (grid, joint) = joint_grid(&phi, &states, &self.joint)?;
        Ok(Forward {
            phi,
            states,
            grid,
            encoder,
            prediction,
            joint,
        })
    }

    /// Reverse-mode pass. `adjoint` carries the loss gradient with respect
    /// to the grid log-probabilities and, optionally, extra gradients on the
    /// encoder outputs and prediction states (from the distillation term).
    pub fn backward(&self, fwd: &Forward<T>, adjoint: &Adjoint<T>) -> Result<Self> {
        if adjoint.log_probs.len() != fwd.grid.values().len() {
            return Err(Error::contract("adjoint does not match the cached grid"));
        }
        let mut grads = self.zeros_like();
        let (mut d_phi, mut d_states) =
            self.joint
                .backward(&fwd.phi, &fwd.states, &fwd.grid, &fwd.joint, &adjoint.log_probs, &mut grads.joint);
        if let Some(extra) = &adjoint.phi {
            add_into(&mut d_phi, extra)?;
        }
        if let Some(extra) = &adjoint.states {
            add_into(&mut d_states, extra)?;
        }
        self.encoder
            .backward(&fwd.encoder, &d_phi, &mut grads.encoder);
        self.prediction
            .backward(&fwd.prediction, &d_states, &mut grads.prediction);
        Ok(grads)
    }
}

fn add_into<T: Real>(acc: &mut Matrix<T>, extra: &Matrix<T>) -> Result<()> {
    if acc.rows() != extra.rows() || acc.cols() != extra.cols() {
        return Err(Error::contract(format!(
            "adjoint shape {}x{} does not match activation {}x{}",
            extra.rows(),
            extra.cols(),
            acc.rows(),
            acc.cols()
        )));
    }
    for (a, &e) in acc.data_mut().iter_mut().zip(extra.data()) {
        *a += e;
    }
    Ok(())
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    /// Encoder outputs, `T × d_trs`.
    pub phi: Matrix<T>,
    /// Prediction states, `(N+1) × d_prd`; row `i` has seen `y_1..y_i`.
    pub states: Matrix<T>,
    pub grid: JointLogProbGrid,
    pub encoder: EncoderCache<T>,
    pub prediction: PredictionCache<T>,
    pub joint: JointCache<T>,
}

/// Loss gradients flowing into [`Model::backward`].
#[derive(Debug, Clone)]
pub struct Adjoint<T> {
    pub log_probs: Vec<f64>,
    pub phi: Option<Matrix<T>>,
    pub states: Option<Matrix<T>>,
}

impl<T: Real> Adjoint<T> {
    pub fn from_log_probs(log_probs: Vec<f64>) -> Self {
        Self {
            log_probs,
            phi: None,
            states: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig::default();
        let a = Model::<f32>::init(&cfg, 5).unwrap();
        let b = Model::<f32>::init(&cfg, 5).unwrap();
        let c = Model::<f32>::init(&cfg, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = 1.0 / (cfg.subsample as f32 * cfg.d_in as f32).sqrt();
        assert!(a.encoder.layers[0]
            .weight
            .data()
            .iter()
            .all(|w| w.abs() <= bound));
    }

    #[test]
    fn flatten_round_trip_and_names_unique() {
        let mut m = Model::<f64>::init(&ModelConfig::default(), 1).unwrap();
        m.attach_regression(10, 2);
        let flat = m.flatten();
        assert_eq!(flat.len(), m.num_params());
        let mut z = m.zeros_like();
        z.assign_flat(&flat);
        assert_eq!(z, m);
        let mut names = Vec::new();
        m.visit(&mut |n, _, _| names.push(n.to_string()));
        let set: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
    }

    #[test]
    fn zero_adjoint_gives_zero_gradients() {
        let cfg = ModelConfig {
            vocab: 4,
            d_in: 3,
            encoder_hidden: vec![5],
            d_trs: 4,
            d_embed: 3,
            d_prd: 4,
            d_joint: 5,
            subsample: 2,
        };
        let m = Model::<f64>::init(&cfg, 9).unwrap();
        let frames = Matrix::from_vec(5, 3, (0..15).map(|i| i as f64 * 0.1).collect());
        let fwd = m.forward(&frames, &[1, 2]).unwrap();
        let adj = Adjoint::from_log_probs(vec![0.0; fwd.grid.values().len()]);
        let g = m.backward(&fwd, &adj).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_digest_tracks_architecture() {
        let a = ModelConfig::default();
        let mut b = a.clone();
        b.d_joint = 32;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), ModelConfig::default().digest());
        assert_eq!(a.output_frames(10), 5);
        assert_eq!(a.output_frames(11), 6);
    }
}
