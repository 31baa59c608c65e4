use super::{expected_features, Distance};
use crate::error::{Error, Result};
use crate::lattice::{analyze, AlignmentPosterior};
use crate::nn::{Adjoint, Model};
use crate::tensor::{Matrix, Real};
use crate::TokenId;

/// Weighting of the distillation term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub distance: Distance,
    /// Divide the KD sum by `N`.
    pub normalize: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            distance: Distance::L1,
            normalize: false,
        }
    }
}

/// Fixed posterior and teacher target for one utterance.
#[derive(Debug, Clone, Copy)]
pub struct KdInputs<'a, T> {
    pub posterior: &'a AlignmentPosterior,
    pub target: &'a Matrix<T>,
}

#[derive(Debug, Clone)]
pub struct ObjectiveOutput<T> {
    pub asr: f64,
    /// Unweighted distillation loss (0 when distillation is off).
    pub kd: f64,
    pub combined: f64,
    pub grads: Model<T>,
    /// Posterior of the current model, from the same lattice pass.
    pub posterior: AlignmentPosterior,
}

/// `L_ASR + λ · L_KD` for one utterance and its gradient with respect to
/// every student parameter. The posterior in `kd` is treated as a constant.
pub fn utterance_objective<T: Real>(
    model: &Model<T>,
    frames: &Matrix<T>,
    tokens: &[TokenId],
    kd: Option<KdInputs<'_, T>>,
    config: &ObjectiveConfig,
) -> Result<ObjectiveOutput<T>> {
    if config.lambda < 0.0 || config.lambda.is_nan() {
        return Err(Error::config(format!(
            "distillation weight {} is negative",
            config.lambda
        )));
    }
    let fwd = model.forward(frames, tokens)?;
    let lattice = analyze(&fwd.grid, tokens)?;
    let mut adjoint = Adjoint::from_log_probs(lattice.grad);
    let mut kd_value = 0.0;
    let mut reg_grads = None;

    if let (Some(inputs), true) = (kd, config.lambda > 0.0) {
        let reg = model
            .regression
            .as_ref()
            .ok_or_else(|| Error::contract("distillation requested but model has no regression head"))?;
        let n = tokens.len();
        let q = &inputs.posterior.q;
        if q.rows() != n || q.cols() != fwd.phi.rows() {
            return Err(Error::Consistency(format!(
                "frozen posterior is {}x{}, utterance lattice is {n}x{}",
                q.rows(),
                q.cols(),
                fwd.phi.rows()
            )));
        }
        let target = inputs.target;
        if target.rows() != n || target.cols() != reg.out_dim() {
            return Err(Error::contract(format!(
                "teacher target is {}x{}, expected {n}x{}",
                target.rows(),
                target.cols(),
                reg.out_dim()
            )));
        }
        let phi_bar = expected_features(q, &fwd.phi)?;
        let d_trs = fwd.phi.cols();
        let scale = if config.normalize && n > 0 {
            config.lambda / n as f64
        } else {
            config.lambda
        };
        let scale_t = T::from_f64(scale);
        let mut d_phi_bar = Matrix::zeros(n, d_trs);
        let mut d_states = Matrix::zeros(fwd.states.rows(), fwd.states.cols());
        let mut g_reg = reg.clone();
        g_reg.visit_mut(&mut |_, d| d.iter_mut().for_each(|v| *v = T::ZERO));
        let mut x = Vec::with_capacity(reg.in_dim());
        let mut dx = vec![T::ZERO; reg.in_dim()];
        for i in 0..n {
            x.clear();
            x.extend_from_slice(phi_bar.row(i));
            x.extend_from_slice(fwd.states.row(i));
            let out = reg.0.apply(&x);
            kd_value += config.distance.eval(&out, target.row(i)).to_f64();
            let d_out: Vec<T> = config
                .distance
                .grad(&out, target.row(i))
                .into_iter()
                .map(|g| g * scale_t)
                .collect();
            g_reg.0.weight.add_outer(&d_out, &x);
            for (b, &g) in g_reg.0.bias.iter_mut().zip(&d_out) {
                *b += g;
            }
            dx.iter_mut().for_each(|v| *v = T::ZERO);
            reg.0.weight.matvec_t_acc(&d_out, &mut dx);
            d_phi_bar.row_mut(i).copy_from_slice(&dx[..d_trs]);
            for (s, &g) in d_states.row_mut(i).iter_mut().zip(&dx[d_trs..]) {
                *s += g;
            }
        }
        if config.normalize && n > 0 {
            kd_value /= n as f64;
        }
        // φ̄_i = Σ_t q_i(t) φ_t  ⇒  ∂L/∂φ_t = Σ_i q_i(t) ∂L/∂φ̄_i
        let mut d_phi = Matrix::zeros(fwd.phi.rows(), d_trs);
        for i in 0..n {
            for t in 0..fwd.phi.rows() {
                let w = q.get(i, t);
                if w != 0.0 {
                    crate::tensor::axpy(T::from_f64(w), d_phi_bar.row(i), d_phi.row_mut(t));
                }
            }
        }
        adjoint.phi = Some(d_phi);
        adjoint.states = Some(d_states);
        reg_grads = Some(g_reg);
    }

    let mut grads = model.backward(&fwd, &adjoint)?;
    if let Some(g) = reg_grads {
        grads.regression = Some(g);
    }
    let combined = super::combined_loss(lattice.nll, kd_value, config.lambda)?;
    Ok(ObjectiveOutput {
        asr: lattice.nll,
        kd: kd_value,
        combined,
        grads,
        posterior: lattice.posterior,
    })
}
