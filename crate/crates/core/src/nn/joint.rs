use rand_chacha::ChaCha8Rng;

use super::{init_matrix, init_vec, ModelConfig};
use crate::error::{Error, Result};
use crate::lattice::JointLogProbGrid;
use crate::tensor::{log_softmax_in_place, Matrix, Real};

/// Multiplicative-integration joint:
/// `log_softmax(W · tanh((A φ) ⊙ (B ψ) + bias))`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointParams<T> {
    pub a: Matrix<T>,
    pub b: Matrix<T>,
    pub w: Matrix<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct JointCache<T> {
    a_proj: Matrix<T>,
    b_proj: Matrix<T>,
    /// `tanh` activations per lattice cell, `(T·(N+1)) × d_joint`.
    hidden: Matrix<T>,
}

impl<T: Real> JointParams<T> {
    pub fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let dj = config.d_joint;
        Self {
            a: init_matrix(dj, config.d_trs, config.d_trs, rng),
            b: init_matrix(dj, config.d_prd, config.d_prd, rng),
            w: init_matrix(config.classes(), dj, dj, rng),
            bias: init_vec(dj, dj, rng),
        }
    }

    pub fn classes(&self) -> usize {
        self.w.rows()
    }

    pub(crate) fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        for (name, m) in [("joint.a", &self.a), ("joint.b", &self.b), ("joint.w", &self.w)] {
            f(name, &[m.rows(), m.cols()], m.data());
        }
        f("joint.bias", &[self.bias.len()], &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        f("joint.a", self.a.data_mut());
        f("joint.b", self.b.data_mut());
        f("joint.w", self.w.data_mut());
        f("joint.bias", &mut self.bias);
    }

    pub(crate) fn cast<U: Real>(&self) -> JointParams<U> {
        JointParams {
            a: self.a.cast(),
            b: self.b.cast(),
            w: self.w.cast(),
            bias: self.bias.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    fn hidden_from_projections(&self, ap: &[T], bp: &[T], out: &mut [T]) {
        for j in 0..out.len() {
            out[j] = (ap[j] * bp[j] + self.bias[j]).tanh();
        }
    }

    /// Returns `(∂L/∂φ, ∂L/∂states)` and accumulates parameter gradients.
    pub(crate) fn backward(
        &self,
        phi: &Matrix<T>,
        states: &Matrix<T>,
        grid: &JointLogProbGrid,
        cache: &JointCache<T>,
        d_log_probs: &[f64],
        grads: &mut Self,
    ) -> (Matrix<T>, Matrix<T>) {
        let (frames, cells_u) = (phi.rows(), states.rows());
        let classes = self.classes();
        let dj = self.bias.len();
        let mut da = Matrix::zeros(frames, dj);
        let mut db = Matrix::zeros(cells_u, dj);
        let mut d_logits = vec![T::ZERO; classes];
        let mut dh = vec![T::ZERO; dj];
        for t in 0..frames {
            for u in 0..cells_u {
                let cell = t * cells_u + u;
                let g = &d_log_probs[cell * classes..(cell + 1) * classes];
                if g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let gsum: f64 = g.iter().sum();
                let lp = grid.cell(t, u);
                for k in 0..classes {
                    d_logits[k] = T::from_f64(g[k] - lp[k].exp() * gsum);
                }
                let h = cache.hidden.row(cell);
                grads.w.add_outer(&d_logits, h);
                dh.iter_mut().for_each(|v| *v = T::ZERO);
                self.w.matvec_t_acc(&d_logits, &mut dh);
                let (ap, bp) = (cache.a_proj.row(t), cache.b_proj.row(u));
                let mut dz = vec![T::ZERO; dj];
                for j in 0..dj {
                    dz[j] = dh[j] * (T::ONE - h[j] * h[j]);
                    grads.bias[j] += dz[j];
                }
                let da_row = da.row_mut(t);
                for j in 0..dj {
                    da_row[j] += dz[j] * bp[j];
                }
                let db_row = db.row_mut(u);
                for j in 0..dj {
                    db_row[j] += dz[j] * ap[j];
                }
            }
        }
        let mut d_phi = Matrix::zeros(frames, phi.cols());
        for t in 0..frames {
            grads.a.add_outer(da.row(t), phi.row(t));
            self.a.matvec_t_acc(da.row(t), d_phi.row_mut(t));
        }
        let mut d_states = Matrix::zeros(cells_u, states.cols());
        for u in 0..cells_u {
            grads.b.add_outer(db.row(u), states.row(u));
            self.b.matvec_t_acc(db.row(u), d_states.row_mut(u));
        }
        (d_phi, d_states)
    }
}

fn check_dims<T: Real>(d_trs: usize, d_prd: usize, params: &JointParams<T>) -> Result<()> {
    if d_trs != params.a.cols() || d_prd != params.b.cols() {
        return Err(Error::contract(format!(
            "joint expects ({}, {}) inputs, got ({d_trs}, {d_prd})",
            params.a.cols(),
            params.b.cols()
        )));
    }
    Ok(())
}

/// Log-distribution over `V ∪ {blank}` for a single (frame, state) pair.
pub fn joint<T: Real>(phi_t: &[T], psi_u: &[T], params: &JointParams<T>) -> Result<Vec<T>> {
    check_dims(phi_t.len(), psi_u.len(), params)?;
    let ap = params.a.matvec(phi_t);
    let bp = params.b.matvec(psi_u);
    let mut h = vec![T::ZERO; ap.len()];
    params.hidden_from_projections(&ap, &bp, &mut h);
    let mut logits = params.w.matvec(&h);
    log_softmax_in_place(&mut logits);
    Ok(logits)
}

/// Evaluates the joint on every lattice cell. The blank is the last class.
pub fn joint_grid<T: Real>(
    phi: &Matrix<T>,
    states: &Matrix<T>,
    params: &JointParams<T>,
) -> Result<(JointLogProbGrid, JointCache<T>)> {
    check_dims(phi.cols(), states.cols(), params)?;
    let (frames, cells_u) = (phi.rows(), states.rows());
    let dj = params.bias.len();
    let classes = params.classes();
    let mut a_proj = Matrix::zeros(frames, dj);
    for t in 0..frames {
        params.a.matvec_into(phi.row(t), a_proj.row_mut(t));
    }
    let mut b_proj = Matrix::zeros(cells_u, dj);
    for u in 0..cells_u {
        params.b.matvec_into(states.row(u), b_proj.row_mut(u));
    }
    let mut hidden = Matrix::zeros(frames * cells_u, dj);
    let mut values = Vec::with_capacity(frames * cells_u * classes);
    let mut logits = vec![T::ZERO; classes];
    for t in 0..frames {
        for u in 0..cells_u {
            let h = hidden.row_mut(t * cells_u + u);
            params.hidden_from_projections(a_proj.row(t), b_proj.row(u), h);
            params.w.matvec_into(h, &mut logits);
            log_softmax_in_place(&mut logits);
            values.extend(logits.iter().map(|v| v.to_f64()));
        }
    }
    let grid = JointLogProbGrid::new(frames, cells_u - 1, classes, classes - 1, values)?;
    Ok((
        grid,
        JointCache {
            a_proj,
            b_proj,
            hidden,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::log_sum_exp;
    use rand::SeedableRng;

    fn params(vocab: usize) -> JointParams<f64> {
        let cfg = ModelConfig {
            vocab,
            d_trs: 3,
            d_prd: 4,
            d_joint: 5,
            ..ModelConfig::default()
        };
        JointParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1))
    }

    #[test]
    fn output_is_normalized_with_blank() {
        let p = params(3);
        let out = joint(&[0.1, -0.2, 0.3], &[1.0, 0.5, -0.5, 0.0], &p).unwrap();
        assert_eq!(out.len(), 4);
        assert!(log_sum_exp(&out).abs() < 1e-6);
    }

    #[test]
    fn zero_output_matrix_is_uniform() {
        let mut p = params(3);
        p.a.fill(0.0);
        p.w.fill(0.0);
        let out = joint(&[0.1, -0.2, 0.3], &[1.0, 0.5, -0.5, 0.0], &p).unwrap();
        for v in out {
            assert!((v + 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let p = params(3);
        assert!(matches!(joint(&[0.1, 0.2], &[0.0; 4], &p), Err(Error::Contract(_))));
    }
}
