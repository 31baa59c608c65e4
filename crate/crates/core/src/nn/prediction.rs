use rand_chacha::ChaCha8Rng;

use super::{init_matrix, init_vec, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Real};
use crate::TokenId;

/// Token embedding plus a single gated recurrent cell. State `i` has consumed
/// `y_1..y_i` and nothing later; state 0 is the learned start vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionParams<T> {
    pub embedding: Matrix<T>,
    pub start: Vec<T>,
    pub w_z: Matrix<T>,
    pub w_r: Matrix<T>,
    pub w_n: Matrix<T>,
    pub u_z: Matrix<T>,
    pub u_r: Matrix<T>,
    pub u_n: Matrix<T>,
    pub b_z: Vec<T>,
    pub b_r: Vec<T>,
    pub b_n: Vec<T>,
}

#[derive(Debug, Clone)]
struct StepCache<T> {
    token: usize,
    z: Vec<T>,
    r: Vec<T>,
    n: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct PredictionCache<T> {
    steps: Vec<StepCache<T>>,
    states: Matrix<T>,
}

impl<T: Real> PredictionParams<T> {
    pub fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let (v, e, d) = (config.vocab, config.d_embed, config.d_prd);
        Self {
            embedding: init_matrix(v, e, 1, rng),
            start: init_vec(d, d, rng),
            w_z: init_matrix(d, e, d, rng),
            w_r: init_matrix(d, e, d, rng),
            w_n: init_matrix(d, e, d, rng),
            u_z: init_matrix(d, d, d, rng),
            u_r: init_matrix(d, d, d, rng),
            u_n: init_matrix(d, d, d, rng),
            b_z: init_vec(d, d, rng),
            b_r: init_vec(d, d, rng),
            b_n: init_vec(d, d, rng),
        }
    }

    pub fn vocab(&self) -> usize {
        self.embedding.rows()
    }

    pub fn state_dim(&self) -> usize {
        self.start.len()
    }

    pub(crate) fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        let mats = [
            ("prediction.embedding", &self.embedding),
            ("prediction.w_z", &self.w_z),
            ("prediction.w_r", &self.w_r),
            ("prediction.w_n", &self.w_n),
            ("prediction.u_z", &self.u_z),
            ("prediction.u_r", &self.u_r),
            ("prediction.u_n", &self.u_n),
        ];
        for (name, m) in mats {
            f(name, &[m.rows(), m.cols()], m.data());
        }
        let vecs = [
            ("prediction.start", &self.start),
            ("prediction.b_z", &self.b_z),
            ("prediction.b_r", &self.b_r),
            ("prediction.b_n", &self.b_n),
        ];
        for (name, v) in vecs {
            f(name, &[v.len()], v);
        }
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        f("prediction.embedding", self.embedding.data_mut());
        f("prediction.w_z", self.w_z.data_mut());
        f("prediction.w_r", self.w_r.data_mut());
        f("prediction.w_n", self.w_n.data_mut());
        f("prediction.u_z", self.u_z.data_mut());
        f("prediction.u_r", self.u_r.data_mut());
        f("prediction.u_n", self.u_n.data_mut());
        f("prediction.start", &mut self.start);
        f("prediction.b_z", &mut self.b_z);
        f("prediction.b_r", &mut self.b_r);
        f("prediction.b_n", &mut self.b_n);
    }

    pub(crate) fn cast<U: Real>(&self) -> PredictionParams<U> {
        let v = |x: &Vec<T>| x.iter().map(|a| U::from_f64(a.to_f64())).collect();
        PredictionParams {
            embedding: self.embedding.cast(),
            start: v(&self.start),
            w_z: self.w_z.cast(),
            w_r: self.w_r.cast(),
            w_n: self.w_n.cast(),
            u_z: self.u_z.cast(),
            u_r: self.u_r.cast(),
            u_n: self.u_n.cast(),
            b_z: v(&self.b_z),
            b_r: v(&self.b_r),
            b_n: v(&self.b_n),
        }
    }

    /// One recurrent step consuming `token` from state `h`.
    pub fn step(&self, h: &[T], token: TokenId) -> Vec<T> {
        self.step_cached(h, token as usize).0
    }

    fn step_cached(&self, h: &[T], token: usize) -> (Vec<T>, StepCache<T>) {
        let x = self.embedding.row(token);
        let d = self.state_dim();
        let mut z = self.w_z.matvec(x);
        let mut r = self.w_r.matvec(x);
        let mut uz = vec![T::ZERO; d];
        let mut ur = vec![T::ZERO; d];
        self.u_z.matvec_into(h, &mut uz);
        self.u_r.matvec_into(h, &mut ur);
        for j in 0..d {
            z[j] = (z[j] + uz[j] + self.b_z[j]).sigmoid();
            r[j] = (r[j] + ur[j] + self.b_r[j]).sigmoid();
        }
        let rh: Vec<T> = r.iter().zip(h).map(|(&a, &b)| a * b).collect();
        let mut n = self.w_n.matvec(x);
        let un = self.u_n.matvec(&rh);
        for j in 0..d {
            n[j] = (n[j] + un[j] + self.b_n[j]).tanh();
        }
        let out = (0..d)
            .map(|j| (T::ONE - z[j]) * n[j] + z[j] * h[j])
            .collect();
        (out, StepCache { token, z, r, n })
    }

    /// Accumulates parameter gradients given `∂L/∂states` (BPTT).
    pub(crate) fn backward(
        &self,
        cache: &PredictionCache<T>,
        d_states: &Matrix<T>,
        grads: &mut Self,
    ) {
        let d = self.state_dim();
        let steps = cache.steps.len();
        let mut carry = vec![T::ZERO; d];
        for i in (0..steps).rev() {
            // step i maps state i to state i+1
            let sc = &cache.steps[i];
            let h_prev = cache.states.row(i);
            let dh: Vec<T> = d_states
                .row(i + 1)
                .iter()
                .zip(&carry)
                .map(|(&a, &b)| a + b)
                .collect();
            let mut d_prev = vec![T::ZERO; d];
            let mut da_n = vec![T::ZERO; d];
            let mut da_z = vec![T::ZERO; d];
            for j in 0..d {
                let (z, n) = (sc.z[j], sc.n[j]);
                d_prev[j] = dh[j] * z;
                let dn = dh[j] * (T::ONE - z);
                let dz = dh[j] * (h_prev[j] - n);
                da_n[j] = dn * (T::ONE - n * n);
                da_z[j] = dz * z * (T::ONE - z);
            }
            let rh: Vec<T> = sc.r.iter().zip(h_prev).map(|(&a, &b)| a * b).collect();
            let mut d_rh = vec![T::ZERO; d];
            self.u_n.matvec_t_acc(&da_n, &mut d_rh);
            let mut da_r = vec![T::ZERO; d];
            for j in 0..d {
                let r = sc.r[j];
                d_prev[j] += d_rh[j] * r;
                da_r[j] = d_rh[j] * h_prev[j] * r * (T::ONE - r);
            }
            let x = self.embedding.row(sc.token);
            grads.w_n.add_outer(&da_n, x);
            grads.u_n.add_outer(&da_n, &rh);
            grads.w_z.add_outer(&da_z, x);
            grads.u_z.add_outer(&da_z, h_prev);
            grads.w_r.add_outer(&da_r, x);
            grads.u_r.add_outer(&da_r, h_prev);
            for j in 0..d {
                grads.b_n[j] += da_n[j];
                grads.b_z[j] += da_z[j];
                grads.b_r[j] += da_r[j];
            }
            let d_x = grads.embedding.row_mut(sc.token);
            self.w_n.matvec_t_acc(&da_n, d_x);
            self.w_z.matvec_t_acc(&da_z, d_x);
            self.w_r.matvec_t_acc(&da_r, d_x);
            self.u_z.matvec_t_acc(&da_z, &mut d_prev);
            self.u_r.matvec_t_acc(&da_r, &mut d_prev);
            carry = d_prev;
        }
        for (j, g) in grads.start.iter_mut().enumerate() {
            *g += d_states.get(0, j) + carry[j];
        }
    }
}

/// Returns the `(N+1) × d_prd` prediction states for `tokens`. Row `i` is the
/// context for predicting `y_{i+1}`; row 0 depends on no token.
pub fn encode_prefix<T: Real>(
    tokens: &[TokenId],
    params: &PredictionParams<T>,
) -> Result<(Matrix<T>, PredictionCache<T>)> {
    let vocab = params.vocab();
    if let Some(bad) = tokens.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::input(format!(
            "token id {bad} outside vocabulary of {vocab}"
        )));
    }
    let d = params.state_dim();
    let mut states = Matrix::zeros(tokens.len() + 1, d);
    states.row_mut(0).copy_from_slice(&params.start);
    let mut steps = Vec::with_capacity(tokens.len());
    for (i, &tok) in tokens.iter().enumerate() {
        let (h, sc) = params.step_cached(states.row(i), tok as usize);
        states.row_mut(i + 1).copy_from_slice(&h);
        steps.push(sc);
    }
    Ok((
        states.clone(),
        PredictionCache { steps, states },
    ))
}
