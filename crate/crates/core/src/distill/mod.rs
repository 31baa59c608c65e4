//! Hidden-state distillation onto teacher representations.
//!
//! The student predicts each teacher vector `h_i` from the posterior-weighted
//! acoustic feature `φ̄_i = Σ_t q_i(t) φ_t` and the prediction state `ψ_i`
//! through a linear regression head `R`:
//!
//! ```text
//! L_KD = Σ_i d(R(φ̄_i, ψ_i), h_i)
//! ```
//!
//! This moves the expectation over `q_i` inside `R`. [`kd_loss_exact`]
//! keeps it outside and exists as a reference: for linear `R` and convex
//! `d`, Jensen's inequality gives `kd_loss ≤ kd_loss_exact`, with equality
//! when every `q_i` is one-hot.
//!
//! Several teacher representations (layers, context variants, models) are
//! concatenated feature-wise into one target, in canonical
//! `(model, variant, layer)` order.

mod objective;

pub use objective::{utterance_objective, KdInputs, ObjectiveConfig, ObjectiveOutput};

use std::fmt;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Affine;
use crate::tensor::{Matrix, Real};

/// Linear head `R: [φ̄; ψ] ↦ W [φ̄; ψ] + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionParams<T>(pub Affine<T>);

impl<T: Real> RegressionParams<T> {
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self(Affine::init(out_dim, in_dim, rng))
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self(Affine::zeros(out_dim, in_dim))
    }

    pub fn in_dim(&self) -> usize {
        self.0.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.0.out_dim()
    }

    pub fn apply(&self, phi_bar: &[T], psi: &[T]) -> Result<Vec<T>> {
        if phi_bar.len() + psi.len() != self.in_dim() {
            return Err(Error::contract(format!(
                "regression expects {} inputs, got {} + {}",
                self.in_dim(),
                phi_bar.len(),
                psi.len()
            )));
        }
        let mut x = Vec::with_capacity(self.in_dim());
        x.extend_from_slice(phi_bar);
        x.extend_from_slice(psi);
        Ok(self.0.apply(&x))
    }

    pub(crate) fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.0.visit("regression", f);
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        self.0.visit_mut("regression", f);
    }

    pub fn cast<U: Real>(&self) -> RegressionParams<U> {
        RegressionParams(Affine {
            weight: self.0.weight.cast(),
            bias: self.0.bias.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        })
    }
}

/// Distance between the regression output and the teacher vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Distance {
    #[default]
    L1,
    L2Squared,
}

impl Distance {
    pub fn eval<T: Real>(self, a: &[T], b: &[T]) -> T {
        let mut acc = T::ZERO;
        for (&x, &y) in a.iter().zip(b) {
            let d = x - y;
            acc += match self {
                Distance::L1 => d.abs(),
                Distance::L2Squared => d * d,
            };
        }
        acc
    }

    /// `∂d/∂a`. The L1 subgradient at an exact tie is 0.
    pub fn grad<T: Real>(self, a: &[T], b: &[T]) -> Vec<T> {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = x - y;
                match self {
                    Distance::L1 if d > T::ZERO => T::ONE,
                    Distance::L1 if d < T::ZERO => -T::ONE,
                    Distance::L1 => T::ZERO,
                    Distance::L2Squared => T::from_f64(2.0) * d,
                }
            })
            .collect()
    }
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" | "L1" => Ok(Distance::L1),
            "l2" | "l2sq" | "L2" => Ok(Distance::L2Squared),
            other => Err(Error::config(format!("unknown distance {other:?}"))),
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distance::L1 => "l1",
            Distance::L2Squared => "l2",
        })
    }
}

/// `Σ_t q(t) φ_t`.
pub fn expected_phi<T: Real>(q: &[f64], phi: &Matrix<T>) -> Result<Vec<T>> {
    if q.len() != phi.rows() {
        return Err(Error::contract(format!(
            "posterior row has {} frames, features have {}",
            q.len(),
            phi.rows()
        )));
    }
    let s: f64 = q.iter().sum();
    if (s - 1.0).abs() > 1e-4 {
        return Err(Error::contract(format!("posterior row sums to {s}")));
    }
    let mut out = vec![T::ZERO; phi.cols()];
    for (t, &w) in q.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let w = T::from_f64(w);
        for (o, &v) in out.iter_mut().zip(phi.row(t)) {
            *o += w * v;
        }
    }
    Ok(out)
}

fn check_rows<T: Real>(a: &Matrix<T>, b: &Matrix<T>, what: &str) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(Error::contract(format!(
            "{what}: {} rows vs {} rows",
            a.rows(),
            b.rows()
        )));
    }
    Ok(())
}

fn check_target<T: Real>(r: &RegressionParams<T>, target: &Matrix<T>) -> Result<()> {
    if r.out_dim() != target.cols() {
        return Err(Error::contract(format!(
            "regression outputs {} features, target has {}",
            r.out_dim(),
            target.cols()
        )));
    }
    Ok(())
}

/// `Σ_i d(R(φ̄_i, ψ_i), h_i)` with the expectation already applied.
pub fn kd_loss<T: Real>(
    phi_bar: &Matrix<T>,
    psi: &Matrix<T>,
    target: &Matrix<T>,
    r: &RegressionParams<T>,
    d: Distance,
) -> Result<T> {
    check_rows(phi_bar, psi, "expected features vs prediction states")?;
    check_rows(phi_bar, target, "expected features vs teacher target")?;
    check_target(r, target)?;
    let mut total = T::ZERO;
    for i in 0..target.rows() {
        let out = r.apply(phi_bar.row(i), psi.row(i))?;
        total += d.eval(&out, target.row(i));
    }
    Ok(total)
}

/// `Σ_i Σ_t q_i(t) d(R(φ_t, ψ_i), h_i)`: the expectation outside the
/// distance. Reference form only.
pub fn kd_loss_exact<T: Real>(
    q: &Matrix<f64>,
    phi: &Matrix<T>,
    psi: &Matrix<T>,
    target: &Matrix<T>,
    r: &RegressionParams<T>,
    d: Distance,
) -> Result<T> {
    check_rows(psi, target, "prediction states vs teacher target")?;
    check_target(r, target)?;
    if q.rows() != target.rows() || q.cols() != phi.rows() {
        return Err(Error::contract("posterior shape does not match N × T"));
    }
    let mut total = T::ZERO;
    for i in 0..target.rows() {
        for t in 0..phi.rows() {
            let w = q.get(i, t);
            if w == 0.0 {
                continue;
            }
            let out = r.apply(phi.row(t), psi.row(i))?;
            total += T::from_f64(w) * d.eval(&out, target.row(i));
        }
    }
    Ok(total)
}

/// `q · φ` row by row.
pub fn expected_features<T: Real>(q: &Matrix<f64>, phi: &Matrix<T>) -> Result<Matrix<T>> {
    let mut out = Matrix::zeros(q.rows(), phi.cols());
    for i in 0..q.rows() {
        let row = expected_phi(q.row(i), phi)?;
        out.row_mut(i).copy_from_slice(&row);
    }
    Ok(out)
}

/// `asr + λ · kd`.
pub fn combined_loss(asr_nll: f64, kd: f64, lambda: f64) -> Result<f64> {
    if lambda < 0.0 || lambda.is_nan() {
        return Err(Error::config(format!("distillation weight {lambda} is negative")));
    }
    Ok(asr_nll + lambda * kd)
}

/// Which layer a component holds. `MeanPool` is the elementwise average of
/// all transformer layers and sorts after every explicit index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayerRef {
    Index(u32),
    MeanPool,
}

impl fmt::Display for LayerRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerRef::Index(i) => write!(f, "{i}"),
            LayerRef::MeanPool => f.write_str("mean"),
        }
    }
}

/// Identity of one teacher representation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComponentKey {
    pub model: String,
    pub variant: u32,
    pub layer: LayerRef,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentDescriptor {
    pub key: ComponentKey,
    pub dim: usize,
    pub offset: usize,
}

/// Concatenated per-token teacher targets `h_i^multi = (h_i^1, h_i^2, ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiRep {
    pub components: Vec<ComponentDescriptor>,
    pub values: Matrix<f32>,
}

impl MultiRep {
    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn tokens(&self) -> usize {
        self.values.rows()
    }
}

/// Concatenates components feature-wise in canonical key order, so the
/// input order never matters.
pub fn concat_representations(mut components: Vec<(ComponentKey, Matrix<f32>)>) -> Result<MultiRep> {
    if components.is_empty() {
        return Err(Error::contract("no teacher components to concatenate"));
    }
    components.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(w) = components.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::contract(format!(
            "duplicate component ({}, variant {}, layer {})",
            w[0].0.model, w[0].0.variant, w[0].0.layer
        )));
    }
    let n = components[0].1.rows();
    if let Some((k, m)) = components.iter().find(|(_, m)| m.rows() != n) {
        return Err(Error::contract(format!(
            "component {} layer {} has {} rows, expected {n}",
            k.model,
            k.layer,
            m.rows()
        )));
    }
    let total: usize = components.iter().map(|(_, m)| m.cols()).sum();
    let mut values = Matrix::zeros(n, total);
    let mut descriptors = Vec::with_capacity(components.len());
    let mut offset = 0;
    for (key, m) in components {
        for i in 0..n {
            values.row_mut(i)[offset..offset + m.cols()].copy_from_slice(m.row(i));
        }
        descriptors.push(ComponentDescriptor {
            key,
            dim: m.cols(),
            offset,
        });
        offset += m.cols();
    }
    Ok(MultiRep {
        components: descriptors,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn key(model: &str, variant: u32, layer: u32) -> ComponentKey {
        ComponentKey {
            model: model.into(),
            variant,
            layer: LayerRef::Index(layer),
        }
    }

    #[test]
    fn expected_phi_cases() {
        let phi = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 6.0], vec![-1.0, 0.0]]);
        assert_eq!(expected_phi(&[0.0, 1.0, 0.0], &phi).unwrap(), vec![3.0, 6.0]);
        assert_eq!(expected_phi(&[0.5, 0.5, 0.0], &phi).unwrap(), vec![2.0, 4.0]);
        assert!(matches!(expected_phi(&[0.5, 0.5], &phi), Err(Error::Contract(_))));
        assert!(matches!(
            expected_phi(&[0.5, 0.2, 0.0], &phi),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn expected_phi_matches_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let phi = Matrix::from_vec(6, 4, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect());
        let raw: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let q: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let got = expected_phi(&q, &phi).unwrap();
        for c in 0..4 {
            let column: Vec<f64> = (0..6).map(|t| phi.get(t, c)).collect();
            let want: f64 = column.iter().zip(&q).map(|(a, b)| a * b).sum();
            assert!((got[c] - want).abs() < 1e-7);
        }
    }

    #[test]
    fn distance_arithmetic() {
        // R output (1, 2) against target (0, 0)
        assert_eq!(Distance::L1.eval(&[1.0, 2.0], &[0.0, 0.0]), 3.0);
        assert_eq!(Distance::L2Squared.eval(&[1.0, 2.0], &[0.0, 0.0]), 5.0);
        assert_eq!(Distance::L1.grad(&[1.0, 0.0, -2.0], &[0.0, 0.0, 0.0]), vec![1.0, 0.0, -1.0]);
    }

    #[test]
    fn kd_loss_single_token_arithmetic() {
        // identity-like head: output = phi_bar (1, 2)
        let mut r = RegressionParams::<f64>::zeros(3, 2);
        r.0.weight.set(0, 0, 1.0);
        r.0.weight.set(1, 1, 1.0);
        let phi_bar = Matrix::from_rows(&[vec![1.0, 2.0]]);
        let psi = Matrix::from_rows(&[vec![7.0]]);
        let zero = Matrix::from_rows(&[vec![0.0, 0.0]]);
        assert_eq!(kd_loss(&phi_bar, &psi, &zero, &r, Distance::L1).unwrap(), 3.0);
        assert_eq!(kd_loss(&phi_bar, &psi, &zero, &r, Distance::L2Squared).unwrap(), 5.0);
        // target equal to the head's own output
        assert_eq!(kd_loss(&phi_bar, &psi, &phi_bar, &r, Distance::L1).unwrap(), 0.0);
        let wrong = Matrix::from_rows(&[vec![0.0, 0.0, 0.0]]);
        assert!(matches!(
            kd_loss(&phi_bar, &psi, &wrong, &r, Distance::L1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn exact_form_two_frame_expansion() {
        // R(φ, ψ) = φ (scalar), h = 0, d = L1, q = (0.25, 0.75) over φ = (2, -4)
        let mut r = RegressionParams::<f64>::zeros(2, 1);
        r.0.weight.set(0, 0, 1.0);
        let q = Matrix::from_rows(&[vec![0.25, 0.75]]);
        let phi = Matrix::from_rows(&[vec![2.0], vec![-4.0]]);
        let psi = Matrix::from_rows(&[vec![0.0]]);
        let h = Matrix::from_rows(&[vec![0.0]]);
        let exact = kd_loss_exact(&q, &phi, &psi, &h, &r, Distance::L1).unwrap();
        assert_eq!(exact, 0.25 * 2.0 + 0.75 * 4.0);
        let bar = expected_features(&q, &phi).unwrap();
        let approx = kd_loss(&bar, &psi, &h, &r, Distance::L1).unwrap();
        assert_eq!(approx, 2.5);
        assert!(approx <= exact);
    }

    #[test]
    fn combined_loss_weights() {
        assert_eq!(combined_loss(2.0, 10.0, 0.0).unwrap(), 2.0);
        assert!((combined_loss(2.0, 10.0, 0.01).unwrap() - 2.1).abs() < 1e-12);
        assert_eq!(combined_loss(2.0, 0.0, 1.0).unwrap(), 2.0);
        assert!(matches!(combined_loss(2.0, 1.0, -0.5), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn concatenation_is_canonical() {
        let a = Matrix::from_rows(&[vec![1.0f32, 2.0], vec![3.0, 4.0]]);
        let b = Matrix::from_rows(&[vec![5.0f32], vec![6.0]]);
        let c = Matrix::from_rows(&[vec![7.0f32, 8.0, 9.0], vec![0.0, 0.0, 1.0]]);
        let one = concat_representations(vec![
            (key("base", 0, 12), a.clone()),
            (key("base", 0, 4), b.clone()),
            (key("alt", 1, 6), c.clone()),
        ])
        .unwrap();
        let two = concat_representations(vec![
            (key("alt", 1, 6), c),
            (key("base", 0, 12), a),
            (key("base", 0, 4), b),
        ])
        .unwrap();
        assert_eq!(one, two);
        assert_eq!(one.dim(), 6);
        assert_eq!(one.values.row(0), &[7.0, 8.0, 9.0, 5.0, 1.0, 2.0]);
        let offsets: Vec<usize> = one.components.iter().map(|c| c.offset).collect();
        assert_eq!(offsets, vec![0, 3, 4]);
    }

    #[test]
    fn two_base_sized_components_double_the_width() {
        let a = Matrix::<f32>::zeros(3, 768);
        let b = Matrix::<f32>::zeros(3, 768);
        let m = concat_representations(vec![(key("m", 0, 6), a.clone()), (key("m", 0, 12), b)]).unwrap();
        assert_eq!(m.dim(), 1536);
        let single = concat_representations(vec![(key("m", 0, 12), a.clone())]).unwrap();
        assert_eq!(single.values, a);
    }

    #[test]
    fn concatenation_rejects_ragged_and_duplicates() {
        let a = Matrix::<f32>::zeros(3, 2);
        let b = Matrix::<f32>::zeros(2, 2);
        assert!(matches!(
            concat_representations(vec![(key("m", 0, 1), a.clone()), (key("m", 0, 2), b)]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            concat_representations(vec![(key("m", 0, 1), a.clone()), (key("m", 0, 1), a)]),
            Err(Error::Contract(_))
        ));
    }
}
