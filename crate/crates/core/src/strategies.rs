//! Which teacher layers and which context variant feed distillation.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seeding::{derive_seed, derive_seed_keyed};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    Last,
    First,
    Uniform,
    Random,
    MeanPool,
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "last" => Ok(Self::Last),
            "first" => Ok(Self::First),
            "uniform" => Ok(Self::Uniform),
            "random" => Ok(Self::Random),
            "meanpool" | "mean" => Ok(Self::MeanPool),
            other => Err(Error::config(format!(
                "unknown strategy {other:?} (expected last, first, uniform, random or meanpool)"
            ))),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Last => "last",
            Self::First => "first",
            Self::Uniform => "uniform",
            Self::Random => "random",
            Self::MeanPool => "meanpool",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    /// Number of layers to transfer. Ignored by `MeanPool`.
    pub k: u32,
    /// Transformer layers in the teacher, excluding the embedding layer.
    pub total_layers: u32,
    /// Global seed; `Random` draws from `(seed, epoch)`.
    pub seed: u64,
}

impl StrategySpec {
    pub fn validate(&self) -> Result<()> {
        if self.total_layers == 0 {
            return Err(Error::config("teacher has no layers"));
        }
        if self.kind != StrategyKind::MeanPool && (self.k == 0 || self.k > self.total_layers) {
            return Err(Error::config(format!(
                "layers_k = {} is outside 1..={} for a {}-layer teacher",
                self.k, self.total_layers, self.total_layers
            )));
        }
        Ok(())
    }
}

/// Ascending 1-based layer indices for `epoch`. `MeanPool` returns every
/// layer, the set it averages.
pub fn select_layers(spec: &StrategySpec, epoch: u64) -> Result<Vec<u32>> {
    spec.validate()?;
    let (k, l) = (spec.k, spec.total_layers);
    Ok(match spec.kind {
        StrategyKind::Last => (l - k + 1..=l).collect(),
        StrategyKind::First => (1..=k).collect(),
        StrategyKind::Uniform => {
            let step = l.div_ceil(k);
            let mut out: Vec<u32> = (1..=k).map(|j| (j * step).min(l)).collect();
            out.dedup();
            out
        }
        StrategyKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "layers", &[epoch]));
            let mut out: Vec<u32> = sample(&mut rng, l as usize, k as usize)
                .into_iter()
                .map(|i| i as u32 + 1)
                .collect();
            out.sort_unstable();
            out
        }
        StrategyKind::MeanPool => (1..=l).collect(),
    })
}

/// Elementwise average of equally shaped layer matrices.
pub fn mean_pool_layers(layers: &[&Matrix<f32>]) -> Result<Matrix<f32>> {
    let first = layers
        .first()
        .ok_or_else(|| Error::contract("mean pooling needs at least one layer"))?;
    let (rows, cols) = (first.rows(), first.cols());
    let mut acc = vec![0f64; rows * cols];
    for (j, m) in layers.iter().enumerate() {
        if m.rows() != rows || m.cols() != cols {
            return Err(Error::contract(format!(
                "layer {} is {}x{}, expected {rows}x{cols}",
                j + 1,
                m.rows(),
                m.cols()
            )));
        }
        for (a, &v) in acc.iter_mut().zip(m.data()) {
            *a += v as f64;
        }
    }
    let n = layers.len() as f64;
    Ok(Matrix::from_vec(
        rows,
        cols,
        acc.into_iter().map(|a| (a / n) as f32).collect(),
    ))
}

/// How the per-epoch context variant is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextVariantPolicy {
    /// Variants exported per utterance; variant 0 is unmasked.
    pub variants: u32,
    pub mask_rate: f64,
    pub seed: u64,
}

impl ContextVariantPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.variants == 0 {
            return Err(Error::config("context_variants must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::config(format!(
                "mask_rate {} is outside [0, 1]",
                self.mask_rate
            )));
        }
        Ok(())
    }
}

/// Variant in `0..M` for one utterance at one epoch.
pub fn sample_context_variant(policy: &ContextVariantPolicy, utterance: &str, epoch: u64) -> u32 {
    if policy.variants <= 1 || policy.mask_rate <= 0.0 {
        return 0;
    }
    let seed = derive_seed_keyed(policy.seed, "variant", utterance, &[epoch]);
    ChaCha8Rng::seed_from_u64(seed).random_range(0..policy.variants)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: StrategyKind, k: u32, l: u32) -> StrategySpec {
        StrategySpec {
            kind,
            k,
            total_layers: l,
            seed: 7,
        }
    }

    #[test]
    fn documented_selections() {
        use StrategyKind::*;
        assert_eq!(select_layers(&spec(Uniform, 3, 12), 0).unwrap(), [4, 8, 12]);
        assert_eq!(select_layers(&spec(Uniform, 1, 12), 0).unwrap(), [12]);
        assert_eq!(select_layers(&spec(Last, 1, 12), 0).unwrap(), [12]);
        assert_eq!(select_layers(&spec(First, 2, 12), 0).unwrap(), [1, 2]);
        assert_eq!(select_layers(&spec(Last, 3, 12), 0).unwrap(), [10, 11, 12]);
        assert_eq!(select_layers(&spec(Uniform, 4, 6), 0).unwrap(), [2, 4, 6]);
        assert_eq!(select_layers(&spec(MeanPool, 99, 3), 0).unwrap(), [1, 2, 3]);
    }

    #[test]
    fn random_is_reproducible_and_varies() {
        let s = spec(StrategyKind::Random, 2, 12);
        let a = select_layers(&s, 3).unwrap();
        assert_eq!(a, select_layers(&s, 3).unwrap());
        assert_eq!(a.len(), 2);
        assert!(a[0] < a[1] && a[1] <= 12);
        assert!((0..50).any(|e| select_layers(&s, e).unwrap() != a));
    }

    #[test]
    fn k_beyond_l_is_config_error() {
        let err = select_layers(&spec(StrategyKind::Uniform, 13, 12), 0);
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
        assert!(select_layers(&spec(StrategyKind::Last, 0, 12), 0).is_err());
    }

    #[test]
    fn mean_pool_cases() {
        let v = Matrix::from_vec(2, 2, vec![1.0f32, -2.0, 3.5, 0.25]);
        let neg = Matrix::from_vec(2, 2, v.data().iter().map(|x| -x).collect());
        assert_eq!(mean_pool_layers(&[&v, &v, &v]).unwrap(), v);
        assert!(mean_pool_layers(&[&v, &neg]).unwrap().data().iter().all(|&x| x == 0.0));
        let odd = Matrix::<f32>::zeros(3, 2);
        assert!(matches!(mean_pool_layers(&[&v, &odd]), Err(Error::Contract(_))));
        assert!(mean_pool_layers(&[]).is_err());
    }

    #[test]
    fn variant_sampling() {
        let mut p = ContextVariantPolicy {
            variants: 1,
            mask_rate: 0.1,
            seed: 3,
        };
        assert_eq!(sample_context_variant(&p, "u1", 5), 0);
        p.variants = 4;
        p.mask_rate = 0.0;
        assert_eq!(sample_context_variant(&p, "u1", 5), 0);
        p.mask_rate = 0.1;
        let mut counts = [0usize; 4];
        for i in 0..10_000u64 {
            let id = format!("utt{}", i % 100);
            counts[sample_context_variant(&p, &id, i / 100) as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((0.2..=0.3).contains(&f), "frequency {f}");
        }
        assert_eq!(sample_context_variant(&p, "x", 2), sample_context_variant(&p, "x", 2));
    }
}
