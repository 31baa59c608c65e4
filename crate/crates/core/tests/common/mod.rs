#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repkd::data::{generate_mock_reps, generate_synth_corpus, MockTeacherSpec, SynthCorpus, SynthSpec, TeacherRepSet};
use repkd::distill::{utterance_objective, Distance, KdInputs, ObjectiveConfig};
use repkd::lattice::{AlignmentPosterior, JointLogProbGrid};
use repkd::nn::{Model, ModelConfig};
use repkd::tensor::{log_sum_exp, Matrix, Real};
use repkd::TokenId;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Normalized random log-probabilities; the blank is the last class.
pub fn random_grid(rng: &mut ChaCha8Rng, frames: usize, tokens: usize, classes: usize) -> JointLogProbGrid {
    let mut values = Vec::with_capacity(frames * (tokens + 1) * classes);
    for _ in 0..frames * (tokens + 1) {
        let logits: Vec<f64> = (0..classes).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lse = log_sum_exp(&logits);
        values.extend(logits.iter().map(|l| l - lse));
    }
    JointLogProbGrid::new(frames, tokens, classes, classes - 1, values).unwrap()
}

pub fn random_target(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<TokenId> {
    (0..n).map(|_| rng.random_range(0..classes as TokenId - 1)).collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// ‖a − b‖ / max(‖a‖, ‖b‖)
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab: 5,
        d_in: 3,
        encoder_hidden: vec![4],
        d_trs: 4,
        d_embed: 3,
        d_prd: 4,
        d_joint: 5,
        subsample: 2,
    }
}

/// Toy utterance with a teacher target of `out_dim` features.
pub struct ToyUtterance {
    pub frames: Matrix<f64>,
    pub tokens: Vec<TokenId>,
    pub target: Matrix<f64>,
}

pub fn toy_utterance(rng: &mut ChaCha8Rng, cfg: &ModelConfig, out_dim: usize) -> ToyUtterance {
    let raw = rng.random_range(cfg.subsample..=12);
    let n = rng.random_range(0..=4);
    ToyUtterance {
        frames: random_matrix(rng, raw, cfg.d_in),
        tokens: (0..n).map(|_| rng.random_range(0..cfg.vocab as TokenId)).collect(),
        target: random_matrix(rng, n, out_dim),
    }
}

/// Combined-loss gradient of a tiny model against central differences at
/// precision `T`; returns the relative error.
pub fn model_gradient_error<T: Real>(seed: u64, step: f64, distance: Distance) -> f64 {
    let cfg = tiny_config();
    let mut r = rng(seed);
    let out_dim = 3;
    let mut base = Model::<f64>::init(&cfg, seed).unwrap();
    base.attach_regression(out_dim, seed + 1000);
    let model: Model<T> = base.cast();
    let toy = toy_utterance(&mut r, &cfg, out_dim);
    let frames = toy.frames.cast::<T>();
    let target = toy.target.cast::<T>();
    let post: AlignmentPosterior = utterance_objective(&model, &frames, &toy.tokens, None, &ObjectiveConfig::default())
        .unwrap()
        .posterior;
    let obj = ObjectiveConfig {
        lambda: 0.5,
        distance,
        normalize: seed % 3 == 0,
    };
    let value = |m: &Model<T>| {
        utterance_objective(
            m,
            &frames,
            &toy.tokens,
            Some(KdInputs {
                posterior: &post,
                target: &target,
            }),
            &obj,
        )
        .unwrap()
    };
    let analytic: Vec<f64> = value(&model).grads.flatten().iter().map(|v| v.to_f64()).collect();
    let flat = model.flatten();
    let mut probe = model.clone();
    let mut numeric = vec![0.0; flat.len()];
    let mut p = flat.clone();
    for i in 0..flat.len() {
        p[i] = T::from_f64(flat[i].to_f64() + step);
        probe.assign_flat(&p);
        let up = value(&probe).combined;
        p[i] = T::from_f64(flat[i].to_f64() - step);
        probe.assign_flat(&p);
        let down = value(&probe).combined;
        p[i] = flat[i];
        numeric[i] = (up - down) / (2.0 * step);
    }
    rel_err(&analytic, &numeric)
}

/// Synthetic corpus used by the training tests and the directional
/// experiment: 500 train / 100 dev utterances, 20 tokens.
pub fn pinned_spec() -> SynthSpec {
    SynthSpec {
        noise: 1.0,
        seed: 1,
        ..SynthSpec::default()
    }
}

pub fn small_corpus(train: usize, dev: usize, seed: u64) -> SynthCorpus {
    generate_synth_corpus(&SynthSpec {
        train_utterances: train,
        dev_utterances: dev,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

pub fn mock_teacher(corpus: &SynthCorpus, spec: &MockTeacherSpec) -> TeacherRepSet {
    let entries: Vec<_> = corpus
        .train
        .iter()
        .chain(&corpus.dev)
        .map(|u| u.entry(format!("frames/{}.frm", u.id)))
        .collect();
    generate_mock_reps(&entries, corpus.vocab.len(), spec).unwrap()
}
