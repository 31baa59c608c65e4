//! Toy speech: Markov token streams rendered as noisy prototype frames.

use std::fs;
use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::frames::save_frames;
use super::manifest::{write_manifest, Utterance};
use super::vocab::{Vocab, CONTINUATION};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;
use crate::tensor::Matrix;
use crate::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub vocab: usize,
    pub train_utterances: usize,
    pub dev_utterances: usize,
    /// Inclusive token-count range per utterance.
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Inclusive frame-count range per token.
    pub min_frames: usize,
    pub max_frames: usize,
    pub feature_dim: usize,
    pub noise: f64,
    /// Utterances per conversation; neighbours are linked within one.
    pub conversation_len: usize,
    /// Concentration of the token transition matrix; larger is more
    /// predictable.
    pub transition_sharpness: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            vocab: 20,
            train_utterances: 500,
            dev_utterances: 100,
            min_tokens: 3,
            max_tokens: 8,
            min_frames: 2,
            max_frames: 4,
            feature_dim: 16,
            noise: 0.6,
            conversation_len: 5,
            transition_sharpness: 2.0,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.vocab < 2 {
            return bad("synthetic vocabulary needs at least 2 tokens");
        }
        if self.train_utterances == 0 {
            return bad("synthetic corpus needs at least one training utterance");
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad("token range must satisfy 1 <= min <= max");
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad("frames-per-token range must satisfy 1 <= min <= max");
        }
        if self.feature_dim == 0 {
            return bad("feature dimension must be positive");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise scale must be finite and non-negative");
        }
        if self.conversation_len == 0 {
            return bad("conversation length must be positive");
        }
        if !(self.transition_sharpness >= 0.0 && self.transition_sharpness.is_finite()) {
            return bad("transition sharpness must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub vocab: Vocab,
    /// `vocab × feature_dim` emission prototypes.
    pub prototypes: Matrix<f32>,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
}

/// Pronounceable, unique pieces; every fourth one is a continuation.
fn synth_pieces(n: usize) -> Vec<String> {
    const C: &[u8] = b"kmtsnrpldg";
    const V: &[u8] = b"aeiou";
    (0..n)
        .map(|i| {
            let mut s = String::new();
            let mut x = i;
            loop {
                s.push(C[x % C.len()] as char);
                s.push(V[(x / C.len()) % V.len()] as char);
                x /= C.len() * V.len();
                if x == 0 {
                    break;
                }
                x -= 1;
            }
            if i % 4 == 3 {
                format!("{CONTINUATION}{s}")
            } else {
                s
            }
        })
        .collect()
}

struct Generator {
    transitions: Vec<WeightedIndex<f64>>,
    prototypes: Matrix<f32>,
}

impl Generator {
    fn utterances(&self, spec: &SynthSpec, prefix: &str, count: usize, rng: &mut ChaCha8Rng) -> Vec<Utterance> {
        let mut out: Vec<Utterance> = Vec::with_capacity(count);
        let mut state: TokenId = rng.random_range(0..spec.vocab as TokenId);
        for j in 0..count {
            let conv = j / spec.conversation_len;
            let pos = j % spec.conversation_len;
            if pos == 0 {
                state = rng.random_range(0..spec.vocab as TokenId);
            }
            let n = rng.random_range(spec.min_tokens..=spec.max_tokens);
            let mut tokens = Vec::with_capacity(n);
            for _ in 0..n {
                state = self.transitions[state as usize].sample(rng) as TokenId;
                tokens.push(state);
            }
            let frames = self.render(spec, &tokens, rng);
            let id = format!("{prefix}{conv:04}_{pos}");
            let last_in_conv = pos + 1 == spec.conversation_len || j + 1 == count;
            let prev = (pos > 0).then(|| out[j - 1].id.clone());
            let next = (!last_in_conv).then(|| format!("{prefix}{conv:04}_{}", pos + 1));
            out.push(Utterance {
                id,
                tokens,
                frames,
                prev,
                next,
            });
        }
        out
    }

    fn render(&self, spec: &SynthSpec, tokens: &[TokenId], rng: &mut ChaCha8Rng) -> Matrix<f32> {
        let d = spec.feature_dim;
        let mut data = Vec::new();
        for &tok in tokens {
            let r = rng.random_range(spec.min_frames..=spec.max_frames);
            for _ in 0..r {
                for &p in self.prototypes.row(tok as usize) {
                    let e: f64 = rng.sample(StandardNormal);
                    data.push(p + (spec.noise * e) as f32);
                }
            }
        }
        Matrix::from_vec(data.len() / d, d, data)
    }
}

pub fn generate_synth_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let v = spec.vocab;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth.prototypes", &[]));
    let prototypes = Matrix::from_vec(
        v,
        spec.feature_dim,
        (0..v * spec.feature_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
            .collect(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth.transitions", &[]));
    // No self-loops: a repeated token would be one long acoustic segment.
    let transitions = (0..v)
        .map(|from| {
            let w: Vec<f64> = (0..v)
                .map(|to| {
                    if to == from {
                        0.0
                    } else {
                        (spec.transition_sharpness * rng.sample::<f64, _>(StandardNormal)).exp()
                    }
                })
                .collect();
            WeightedIndex::new(w).map_err(|e| Error::config(format!("transition weights: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let gen = Generator {
        transitions,
        prototypes,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth.train", &[]));
    let train = gen.utterances(spec, "tr", spec.train_utterances, &mut rng);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth.dev", &[]));
    let dev = gen.utterances(spec, "dv", spec.dev_utterances, &mut rng);
    Ok(SynthCorpus {
        vocab: Vocab::new(synth_pieces(v))?,
        prototypes: gen.prototypes,
        train,
        dev,
    })
}

/// Writes `train.manifest`, `dev.manifest`, `vocab.txt` and `frames/*.frm`.
pub fn write_corpus(dir: impl AsRef<Path>, corpus: &SynthCorpus) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("frames"))?;
    for (name, set) in [("train.manifest", &corpus.train), ("dev.manifest", &corpus.dev)] {
        let mut entries = Vec::with_capacity(set.len());
        for u in set {
            let rel = format!("frames/{}.frm", u.id);
            save_frames(dir.join(&rel), &u.frames)?;
            entries.push(u.entry(rel));
        }
        write_manifest(dir.join(name), &entries)?;
    }
    corpus.vocab.save(dir.join("vocab.txt"))
}
