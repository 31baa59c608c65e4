//! Offline stand-in for a bidirectional teacher.
//!
//! Token `i` is embedded from the window `y_{i-w..=i+w}` with one table per
//! offset, then pushed through `L` random tanh layers. The window reaches
//! into neighbouring utterances, so future context shows up in every layer.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::manifest::ManifestEntry;
use super::trep::TeacherRepSet;
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, derive_seed_keyed};
use crate::tensor::{Matrix, Real};
use crate::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub struct MockTeacherSpec {
    pub teacher: String,
    pub layers: u32,
    pub dim: u32,
    pub lookahead: u32,
    pub variants: u32,
    /// Share of context-window contributions dropped in variants `1..`.
    pub mask_rate: f64,
    pub seed: u64,
}

impl Default for MockTeacherSpec {
    fn default() -> Self {
        Self {
            teacher: "mock".into(),
            layers: 12,
            dim: 64,
            lookahead: 1,
            variants: 4,
            mask_rate: 0.1,
            seed: 1,
        }
    }
}

struct MockWeights {
    /// One `V × D` table per offset `-w..=w`.
    offsets: Vec<Matrix<f32>>,
    mix: Vec<Matrix<f32>>,
    bias: Vec<Vec<f32>>,
}

fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix<f32> {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| (scale * rng.sample::<f64, _>(StandardNormal)) as f32)
            .collect(),
    )
}

impl MockWeights {
    fn new(spec: &MockTeacherSpec, vocab: usize) -> Self {
        let d = spec.dim as usize;
        let width = 2 * spec.lookahead as usize + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "mock.weights", &[]));
        let emb_scale = 1.0 / (width as f64).sqrt();
        let offsets = (0..width).map(|_| gaussian(vocab, d, emb_scale, &mut rng)).collect();
        let mix = (0..spec.layers)
            .map(|_| gaussian(d, d, 1.0 / (d as f64).sqrt(), &mut rng))
            .collect();
        let bias = (0..spec.layers)
            .map(|_| gaussian(1, d, 0.1, &mut rng).into_vec())
            .collect();
        Self { offsets, mix, bias }
    }

    /// Writes all `L` layers for one window into `out` (layer-major).
    fn layers(&self, window: &[(usize, TokenId)], out: &mut Vec<Vec<f32>>) {
        let d = self.bias[0].len();
        let mut h = vec![0f32; d];
        for &(slot, tok) in window {
            for (a, &e) in h.iter_mut().zip(self.offsets[slot].row(tok as usize)) {
                *a += e;
            }
        }
        out.clear();
        let mut next = vec![0f32; d];
        for (m, b) in self.mix.iter().zip(&self.bias) {
            m.matvec_into(&h, &mut next);
            for j in 0..d {
                next[j] = (0.5 * h[j] + next[j] + b[j]).tanh();
            }
            std::mem::swap(&mut h, &mut next);
            out.push(h.clone());
        }
    }
}

/// Tokens available around an utterance: previous neighbours' tail, the
/// utterance, next neighbours' head.
fn context_stream<'a>(
    entry: &'a ManifestEntry,
    by_id: &HashMap<&str, &'a ManifestEntry>,
    reach: usize,
) -> (Vec<TokenId>, usize) {
    let mut past = Vec::new();
    let mut cur = entry.prev.as_deref();
    while past.len() < reach {
        let Some(e) = cur.and_then(|id| by_id.get(id)) else { break };
        past.splice(0..0, e.tokens.iter().copied());
        cur = e.prev.as_deref();
    }
    let skip = past.len().saturating_sub(reach);
    let mut stream: Vec<TokenId> = past[skip..].to_vec();
    let start = stream.len();
    stream.extend_from_slice(&entry.tokens);
    let mut cur = entry.next.as_deref();
    let mut future = 0;
    while future < reach {
        let Some(e) = cur.and_then(|id| by_id.get(id)) else { break };
        let take = (reach - future).min(e.tokens.len());
        stream.extend_from_slice(&e.tokens[..take]);
        future += take;
        cur = e.next.as_deref();
    }
    (stream, start)
}

pub fn generate_mock_reps(
    entries: &[ManifestEntry],
    vocab: usize,
    spec: &MockTeacherSpec,
) -> Result<TeacherRepSet> {
    if !(0.0..=1.0).contains(&spec.mask_rate) {
        return Err(Error::config("mock teacher mask rate must be in [0, 1]"));
    }
    let mut set = TeacherRepSet::new(spec.teacher.clone(), spec.layers, spec.dim, spec.variants)?;
    let weights = MockWeights::new(spec, vocab);
    let w = spec.lookahead as usize;
    let by_id: HashMap<&str, &ManifestEntry> = entries.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut layer_buf = Vec::new();
    for e in entries {
        if let Some(&t) = e.tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::input(format!("utterance {}: token {t} outside vocabulary", e.id)));
        }
        let (stream, start) = context_stream(e, &by_id, w);
        let n = e.tokens.len();
        let d = spec.dim as usize;
        let l = spec.layers as usize;
        let mut data = vec![0f32; spec.variants as usize * l * n * d];
        for v in 0..spec.variants as usize {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_keyed(
                spec.seed,
                "mock.mask",
                &e.id,
                &[v as u64],
            ));
            for i in 0..n {
                let centre = (start + i) as isize;
                let mut window = Vec::with_capacity(2 * w + 1);
                for (slot, off) in (-(w as isize)..=w as isize).enumerate() {
                    let p = centre + off;
                    if p < 0 || p as usize >= stream.len() {
                        continue;
                    }
                    // draw for every context slot so masks stay aligned across rates
                    let masked = off != 0 && v > 0 && rng.random::<f64>() < spec.mask_rate;
                    if !masked {
                        window.push((slot, stream[p as usize]));
                    }
                }
                weights.layers(&window, &mut layer_buf);
                for (layer, h) in layer_buf.iter().enumerate() {
                    let at = ((v * l + layer) * n + i) * d;
                    data[at..at + d].copy_from_slice(h);
                }
            }
        }
        set.insert(e.id.clone(), n, data)?;
    }
    Ok(set)
}

/// Cosine similarity, used to compare teacher vectors.
pub fn cosine<T: Real>(a: &[T], b: &[T]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x.to_f64() * y.to_f64()).sum();
    let na: f64 = a.iter().map(|x| x.to_f64().powi(2)).sum();
    let nb: f64 = b.iter().map(|x| x.to_f64().powi(2)).sum();
    dot / (na * nb).sqrt()
}
