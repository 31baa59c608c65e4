use rand_chacha::ChaCha8Rng;

use super::{Affine, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Real};

/// Stack of `tanh(W x + b)` layers applied to frames stacked `subsample` at
/// a time. The last group is zero-padded, so `T = ⌈T_raw / s⌉`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub subsample: usize,
    pub layers: Vec<Affine<T>>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    stacked: Matrix<T>,
    /// Post-activation output of every layer.
    outputs: Vec<Matrix<T>>,
}

impl<T: Real> EncoderParams<T> {
    pub fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![config.d_in * config.subsample];
        dims.extend_from_slice(&config.encoder_hidden);
        dims.push(config.d_trs);
        let layers = dims
            .windows(2)
            .map(|w| Affine::init(w[1], w[0], rng))
            .collect();
        Self {
            subsample: config.subsample,
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim() / self.subsample
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Affine::out_dim)
    }

    pub(crate) fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("encoder.{i}"), f);
        }
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("encoder.{i}"), f);
        }
    }

    pub(crate) fn cast<U: Real>(&self) -> EncoderParams<U> {
        EncoderParams {
            subsample: self.subsample,
            layers: self
                .layers
                .iter()
                .map(|l| Affine {
                    weight: l.weight.cast(),
                    bias: l.bias.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                })
                .collect(),
        }
    }

    /// Accumulates parameter gradients given `∂L/∂φ`.
    pub(crate) fn backward(&self, cache: &EncoderCache<T>, d_out: &Matrix<T>, grads: &mut Self) {
        let frames = d_out.rows();
        let mut upstream = d_out.clone();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let out = &cache.outputs[li];
            let input = if li == 0 {
                &cache.stacked
            } else {
                &cache.outputs[li - 1]
            };
            let mut below = Matrix::zeros(frames, layer.in_dim());
            for t in 0..frames {
                let delta: Vec<T> = upstream
                    .row(t)
                    .iter()
                    .zip(out.row(t))
                    .map(|(&g, &y)| g * (T::ONE - y * y))
                    .collect();
                let g = &mut grads.layers[li];
                g.weight.add_outer(&delta, input.row(t));
                for (b, &d) in g.bias.iter_mut().zip(&delta) {
                    *b += d;
                }
                if li > 0 {
                    layer.weight.matvec_t_acc(&delta, below.row_mut(t));
                }
            }
            upstream = below;
        }
    }
}

/// Maps `T_raw × d_in` frames to `φ`, shape `⌈T_raw/s⌉ × d_trs`.
pub fn encode_acoustic<T: Real>(
    frames: &Matrix<T>,
    params: &EncoderParams<T>,
) -> Result<(Matrix<T>, EncoderCache<T>)> {
    let s = params.subsample;
    if frames.rows() == 0 {
        return Err(Error::input("no acoustic frames"));
    }
    if frames.rows() < s {
        return Err(Error::input(format!(
            "{} frames is fewer than the subsampling factor {s}",
            frames.rows()
        )));
    }
    let d_in = params.input_dim();
    if frames.cols() != d_in {
        return Err(Error::contract(format!(
            "frames have {} features, encoder expects {d_in}",
            frames.cols()
        )));
    }
    let out_frames = frames.rows().div_ceil(s);
    let mut stacked = Matrix::zeros(out_frames, s * d_in);
    for t in 0..out_frames {
        let row = stacked.row_mut(t);
        for j in 0..s {
            let src = t * s + j;
            if src < frames.rows() {
                row[j * d_in..(j + 1) * d_in].copy_from_slice(frames.row(src));
            }
        }
    }
    let mut outputs: Vec<Matrix<T>> = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let input = outputs.last().unwrap_or(&stacked);
        let mut out = Matrix::zeros(out_frames, layer.out_dim());
        for t in 0..out_frames {
            let y = layer.apply(input.row(t));
            for (o, v) in out.row_mut(t).iter_mut().zip(y) {
                *o = v.tanh();
            }
        }
        outputs.push(out);
    }
    let phi = outputs.last().cloned().unwrap_or_else(|| stacked.clone());
    Ok((phi, EncoderCache { stacked, outputs }))
}
