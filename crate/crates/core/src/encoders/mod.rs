//! Two parallel multi-layer projections of one mixed waveform.
//!
//! The toy encoders stand in for pretrained audio models: a framed
//! magnitude spectrum pooled through a triangular mel filterbank and
//! log-compressed forms layer 1, and each further layer is a seeded
//! orthogonal rotation of the previous one followed by `tanh`. The music
//! stream uses long windows (harmonic detail), the vocal stream short ones
//! (temporal detail). Features from real encoders can be ingested through
//! [`load_layerstack`] instead.

mod resample;
mod stack;
mod wav;

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub use resample::{lowpass_kernel, resample};
pub use stack::{load_layerstack, save_layerstack, LayerStack, StreamTag};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};
use crate::tensor::tape::matmul_data;
use crate::tensor::Tensor;

/// Floor applied to filterbank energies before the log.
pub const LOG_FLOOR: f64 = 1e-10;
pub const TARGET_RATE: f64 = 24_000.0;
pub const MAX_DURATION: f64 = 90.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::Config(format!("sample rate must be positive, got {sample_rate}")));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric { kernel: "waveform" });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

/// Head-trims to `max_duration` seconds, then resamples to `target_rate`.
pub fn preprocess(w: &Waveform, target_rate: f64, max_duration: f64) -> Result<Waveform> {
    if !(target_rate > 0.0) {
        return Err(Error::Config(format!("target rate must be positive, got {target_rate}")));
    }
    if w.samples.is_empty() {
        return Err(Error::Contract("cannot preprocess an empty waveform".into()));
    }
    let keep = ((max_duration * w.sample_rate).floor() as usize).min(w.samples.len());
    let trimmed = &w.samples[..keep];
    Waveform::new(resample(trimmed, w.sample_rate, target_rate), target_rate)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderSpec {
    pub stream: StreamTag,
    pub window: usize,
    pub hop: usize,
    pub n_filters: usize,
    pub n_layers: usize,
    pub projection_seed: u64,
}

impl EncoderSpec {
    pub fn music(n_filters: usize, n_layers: usize, projection_seed: u64) -> Self {
        Self {
            stream: StreamTag::Music,
            window: 1024,
            hop: 512,
            n_filters,
            n_layers,
            projection_seed,
        }
    }

    pub fn vocal(n_filters: usize, n_layers: usize, projection_seed: u64) -> Self {
        Self {
            stream: StreamTag::Vocal,
            window: 256,
            hop: 128,
            n_filters,
            n_layers,
            projection_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.window < self.hop {
            return Err(Error::Config(format!(
                "need window >= hop > 0, got window {} hop {}",
                self.window, self.hop
            )));
        }
        if self.n_filters == 0 || self.n_layers == 0 {
            return Err(Error::Config("n_filters and n_layers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn frames_for(&self, n_samples: usize) -> usize {
        if n_samples < self.window {
            0
        } else {
            (n_samples - self.window) / self.hop + 1
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over the `window/2 + 1` magnitude bins.
/// Filters too narrow to cover a bin fall back to their nearest bin.
pub fn mel_filterbank(n_filters: usize, window: usize, sample_rate: f64) -> Vec<Vec<f64>> {
    let n_bins = window / 2 + 1;
    let bin_hz = sample_rate / window as f64;
    let top = hz_to_mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_filters + 1) as f64))
        .collect();
    (0..n_filters)
        .map(|f| {
            let (lo, mid, hi) = (edges[f], edges[f + 1], edges[f + 2]);
            let mut w: Vec<f64> = (0..n_bins)
                .map(|k| {
                    let hz = k as f64 * bin_hz;
                    if hz <= lo || hz >= hi {
                        0.0
                    } else if hz <= mid {
                        (hz - lo) / (mid - lo)
                    } else {
                        (hi - hz) / (hi - mid)
                    }
                })
                .collect();
            if w.iter().all(|&x| x == 0.0) {
                let nearest = ((mid / bin_hz).round() as usize).min(n_bins - 1);
                w[nearest] = 1.0;
            }
            w
        })
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Linear (pre-log) filterbank energies, `T × n_filters`.
pub fn filterbank_energies(w: &Waveform, spec: &EncoderSpec) -> Result<Tensor> {
    spec.validate()?;
    let n = w.samples.len();
    if n < spec.window {
        return Err(Error::InputTooShort {
            needed: spec.window,
            got: n,
        });
    }
    let frames = spec.frames_for(n);
    let window = hann(spec.window);
    let bank = mel_filterbank(spec.n_filters, spec.window, w.sample_rate);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(spec.window);
    let mut buf = vec![Complex::new(0.0, 0.0); spec.window];
    let mut out = Vec::with_capacity(frames * spec.n_filters);
    for t in 0..frames {
        let start = t * spec.hop;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = Complex::new(w.samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        let mag: Vec<f64> = buf[..spec.window / 2 + 1].iter().map(|c| c.norm()).collect();
        for filt in &bank {
            out.push(filt.iter().zip(&mag).map(|(a, b)| a * b).sum());
        }
    }
    Tensor::new(vec![frames, spec.n_filters], out)
}

/// Seeded `d × d` orthogonal matrix (QR of a Gaussian matrix, sign-fixed).
pub fn orthogonal_projection(d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let data = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| q[(i, j)]).collect();
    Tensor::matrix(d, d, data).expect("square")
}

/// Seed of the projection feeding layer `layer` (1-based, ≥ 2).
fn layer_seed(base: u64, stream: StreamTag, layer: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((stream.code() as u64) << 32)
        ^ layer as u64
}

/// Expands a first layer into `n_layers` maps: each further layer is
/// `tanh(previous · Q)` with a seeded orthogonal `Q`.
pub fn expand_layers(first: Tensor, n_layers: usize, stream: StreamTag, seed: u64) -> Vec<Tensor> {
    let (t, d) = (first.shape()[0], first.shape()[1]);
    let mut layers = vec![first];
    for l in 2..=n_layers {
        let q = orthogonal_projection(d, layer_seed(seed, stream, l));
        let prev = layers.last().unwrap();
        let mut next = matmul_data(prev.data(), q.data(), t, d, d);
        next.iter_mut().for_each(|v| *v = v.tanh());
        layers.push(Tensor::matrix(t, d, next).expect("layer shape"));
    }
    layers
}

/// Encodes a (preprocessed) waveform into an `L`-layer stack.
pub fn encode(w: &Waveform, spec: &EncoderSpec) -> Result<LayerStack> {
    let energies = filterbank_energies(w, spec)?;
    let (t, d) = (energies.shape()[0], energies.shape()[1]);
    let logged = energies.data().iter().map(|&e| e.max(LOG_FLOOR).ln()).collect();
    let first = Tensor::matrix(t, d, logged)?;
    let layers = expand_layers(first, spec.n_layers, spec.stream, spec.projection_seed);
    LayerStack::from_layers(spec.stream, spec.hop as f64 / w.sample_rate, &layers)
}
