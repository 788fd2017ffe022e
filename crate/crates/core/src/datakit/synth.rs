//! Synthetic paired streams with a controllable cross-stream dependency.
//!
//! Every track draws a smoothed latent trajectory `z` (`T × k`). The music
//! stream's first layer is `z·A_m + noise`; the vocal stream's is
//! `z·A_v + noise` for real tracks and `z'·A_v + noise` for fakes, with
//! `z' = c·z + (1 − c)·z_ind` and `z_ind` independent white noise. Further
//! layers follow the toy encoders (`tanh` of seeded orthogonal rotations).
//! At `c = 1` fakes are generated exactly like reals.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{kl_discrete, stack_paths, write_manifest, LabeledTrack, Split, Splits, Tier, TrackRecord};
use crate::encoders::{expand_layers, save_layerstack, LayerStack, StreamTag};
use crate::error::{Error, Result};
use crate::model::TrackFeatures;
use crate::tensor::tape::matmul_data;
use crate::tensor::Tensor;

/// Moving-average window applied to latent trajectories.
pub const SMOOTHING: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_real: usize,
    pub n_fake: usize,
    pub latent_dim: usize,
    pub frames: usize,
    pub features: usize,
    pub layers: usize,
    pub coupling: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_real: 1375,
            n_fake: 1375,
            latent_dim: 8,
            frames: 32,
            features: 16,
            layers: 4,
            coupling: 0.2,
            noise_scale: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::Config(format!("coupling must lie in [0, 1], got {}", self.coupling)));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::Config(format!("noise scale must be >= 0, got {}", self.noise_scale)));
        }
        if self.frames == 0 || self.features == 0 || self.layers == 0 || self.latent_dim == 0 {
            return Err(Error::Config("frames, features, layers and latent_dim must be >= 1".into()));
        }
        if self.latent_dim > self.features {
            return Err(Error::Config(format!(
                "latent_dim {} exceeds feature dim {}",
                self.latent_dim, self.features
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthTrack {
    pub id: String,
    pub music: LayerStack,
    pub vocal: LayerStack,
    pub label: u8,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            scale * g
        })
        .collect()
}

/// `T × k` moving average of white noise, rescaled to unit variance.
fn trajectory(rng: &mut ChaCha8Rng, frames: usize, k: usize) -> Vec<f64> {
    let raw = gaussian(rng, (frames + SMOOTHING - 1) * k, 1.0);
    let mut z = vec![0.0; frames * k];
    for t in 0..frames {
        for w in 0..SMOOTHING {
            for j in 0..k {
                z[t * k + j] += raw[(t + w) * k + j];
            }
        }
    }
    z.iter_mut().for_each(|v| *v /= (SMOOTHING as f64).sqrt());
    z
}

/// Frame hop recorded on synthetic stacks (vocal-encoder hop at 24 kHz).
const FRAME_HOP: f64 = 128.0 / 24_000.0;

fn stack(
    latent: &[f64],
    mixing: &[f64],
    spec: &SynthSpec,
    stream: StreamTag,
    rng: &mut ChaCha8Rng,
) -> Result<LayerStack> {
    let (t, k, d) = (spec.frames, spec.latent_dim, spec.features);
    let mut first = matmul_data(latent, mixing, t, k, d);
    for (v, n) in first.iter_mut().zip(gaussian(rng, t * d, spec.noise_scale)) {
        *v += n;
    }
    let layers = expand_layers(Tensor::matrix(t, d, first)?, spec.layers, stream, spec.seed);
    LayerStack::from_layers(stream, FRAME_HOP, &layers)
}

/// Generates `n_real` real tracks followed by `n_fake` fakes. Track `i`
/// draws from its own generator seeded with `seed ⊕ i`, so tracks can be
/// produced independently and in any order.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<SynthTrack>> {
    spec.validate()?;
    let (k, d) = (spec.latent_dim, spec.features);
    let mut shared = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale = 1.0 / (k as f64).sqrt();
    let a_m = gaussian(&mut shared, k * d, scale);
    let a_v = gaussian(&mut shared, k * d, scale);
    let c = spec.coupling;
    (0..spec.n_real + spec.n_fake)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ i as u64);
            rng.set_stream(1);
            let label = u8::from(i >= spec.n_real);
            let z = trajectory(&mut rng, spec.frames, k);
            let z_ind = gaussian(&mut rng, spec.frames * k, 1.0);
            let music = stack(&z, &a_m, spec, StreamTag::Music, &mut rng)?;
            let vocal_latent: Vec<f64> = if label == 0 {
                z
            } else {
                z.iter().zip(&z_ind).map(|(a, b)| c * a + (1.0 - c) * b).collect()
            };
            let vocal = stack(&vocal_latent, &a_v, spec, StreamTag::Vocal, &mut rng)?;
            Ok(SynthTrack {
                id: format!("synth-{i:05}"),
                music,
                vocal,
                label,
            })
        })
        .collect()
}

/// RV coefficient between the first layers of the two streams: the
/// squared Frobenius norm of the frame-centred cross-covariance,
/// normalised by the auto-covariance norms. Lies in `[0, 1]`.
pub fn cross_stream_statistic(music: &LayerStack, vocal: &LayerStack) -> Result<f64> {
    if music.frames() != vocal.frames() {
        return Err(Error::dim("cross_stream_statistic", &[music.frames()], &[vocal.frames()]));
    }
    let centred = |s: &LayerStack| {
        let (t, d) = (s.frames(), s.features());
        let x = s.layer(0);
        let mut out: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        for j in 0..d {
            let mean = (0..t).map(|r| out[r * d + j]).sum::<f64>() / t as f64;
            (0..t).for_each(|r| out[r * d + j] -= mean);
        }
        (out, t, d)
    };
    let (x, t, dx) = centred(music);
    let (y, _, dy) = centred(vocal);
    let cov = |a: &[f64], da: usize, b: &[f64], db: usize| {
        let mut c = vec![0.0; da * db];
        for r in 0..t {
            for i in 0..da {
                for j in 0..db {
                    c[i * db + j] += a[r * da + i] * b[r * db + j];
                }
            }
        }
        c.iter().map(|v| v * v).sum::<f64>()
    };
    let (sxy, sxx, syy) = (cov(&x, dx, &y, dy), cov(&x, dx, &x, dx), cov(&y, dy, &y, dy));
    let denom = (sxx * syy).sqrt();
    Ok(if denom > 0.0 { sxy / denom } else { 0.0 })
}

/// Add-one smoothed histogram of values in `[0, 1]` over `bins` equal bins,
/// as a probability vector. Values outside the range are clamped.
pub fn histogram(values: &[f64], bins: usize) -> Vec<f64> {
    let mut counts = vec![1.0; bins];
    for &v in values {
        let b = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[b] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}

/// KL divergence between the 20-bin histograms of the cross-stream
/// statistic over real and over fake tracks.
pub fn stat_kl(tracks: &[SynthTrack]) -> Result<f64> {
    let (mut real, mut fake) = (Vec::new(), Vec::new());
    for t in tracks {
        let s = cross_stream_statistic(&t.music, &t.vocal)?;
        if t.label == 0 { real.push(s) } else { fake.push(s) }
    }
    kl_discrete(&histogram(&real, 20), &histogram(&fake, 20))
}

/// Mean of [`stat_kl`] over `seeds` for each coupling value, all other
/// fields taken from `base`.
pub fn kl_by_coupling(base: &SynthSpec, couplings: &[f64], seeds: &[u64]) -> Result<Vec<f64>> {
    couplings
        .iter()
        .map(|&coupling| {
            let mut total = 0.0;
            for &seed in seeds {
                total += stat_kl(&synth_dataset(&SynthSpec {
                    coupling,
                    seed,
                    ..base.clone()
                })?)?;
            }
            Ok(total / seeds.len().max(1) as f64)
        })
        .collect()
}

/// Seeded assignment of exactly `n_val` validation and `n_test` test slots
/// among `n` tracks; the rest train.
pub fn assign_splits(n: usize, n_val: usize, n_test: usize, seed: u64) -> Result<Vec<Split>> {
    if n_val + n_test > n {
        return Err(Error::Config(format!(
            "cannot hold out {n_val} val + {n_test} test tracks from {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Split::Train; n];
    for (rank, &i) in idx.iter().enumerate() {
        if rank < n_test {
            out[i] = Split::Test;
        } else if rank < n_test + n_val {
            out[i] = Split::Val;
        }
    }
    Ok(out)
}

/// Validation and test tracks held out of a synthetic dataset.
pub const SYNTH_VAL: usize = 250;
pub const SYNTH_TEST: usize = 500;

/// Train/val/test tracks of a generated dataset under the standard hold-out
/// sizes, split with the dataset seed.
pub fn synth_splits(spec: &SynthSpec) -> Result<Splits<LabeledTrack>> {
    let data = synth_dataset(spec)?;
    let splits = assign_splits(data.len(), SYNTH_VAL, SYNTH_TEST, spec.seed)?;
    let mut out = Splits::default();
    for (t, split) in data.into_iter().zip(splits) {
        let track = LabeledTrack {
            features: TrackFeatures::from_stacks(&t.music, &t.vocal),
            id: t.id,
            label: t.label,
            generator: if t.label == 0 { "real".into() } else { "synth".into() },
        };
        match split {
            Split::Train => out.train.push(track),
            Split::Val => out.val.push(track),
            Split::Test => out.test.push(track),
        }
    }
    Ok(out)
}

/// Writes each track's stacks under `dir/features/` and a `manifest.tsv`
/// listing them with the given splits. Returns the records.
pub fn materialize(tracks: &[SynthTrack], splits: &[Split], dir: &Path) -> Result<Vec<TrackRecord>> {
    if splits.len() != tracks.len() {
        return Err(Error::dim("materialize", &[tracks.len()], &[splits.len()]));
    }
    let feat = dir.join("features");
    std::fs::create_dir_all(&feat).map_err(|e| Error::io(&feat, e))?;
    let mut records = Vec::with_capacity(tracks.len());
    for (t, &split) in tracks.iter().zip(splits) {
        let (mp, vp) = stack_paths(&feat.join(&t.id));
        save_layerstack(&t.music, &mp)?;
        save_layerstack(&t.vocal, &vp)?;
        records.push(TrackRecord {
            id: t.id.clone(),
            path: format!("features/{}", t.id),
            label: t.label,
            tier: if t.label == 0 { Tier::Real } else { Tier::FullyFake },
            generator: if t.label == 0 { "real".into() } else { "synth".into() },
            split,
        });
    }
    write_manifest(&dir.join("manifest.tsv"), &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_wider_than_features_is_rejected() {
        let spec = SynthSpec {
            latent_dim: 20,
            features: 16,
            ..SynthSpec::default()
        };
        assert!(matches!(synth_dataset(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn shapes_and_labels() {
        let spec = SynthSpec {
            n_real: 3,
            n_fake: 2,
            ..SynthSpec::default()
        };
        let data = synth_dataset(&spec).unwrap();
        assert_eq!(data.len(), 5);
        assert_eq!(data.iter().map(|t| t.label).collect::<Vec<_>>(), vec![0, 0, 0, 1, 1]);
        let m = &data[0].music;
        assert_eq!((m.layers(), m.frames(), m.features()), (4, 32, 16));
        assert_eq!(data[0].vocal.stream(), StreamTag::Vocal);
    }

    #[test]
    fn statistic_is_one_for_identical_streams() {
        let spec = SynthSpec {
            n_real: 1,
            n_fake: 0,
            ..SynthSpec::default()
        };
        let t = &synth_dataset(&spec).unwrap()[0];
        assert!((cross_stream_statistic(&t.music, &t.music).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_counts_are_exact() {
        let s = assign_splits(100, 10, 25, 4).unwrap();
        assert_eq!(s.iter().filter(|&&x| x == Split::Val).count(), 10);
        assert_eq!(s.iter().filter(|&&x| x == Split::Test).count(), 25);
        assert_eq!(s, assign_splits(100, 10, 25, 4).unwrap());
    }

    #[test]
    fn histogram_is_a_distribution() {
        let h = histogram(&[0.0, 0.5, 1.0, 0.99], 20);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(h.iter().all(|&p| p > 0.0));
    }
}
