//! Windowed-sinc low-pass followed by linear interpolation.

use std::f64::consts::PI;

/// Half-length of the low-pass kernel in taps.
const HALF_TAPS: usize = 32;

fn blackman(n: usize, len: usize) -> f64 {
    let x = n as f64 / (len - 1) as f64;
    0.42 - 0.5 * (2.0 * PI * x).cos() + 0.08 * (4.0 * PI * x).cos()
}

/// Symmetric low-pass FIR with cutoff `cutoff` as a fraction of the
/// sampling rate (0 < cutoff ≤ 0.5). Taps sum to 1.
pub fn lowpass_kernel(cutoff: f64) -> Vec<f64> {
    let len = 2 * HALF_TAPS + 1;
    let mut taps: Vec<f64> = (0..len)
        .map(|n| {
            let m = n as f64 - HALF_TAPS as f64;
            let sinc = if m == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * m).sin() / (PI * m)
            };
            sinc * blackman(n, len)
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Zero-padded "same" convolution.
pub fn filter(samples: &[f64], taps: &[f64]) -> Vec<f64> {
    let half = taps.len() / 2;
    let n = samples.len();
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let j = i as isize + k as isize - half as isize;
                if j >= 0 && (j as usize) < n {
                    acc += t * samples[j as usize];
                }
            }
            acc
        })
        .collect()
}

/// Resamples from `from` Hz to `to` Hz. Downsampling low-passes at 0.45 of
/// the target rate first; equal rates return the input unchanged.
pub fn resample(samples: &[f64], from: f64, to: f64) -> Vec<f64> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let source = if to < from {
        filter(samples, &lowpass_kernel(0.45 * to / from))
    } else {
        samples.to_vec()
    };
    let out_len = ((samples.len() as f64) * to / from).floor() as usize;
    let step = from / to;
    let last = source.len() - 1;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let k = pos.floor() as usize;
            if k >= last {
                return source[last];
            }
            let frac = pos - k as f64;
            source[k] * (1.0 - frac) + source[k + 1] * frac
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_has_unit_dc_gain_and_is_symmetric() {
        let k = lowpass_kernel(0.2);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..k.len() / 2 {
            assert!((k[i] - k[k.len() - 1 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_signal_survives_resampling() {
        let x = vec![0.5; 4800];
        let y = resample(&x, 48_000.0, 24_000.0);
        assert_eq!(y.len(), 2400);
        // away from the zero-padded edges
        for v in &y[50..2350] {
            assert!((v - 0.5).abs() < 1e-9);
        }
    }
}
