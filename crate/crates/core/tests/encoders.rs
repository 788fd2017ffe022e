use std::f64::consts::PI;

use clam_core::encoders::{
    encode, expand_layers, filterbank_energies, load_layerstack, orthogonal_projection, preprocess,
    save_layerstack, EncoderSpec, LayerStack, StreamTag, Waveform, LOG_FLOOR,
};
use clam_core::tensor::Tensor;
use clam_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sine(freq: f64, rate: f64, secs: f64) -> Waveform {
    let n = (rate * secs) as usize;
    let s = (0..n).map(|i| 0.5 * (2.0 * PI * freq * i as f64 / rate).sin()).collect();
    Waveform::new(s, rate).unwrap()
}

fn noise(rate: f64, secs: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (rate * secs) as usize;
    Waveform::new((0..n).map(|_| rng.random_range(-0.5..0.5)).collect(), rate).unwrap()
}

/// Index of the largest-magnitude bin of a plain O(N²) DFT.
fn dft_peak_bin(x: &[f64]) -> usize {
    let n = x.len();
    (1..n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            (k, re * re + im * im)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

#[test]
fn trim_only_keeps_first_90_seconds_bit_identical() {
    let w = noise(24_000.0, 120.0, 1);
    let out = preprocess(&w, 24_000.0, 90.0).unwrap();
    assert_eq!(out.sample_rate(), 24_000.0);
    assert_eq!(out.samples().len(), 90 * 24_000);
    assert_eq!(out.samples(), &w.samples()[..90 * 24_000]);
}

#[test]
fn shorter_than_limit_is_unchanged() {
    let w = noise(24_000.0, 10.0, 2);
    let out = preprocess(&w, 24_000.0, 90.0).unwrap();
    assert_eq!(out, w);
}

#[test]
fn downsampled_sine_keeps_its_frequency() {
    let w = sine(440.0, 48_000.0, 1.0);
    let out = preprocess(&w, 24_000.0, 90.0).unwrap();
    assert_eq!(out.sample_rate(), 24_000.0);
    assert_eq!(out.samples().len(), 24_000);
    let n = 4096;
    let seg = &out.samples()[8000..8000 + n];
    let expected = 440.0 * n as f64 / 24_000.0;
    let peak = dft_peak_bin(seg) as f64;
    assert!((peak - expected).abs() <= 1.0, "peak bin {peak}, expected {expected}");
}

#[test]
fn aliasing_tone_is_suppressed() {
    // 20 kHz folds to 4 kHz at 24 kHz without the anti-alias filter
    let w = sine(20_000.0, 48_000.0, 0.5);
    let out = preprocess(&w, 24_000.0, 90.0).unwrap();
    let mid = &out.samples()[1000..out.samples().len() - 1000];
    let rms = (mid.iter().map(|v| v * v).sum::<f64>() / mid.len() as f64).sqrt();
    assert!(rms < 0.01 * 0.5 / 2f64.sqrt(), "residual rms {rms}");
}

#[test]
fn preprocess_is_idempotent() {
    let w = noise(44_100.0, 2.0, 3);
    let once = preprocess(&w, 24_000.0, 1.5).unwrap();
    let twice = preprocess(&once, 24_000.0, 1.5).unwrap();
    assert_eq!(once.samples().len(), twice.samples().len());
    for (a, b) in once.samples().iter().zip(twice.samples()) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn silence_gives_constant_layers() {
    let w = Waveform::new(vec![0.0; 24_000], 24_000.0).unwrap();
    let spec = EncoderSpec::music(16, 3, 9);
    let stack = encode(&w, &spec).unwrap();
    let floor = LOG_FLOOR.ln() as f32;
    assert!(stack.layer(0).iter().all(|&v| v == floor));
    for l in 1..3 {
        let layer = stack.layer(l);
        let first_row = &layer[..16];
        for row in layer.chunks(16) {
            assert_eq!(row, first_row);
        }
    }
}

#[test]
fn encode_is_deterministic() {
    let w = noise(24_000.0, 1.0, 4);
    let spec = EncoderSpec::vocal(16, 4, 77);
    let a = encode(&w, &spec).unwrap();
    let b = encode(&w, &spec).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(a.stream(), StreamTag::Vocal);
}

#[test]
fn sine_concentrates_filterbank_energy_more_than_noise() {
    let spec = EncoderSpec::music(32, 1, 0);
    let share = |w: &Waveform| {
        let e = filterbank_energies(w, &spec).unwrap();
        let (t, d) = (e.shape()[0], e.shape()[1]);
        (0..t)
            .map(|r| {
                let row = &e.data()[r * d..(r + 1) * d];
                row.iter().cloned().fold(0.0, f64::max) / row.iter().sum::<f64>()
            })
            .sum::<f64>()
            / t as f64
    };
    let s = share(&sine(440.0, 24_000.0, 1.0));
    let n = share(&noise(24_000.0, 1.0, 5));
    assert!(s > n, "sine share {s} vs noise share {n}");
    assert!(s > 0.3);
}

#[test]
fn orthogonal_projection_preserves_norms() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..20 {
        let d = 1 + seed as usize % 17;
        let q = orthogonal_projection(d, seed);
        for _ in 0..10 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..d)
                .map(|j| (0..d).map(|i| x[i] * q.at(i, j)).sum())
                .collect();
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((nx - ny).abs() <= 1e-9);
        }
    }
}

#[test]
fn expanded_layers_apply_tanh_of_projection() {
    let first = Tensor::matrix(2, 3, vec![0.1, -0.4, 2.0, 1.0, 0.0, -1.0]).unwrap();
    let layers = expand_layers(first.clone(), 2, StreamTag::Music, 5);
    assert_eq!(layers[0], first);
    assert!(layers[1].data().iter().all(|v| v.abs() < 1.0));
}

#[test]
fn doubling_duration_roughly_doubles_frames() {
    for (spec, secs) in [(EncoderSpec::music(8, 1, 0), 0.7), (EncoderSpec::vocal(8, 1, 0), 0.3)] {
        let w = noise(24_000.0, secs, 6);
        let mut tiled = w.samples().to_vec();
        tiled.extend_from_slice(w.samples());
        let w2 = Waveform::new(tiled, 24_000.0).unwrap();
        let t = encode(&w, &spec).unwrap().frames();
        let t2 = encode(&w2, &spec).unwrap().frames();
        let slack = spec.window / spec.hop;
        assert!(t2 + slack >= 2 * t, "T={t}, T'={t2}");
    }
}

fn random_stack(seed: u64) -> LayerStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (l, t, d) = (3, 5, 4);
    let data = (0..l * t * d).map(|_| rng.random_range(-2.0f32..2.0)).collect();
    LayerStack::new(StreamTag::Music, l, t, d, 0.02, data).unwrap()
}

#[test]
fn layerstack_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.clms");
    let stack = random_stack(1);
    save_layerstack(&stack, &path).unwrap();
    let back = load_layerstack(&path).unwrap();
    assert_eq!(back, stack);
    assert_eq!(std::fs::read(&path).unwrap(), back.to_bytes());
}

#[test]
fn minimal_stack_holds_its_value() {
    let s = LayerStack::new(StreamTag::Vocal, 1, 1, 1, 0.5, vec![0.5]).unwrap();
    let back = LayerStack::from_bytes(&s.to_bytes()).unwrap();
    assert_eq!(back.layer(0), &[0.5]);
    assert_eq!(back.stream(), StreamTag::Vocal);
}

#[test]
fn corrupted_files_give_specific_errors() {
    let bytes = random_stack(2).to_bytes();

    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"XXXX");
    assert!(matches!(LayerStack::from_bytes(&bad), Err(Error::Format(_))));

    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    assert!(matches!(LayerStack::from_bytes(&bad_version), Err(Error::Format(_))));

    let cut = &bytes[..bytes.len() - 10];
    match LayerStack::from_bytes(cut) {
        Err(Error::Truncated { expected, actual }) => {
            assert_eq!(expected, bytes.len());
            assert_eq!(actual, bytes.len() - 10);
        }
        other => panic!("{other:?}"),
    }

    // header alone is validated before any payload is read
    assert!(matches!(LayerStack::from_bytes(&bytes[..12]), Err(Error::Truncated { .. })));
}

#[test]
fn wav_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    let w = sine(220.0, 16_000.0, 0.25);
    clam_core::encoders::write_wav(&path, &w).unwrap();
    let back = clam_core::encoders::read_wav(&path).unwrap();
    assert_eq!(back.sample_rate(), 16_000.0);
    assert_eq!(back.samples().len(), w.samples().len());
    for (a, b) in back.samples().iter().zip(w.samples()) {
        assert!((a - b).abs() < 1e-7);
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn layerstack_bytes_round_trip(seed in 0u64..10_000) {
            let s = random_stack(seed);
            let b = s.to_bytes();
            prop_assert_eq!(LayerStack::from_bytes(&b).unwrap().to_bytes(), b);
        }
    }
}
