use clam_core::datakit::{synth_dataset, LabeledTrack, SynthSpec};
use clam_core::model::{ClamParams, ModelConfig, TrackFeatures};
use clam_core::objectives::AlignmentKind;
use clam_core::tensor::Tensor;
use clam_core::trainer::{adamw_step, format_history, train, AdamConfig, OptState, TrainConfig};
use clam_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tracks(n_real: usize, n_fake: usize, seed: u64) -> Vec<LabeledTrack> {
    let spec = SynthSpec {
        n_real,
        n_fake,
        frames: 8,
        features: 8,
        latent_dim: 4,
        layers: 2,
        seed,
        ..SynthSpec::default()
    };
    synth_dataset(&spec)
        .unwrap()
        .into_iter()
        .map(|t| LabeledTrack {
            features: TrackFeatures::from_stacks(&t.music, &t.vocal),
            id: t.id,
            label: t.label,
            generator: "synth".into(),
        })
        .collect()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        epochs: 3,
        seed: 4,
        model: ModelConfig {
            layers: 2,
            features: 8,
            embed: 4,
            heads: 2,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

/// Textbook Adam on flat slices, written independently of the library.
fn reference_adam(theta: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], t: i32, cfg: &AdamConfig) {
    for i in 0..theta.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i].powi(2);
        let m_hat = m[i] / (1.0 - cfg.beta1.powi(t));
        let v_hat = v[i] / (1.0 - cfg.beta2.powi(t));
        theta[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[test]
fn adam_matches_reference_for_100_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cfg = AdamConfig {
        lr: 0.01,
        ..AdamConfig::default()
    };
    let shapes = [vec![3, 4], vec![1, 5], vec![2, 2]];
    let mut params: Vec<Tensor> = shapes
        .iter()
        .map(|s| Tensor::new(s.clone(), (0..s[0] * s[1]).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let mut reference: Vec<Vec<f64>> = params.iter().map(|p| p.data().to_vec()).collect();
    let mut ref_m: Vec<Vec<f64>> = reference.iter().map(|p| vec![0.0; p.len()]).collect();
    let mut ref_v = ref_m.clone();
    let mut state = OptState::new(params.iter());
    let names: Vec<String> = (0..3).map(|i| format!("p{i}")).collect();
    for step in 1..=100 {
        let grads: Vec<Tensor> = shapes
            .iter()
            .map(|s| Tensor::new(s.clone(), (0..s[0] * s[1]).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap())
            .collect();
        let mut refs: Vec<&mut Tensor> = params.iter_mut().collect();
        adamw_step(&mut refs, &grads, &names, &mut state, &cfg).unwrap();
        for i in 0..3 {
            reference_adam(&mut reference[i], &mut ref_m[i], &mut ref_v[i], grads[i].data(), step, &cfg);
            for (a, b) in params[i].data().iter().zip(&reference[i]) {
                assert!((a - b).abs() <= 1e-12, "step {step}: {a} vs {b}");
            }
        }
    }
    assert_eq!(state.t, 100);
}

#[test]
fn lambda_zero_is_bit_identical_to_no_alignment() {
    let data = tracks(12, 12, 3);
    let (train_set, val_set) = data.split_at(18);
    let mut with_zero = small_config();
    with_zero.loss.alignment = AlignmentKind::Triplet;
    with_zero.loss.lambda = 0.0;
    let mut none = small_config();
    none.loss.alignment = AlignmentKind::None;
    let a = train(&with_zero, train_set, val_set).unwrap();
    let b = train(&none, train_set, val_set).unwrap();
    assert_eq!(format_history(&a.history), format_history(&b.history));
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        assert_eq!(x.align, 0.0);
    }
    assert_eq!(a.last, b.last);
    assert_eq!(a.best.params, b.best.params);
}

#[test]
fn zero_learning_rate_keeps_the_initialization() {
    let data = tracks(6, 6, 1);
    let mut cfg = small_config();
    cfg.epochs = 1;
    cfg.adam.lr = 0.0;
    let out = train(&cfg, &data[..8], &data[8..]).unwrap();
    assert_eq!(out.last, ClamParams::init(&cfg.model, cfg.seed).unwrap());
}

#[test]
fn same_seed_same_run() {
    let data = tracks(10, 10, 5);
    let cfg = small_config();
    let a = train(&cfg, &data[..14], &data[14..]).unwrap();
    let b = train(&cfg, &data[..14], &data[14..]).unwrap();
    assert_eq!(format_history(&a.history), format_history(&b.history));
    assert_eq!(a.last, b.last);
    assert_eq!(a.best.to_bytes(), b.best.to_bytes());
    let mut other = cfg.clone();
    other.seed = 5;
    assert_ne!(train(&other, &data[..14], &data[14..]).unwrap().last, a.last);
}

#[test]
fn history_records_weighted_alignment_and_best_epoch() {
    let data = tracks(12, 12, 9);
    let mut cfg = small_config();
    cfg.epochs = 4;
    let out = train(&cfg, &data[..18], &data[18..]).unwrap();
    assert_eq!(out.history.len(), 4);
    for r in &out.history {
        assert!((r.train_loss - (r.bce + r.align)).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&r.val_f1));
    }
    let best = out.history.iter().map(|r| r.val_f1).fold(f64::NEG_INFINITY, f64::max);
    let first = out.history.iter().find(|r| r.val_f1 == best).unwrap().epoch;
    assert_eq!(out.best_epoch, first);
    assert_eq!(out.best.hyper("alignment"), Some("triplet"));
    assert_eq!(out.best.hyper("seed"), Some("4"));
}

#[test]
fn overfits_a_32_track_subset() {
    let spec = SynthSpec {
        n_real: 16,
        n_fake: 16,
        seed: 11,
        ..SynthSpec::default()
    };
    let data: Vec<LabeledTrack> = synth_dataset(&spec)
        .unwrap()
        .into_iter()
        .map(|t| LabeledTrack {
            features: TrackFeatures::from_stacks(&t.music, &t.vocal),
            id: t.id,
            label: t.label,
            generator: "synth".into(),
        })
        .collect();
    let cfg = TrainConfig {
        batch_size: 32,
        epochs: 200,
        seed: 2,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &data, &data[..4]).unwrap();
    let losses: Vec<f64> = out.history.iter().map(|r| r.train_loss).collect();
    let reached = losses
        .iter()
        .position(|&l| l < 0.05)
        .unwrap_or_else(|| panic!("loss never fell below 0.05; last {}", losses[losses.len() - 1]));
    // Monotone from epoch 5 until the target is hit; past that point Adam
    // jitters around zero loss.
    for e in 5..=reached {
        assert!(losses[e] <= losses[e - 1], "loss rose at epoch {}: {} -> {}", e + 1, losses[e - 1], losses[e]);
    }
}

#[test]
fn training_errors() {
    let data = tracks(4, 4, 0);
    let cfg = small_config();
    assert!(matches!(train(&cfg, &data, &[]), Err(Error::Config(_))));
    assert!(matches!(train(&cfg, &[], &data), Err(Error::Config(_))));

    let mut bad = data[..4].to_vec();
    bad[0].features.music.data_mut()[0] = 1e300;
    bad[0].features.music.data_mut()[1] = 1e300;
    let mut one_batch = cfg.clone();
    one_batch.batch_size = 4;
    match train(&one_batch, &bad, &data[4..]) {
        Err(Error::NonFiniteLoss { epoch, batch }) => assert_eq!((epoch, batch), (1, 0)),
        other => panic!("expected a non-finite loss, got {other:?}"),
    }

    let mut tiny = cfg.clone();
    tiny.batch_size = 1;
    assert!(matches!(train(&tiny, &data, &data), Err(Error::Config(_))));
}
