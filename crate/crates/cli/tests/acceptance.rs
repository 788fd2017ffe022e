//! Acceptance criteria, one test each. Every test writes a single
//! `criterion N: PASS|FAIL ...` line straight to stdout (bypassing the
//! harness capture) before asserting.
//!
//! The long-running criteria hold a shared lock so their timings are not
//! inflated by each other.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use clam_core::datakit::{kl_by_coupling, kl_discrete, synth_dataset, synth_splits, LabeledTrack, SynthSpec};
use clam_core::encoders::{load_layerstack, save_layerstack, LayerStack, StreamTag};
use clam_core::evalstat::{confusion_f1, elo_rank, leaderboard, mcnemar_exact, mcnemar_p, MatchRecord, Outcome, Prediction};
use clam_core::model::{load_checkpoint, save_checkpoint, Checkpoint, ClamParams, ModelConfig, StreamMode, TrackFeatures};
use clam_core::objectives::{triplet_inbatch, AlignmentKind};
use clam_core::tensor::Tensor;
use clam_core::trainer::{format_history, predict, train, MicroCase, TrainConfig};
use clam_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static HEAVY: Mutex<()> = Mutex::new(());

fn heavy() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "\ncriterion {n}: {verdict} {detail}");
    let _ = out.flush();
}

/// Reports and then asserts.
fn conclude(n: u32, pass: bool, detail: String) {
    report(n, pass, &detail);
    assert!(pass, "criterion {n}: {detail}");
}

#[test]
fn criterion_1_gradient_correctness() {
    let _guard = heavy();
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let r = MicroCase::random(seed).unwrap().grad_check(1e-6, 1e-5).unwrap();
        worst = worst.max(r.max_rel_error);
        if !r.pass {
            failures.push(format!("{seed}:{:.1e}", r.max_rel_error));
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(120);
    conclude(
        1,
        pass,
        format!(
            "{}/100 micro-configurations within 1e-5 (worst {worst:.2e}) in {:.1}s; failing seeds {}",
            100 - failures.len(),
            elapsed.as_secs_f64(),
            if failures.is_empty() { "none".into() } else { failures.join(" ") }
        ),
    );
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[test]
fn criterion_2_triplet_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut small_guard = true;
    for batch in 0..200 {
        let n = if batch < 20 { batch % 2 } else { rng.random_range(0..=8) };
        let e = rng.random_range(1..=8);
        let margin = rng.random_range(0.1..2.0);
        let draw = |rng: &mut ChaCha8Rng| {
            Tensor::new(vec![n, e], (0..n * e).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
        };
        let (m, v) = (draw(&mut rng), draw(&mut rng));
        let mut want = 0.0;
        if n > 1 {
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    want += (sq_dist(m.row(i), v.row(i)) - sq_dist(m.row(i), v.row(j)) + margin).max(0.0);
                }
            }
            want /= (n * (n - 1)) as f64;
        }
        let got = triplet_inbatch(&m, &v, margin).unwrap();
        if n <= 1 {
            small_guard &= got == 0.0;
        }
        worst = worst.max((got - want).abs());
    }
    conclude(2, worst <= 1e-9 && small_guard, format!("200 batches, max |diff| {worst:.2e}, N<=1 guard {small_guard}"));
}

fn test_f1(cfg: &TrainConfig, train_set: &[LabeledTrack], val: &[LabeledTrack], test: &[LabeledTrack]) -> f64 {
    let out = train(cfg, train_set, val).unwrap();
    confusion_f1(&predict(&out.best.params, &cfg.model, test).unwrap()).unwrap().f1
}

#[test]
fn criterion_3_ablation_trend() {
    let _guard = heavy();
    let start = Instant::now();
    let variants = [
        (StreamMode::Dual, AlignmentKind::Triplet),
        (StreamMode::Dual, AlignmentKind::None),
        (StreamMode::MusicOnly, AlignmentKind::None),
    ];
    let seeds = [1u64, 2, 3, 4, 5];
    let mut sums = [0.0; 3];
    let mut sizes = (0, 0);
    for &seed in &seeds {
        let data = synth_splits(&SynthSpec { seed, ..SynthSpec::default() }).unwrap();
        sizes = (data.train.len(), data.test.len());
        for (i, &(mode, alignment)) in variants.iter().enumerate() {
            let mut cfg = TrainConfig { seed, epochs: 30, ..TrainConfig::default() };
            cfg.model.mode = mode;
            cfg.loss.alignment = alignment;
            sums[i] += test_f1(&cfg, &data.train, &data.val, &data.test);
        }
    }
    let [triplet, none, single] = sums.map(|s| s / seeds.len() as f64);
    let elapsed = start.elapsed();
    let pass = sizes == (2000, 500)
        && triplet >= 0.95
        && triplet - none >= 0.01
        && single < none
        && elapsed < Duration::from_secs(30 * 60);
    conclude(
        3,
        pass,
        format!(
            "mean test F1 over 5 seeds: triplet {triplet:.4}, no-alignment {none:.4}, music-only {single:.4}; \
             train/test {}/{}; {:.0}s",
            sizes.0,
            sizes.1,
            elapsed.as_secs_f64()
        ),
    );
}

fn small_tracks(seed: u64) -> Vec<LabeledTrack> {
    let spec = SynthSpec { n_real: 24, n_fake: 24, frames: 8, seed, ..SynthSpec::default() };
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

#[test]
fn criterion_4_lambda_degeneracy() {
    let data = small_tracks(8);
    let (tr, val) = data.split_at(36);
    let mut all_same = true;
    for seed in [1, 2, 3] {
        let base = TrainConfig { seed, epochs: 4, batch_size: 8, ..TrainConfig::default() };
        let mut zero = base.clone();
        zero.loss.lambda = 0.0;
        let mut none = base;
        none.loss.alignment = AlignmentKind::None;
        let (a, b) = (train(&zero, tr, val).unwrap(), train(&none, tr, val).unwrap());
        let bits = |h: &[clam_core::trainer::EpochRecord]| {
            h.iter().map(|r| (r.train_loss.to_bits(), r.bce.to_bits(), r.val_f1.to_bits())).collect::<Vec<_>>()
        };
        all_same &= bits(&a.history) == bits(&b.history)
            && format_history(&a.history) == format_history(&b.history)
            && a.last == b.last
            && a.best.params == b.best.params;
    }
    conclude(4, all_same, "lambda=0 vs alignment none, seeds 1-3: histories and parameters bit-identical".into());
}

#[test]
fn criterion_5_mcnemar_exactness() {
    let mut exact = true;
    for n in 0..=20usize {
        for c in 0..=n {
            let d = n - c;
            let k = c.min(d) as u32;
            let p = if n == 0 {
                1.0
            } else {
                let count = (0u64..1 << n).filter(|s| s.count_ones() <= k).count();
                (2.0 * (count as f64 / 2f64.powi(n as i32))).min(1.0)
            };
            exact &= mcnemar_p(c, d) == p;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut symmetric = true;
    for _ in 0..200 {
        let n = rng.random_range(1..50);
        let truths: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
        let draw = |rng: &mut ChaCha8Rng| -> Vec<Prediction> {
            truths
                .iter()
                .enumerate()
                .map(|(i, &t)| Prediction { id: format!("t{i}"), truth: t, pred: rng.random_range(0..=1), score: 0.5 })
                .collect()
        };
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        let (ab, ba) = (mcnemar_exact(&a, &b).unwrap(), mcnemar_exact(&b, &a).unwrap());
        symmetric &= (ab.c, ab.d) == (ba.d, ba.c) && ab.p_value == ba.p_value;
    }
    let p10 = mcnemar_p(10, 0);
    let pass = exact && symmetric && (p10 - 0.001953125).abs() <= 1e-9;
    conclude(5, pass, format!("enumeration exact for c+d<=20: {exact}; swap symmetric: {symmetric}; p(10,0) = {p10}"));
}

#[test]
fn criterion_6_elo_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let game = |a: String, b: String, outcome| MatchRecord { model_a: a, model_b: b, outcome };
    let log: Vec<MatchRecord> = (0..10_000)
        .map(|_| {
            let a = rng.random_range(0..10);
            let b = (a + rng.random_range(1..10)) % 10;
            let o = if rng.random_bool(0.5) { Outcome::AWins } else { Outcome::BWins };
            game(format!("m{a}"), format!("m{b}"), o)
        })
        .collect();
    let ratings = elo_rank(&log, 32.0, 1000.0).unwrap();
    let drift = (ratings.iter().map(|r| r.1).sum::<f64>() - 1000.0 * ratings.len() as f64).abs();

    let names = ["x", "y", "z", "w"];
    let mut round_robin = Vec::new();
    for _ in 0..3 {
        for i in 0..names.len() {
            for j in (i + 1)..names.len() {
                let o = if names[i] == "x" || (names[j] != "x" && (i + j) % 2 == 0) { Outcome::AWins } else { Outcome::BWins };
                round_robin.push(game(names[i].into(), names[j].into(), o));
            }
        }
    }
    let board = leaderboard(elo_rank(&round_robin, 32.0, 1000.0).unwrap());
    let first = board[0].0 == "x" && board[0].1 > board[1].1;

    let single = elo_rank(&[game("a".into(), "b".into(), Outcome::AWins)], 32.0, 1000.0).unwrap();
    let exact = single == vec![("a".to_string(), 1016.0), ("b".to_string(), 984.0)];
    conclude(
        6,
        drift <= 1e-9 && first && exact,
        format!("10k-match drift {drift:.1e}; all-wins model first: {first}; single win -> 1016/984: {exact}"),
    );
}

#[test]
fn criterion_7_kl_diagnostic() {
    let _guard = heavy();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut gibbs = true;
    for _ in 0..1000 {
        let n = rng.random_range(2..12);
        let dist = |rng: &mut ChaCha8Rng| {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let (p, q) = (dist(&mut rng), dist(&mut rng));
        let kl = kl_discrete(&p, &q).unwrap();
        gibbs &= kl > 0.0 && kl_discrete(&p, &p).unwrap() == 0.0;
    }
    let couplings = [0.0, 0.25, 0.5, 0.75, 1.0];
    let curve = kl_by_coupling(&SynthSpec::default(), &couplings, &[1, 2, 3, 4, 5]).unwrap();
    let monotone = curve.windows(2).all(|w| w[1] <= w[0]);
    let shown: Vec<String> = curve.iter().map(|k| format!("{k:.4}")).collect();
    conclude(
        7,
        gibbs && monotone,
        format!("1000 pairs nonnegative, zero iff equal: {gibbs}; KL by coupling {{0,.25,.5,.75,1}}: [{}]", shown.join(", ")),
    );
}

fn run_in(dir: &Path, args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_clam")).current_dir(dir).args(args).output().unwrap();
    (out.status.code().unwrap(), out.stdout)
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Writes the non-generated inputs shared by both runs.
fn seed_inputs(dir: &Path) {
    let samples: Vec<f64> = (0..30_000).map(|i| ((i as f64) * 0.031).sin() * 0.3 + ((i as f64) * 0.0071).cos() * 0.1).collect();
    clam_core::encoders::write_wav(&dir.join("tone.wav"), &clam_core::encoders::Waveform::new(samples, 24_000.0).unwrap())
        .unwrap();
    std::fs::write(dir.join("wav.tsv"), "id\tpath\tlabel\ttier\tgenerator\tsplit\ntone\ttone.wav\t1\tFullyFake\tSuno 2\ttest\n")
        .unwrap();
    std::fs::write(
        dir.join("matches.tsv"),
        "model_a\tmodel_b\toutcome\nA\tB\ta_wins\nB\tC\ta_wins\nC\tA\tb_wins\nB\tA\tb_wins\n",
    )
    .unwrap();
}

#[test]
fn criterion_8_cli_determinism() {
    let _guard = heavy();
    let root = tempfile::tempdir().unwrap();
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("synth", "synth --out data --seed 9 --n-real 30 --n-fake 30 --frames 8 --val 10 --test 20".split(' ').collect()),
        ("encode", "encode --manifest wav.tsv --out enc --n-filters 16 --n-layers 4".split(' ').collect()),
        ("train", "train --manifest data/manifest.tsv --out run --epochs 2 --seeds 1,2 --batch-size 8".split(' ').collect()),
        ("eval", "eval --checkpoint run/seed-1/checkpoint.clmc --manifest data/manifest.tsv --out ev".split(' ').collect()),
        ("gradcheck", "gradcheck --cases 4 --seed 3 --out gc".split(' ').collect()),
        ("mcnemar", "mcnemar ev/predictions.tsv ev/predictions.tsv --out mc".split(' ').collect()),
        ("elo", "elo matches.tsv --out elo".split(' ').collect()),
        ("sweep-lambda", "sweep-lambda --manifest data/manifest.tsv --out sw --lambdas 0,1 --epochs 1 --seeds 4 --batch-size 8".split(' ').collect()),
    ];
    let mut runs: Vec<(Vec<(i32, Vec<u8>)>, BTreeMap<PathBuf, Vec<u8>>)> = Vec::new();
    for name in ["first", "second"] {
        let dir = root.path().join(name);
        std::fs::create_dir_all(&dir).unwrap();
        seed_inputs(&dir);
        let outputs: Vec<(i32, Vec<u8>)> = commands.iter().map(|(_, args)| run_in(&dir, args)).collect();
        runs.push((outputs, snapshot(&dir)));
    }
    let mut bad = Vec::new();
    for (i, (name, _)) in commands.iter().enumerate() {
        let (a, b) = (&runs[0].0[i], &runs[1].0[i]);
        // gradcheck exits 2 when a case fails; its output must still repeat.
        let ok_code = a.0 == 0 || (*name == "gradcheck" && a.0 == 2);
        if !ok_code || a != b {
            bad.push(format!("{name} (exit {} / {})", a.0, b.0));
        }
    }
    let (fa, fb) = (&runs[0].1, &runs[1].1);
    if fa.keys().ne(fb.keys()) {
        bad.push("different file sets".into());
    }
    for (path, bytes) in fa {
        if fb.get(path) != Some(bytes) {
            bad.push(path.display().to_string());
        }
    }
    conclude(
        8,
        bad.is_empty(),
        format!(
            "{} commands run twice into fresh directories, {} output files compared; mismatches: {}",
            commands.len(),
            fa.len(),
            if bad.is_empty() { "none".into() } else { bad.join(", ") }
        ),
    );
}

#[test]
fn criterion_9_format_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut checks: Vec<(&str, bool)> = Vec::new();

    let data: Vec<f32> = (0..3 * 5 * 4).map(|_| rng.random_range(-10.0f32..10.0)).collect();
    let stack = LayerStack::new(StreamTag::Vocal, 3, 5, 4, 0.01, data).unwrap();
    let path = dir.path().join("s.clms");
    save_layerstack(&stack, &path).unwrap();
    let back = load_layerstack(&path).unwrap();
    let same_bits = back.data().iter().zip(stack.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    checks.push(("stack bit-exact", same_bits && back.to_bytes() == stack.to_bytes() && back.stream() == StreamTag::Vocal));

    let bytes = stack.to_bytes();
    let mut magic = bytes.clone();
    magic[0] ^= 0xFF;
    checks.push(("stack bad magic -> format", matches!(LayerStack::from_bytes(&magic), Err(Error::Format(_)))));
    checks.push((
        "stack truncated -> truncated",
        matches!(LayerStack::from_bytes(&bytes[..bytes.len() - 7]), Err(Error::Truncated { .. })),
    ));

    let model = ModelConfig::default();
    let ckpt = Checkpoint {
        params: ClamParams::init(&model, 11).unwrap(),
        model,
        hyper: vec![("seed".into(), "11".into()), ("alignment".into(), "triplet".into())],
    };
    let path = dir.path().join("c.clmc");
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    checks.push(("checkpoint bit-exact", back == ckpt && back.to_bytes() == ckpt.to_bytes()));
    let bytes = ckpt.to_bytes();
    let mut magic = bytes.clone();
    magic[0] = b'X';
    checks.push(("checkpoint bad magic -> format", matches!(Checkpoint::from_bytes(&magic), Err(Error::Format(_)))));
    checks.push((
        "checkpoint truncated -> truncated",
        matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 5]), Err(Error::Truncated { .. })),
    ));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    conclude(
        9,
        failed.is_empty(),
        format!("{} checks; failed: {}", checks.len(), if failed.is_empty() { "none".into() } else { failed.join(", ") }),
    );
}
