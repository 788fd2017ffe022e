use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clam_core::datakit::{
    assign_splits, load_tracks, materialize, parse_manifest, split_ood, stack_paths, synth_dataset, write_manifest,
    EncodeSettings, LabeledTrack, Split, SplitConfig, SynthSpec, TrackRecord,
};
use clam_core::encoders::{encode as encode_stack, load_layerstack, preprocess, read_wav, save_layerstack, MAX_DURATION, TARGET_RATE};
use clam_core::evalstat::{
    confusion_f1, elo_rank, format_predictions, leaderboard, mcnemar_exact, read_matches, read_predictions, Confusion,
    Prediction,
};
use clam_core::model::{load_checkpoint, save_checkpoint, ModelConfig, StreamMode};
use clam_core::objectives::{AlignmentKind, LossConfig};
use clam_core::trainer::{format_history, predict, train as fit, AdamConfig, MicroCase, TrainConfig};

use crate::config::RunConfig;
use crate::Failure;

type Outcome = Result<(), Failure>;

fn write(path: &Path, contents: &str) -> Outcome {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Failure::Runtime(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))
}

fn encode_settings(cfg: &RunConfig) -> Result<EncodeSettings, Failure> {
    Ok(EncodeSettings {
        n_filters: cfg.get("encode.n_filters")?,
        n_layers: cfg.get("encode.n_layers")?,
        projection_seed: cfg.get("encode.projection_seed")?,
    })
}

fn manifest_root(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Outcome {
    let spec = SynthSpec {
        n_real: cfg.get("synth.n_real")?,
        n_fake: cfg.get("synth.n_fake")?,
        latent_dim: cfg.get("synth.latent_dim")?,
        frames: cfg.get("synth.frames")?,
        features: cfg.get("synth.features")?,
        layers: cfg.get("synth.layers")?,
        coupling: cfg.get("synth.coupling")?,
        noise_scale: cfg.get("synth.noise")?,
        seed: cfg.get("seed")?,
    };
    let tracks = synth_dataset(&spec)?;
    let splits = assign_splits(tracks.len(), cfg.get("synth.val")?, cfg.get("synth.test")?, spec.seed)?;
    create_dir(out)?;
    let records = materialize(&tracks, &splits, out)?;
    write(&out.join("run.meta"), &cfg.echo("synth", &["seed", "synth"]))?;
    let count = |s| records.iter().filter(|r| r.split == s).count();
    println!(
        "wrote {} tracks to {} (train {}, val {}, test {})",
        records.len(),
        out.join("manifest.tsv").display(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    Ok(())
}

pub fn encode(cfg: &RunConfig, manifest: &Path, out: &Path) -> Outcome {
    let enc = encode_settings(cfg)?;
    let root = manifest_root(manifest);
    let records = parse_manifest(manifest)?;
    let (music_spec, vocal_spec) = enc.specs();
    music_spec.validate()?;
    let feat = out.join("features");
    create_dir(&feat)?;
    let mut written = Vec::with_capacity(records.len());
    for r in &records {
        if r.id.contains(['/', '\\']) || r.id.starts_with('.') {
            return Err(Failure::Validation(format!("track id '{}' cannot be used as a file name", r.id)));
        }
        let src = root.join(&r.path);
        let (music, vocal) = if r.path.to_ascii_lowercase().ends_with(".wav") {
            let w = preprocess(&read_wav(&src)?, TARGET_RATE, MAX_DURATION)?;
            (encode_stack(&w, &music_spec)?, encode_stack(&w, &vocal_spec)?)
        } else {
            let (mp, vp) = stack_paths(&src);
            (load_layerstack(&mp)?, load_layerstack(&vp)?)
        };
        let (mp, vp) = stack_paths(&feat.join(&r.id));
        save_layerstack(&music, &mp)?;
        save_layerstack(&vocal, &vp)?;
        written.push(TrackRecord {
            path: format!("features/{}", r.id),
            ..r.clone()
        });
    }
    write_manifest(&out.join("manifest.tsv"), &written)?;
    write(&out.join("run.meta"), &format!("{}manifest={}\n", cfg.echo("encode", &["encode"]), manifest.display()))?;
    println!("encoded {} tracks into {}", written.len(), out.display());
    Ok(())
}

fn model_config(cfg: &RunConfig) -> Result<ModelConfig, Failure> {
    Ok(ModelConfig {
        layers: cfg.get("model.layers")?,
        features: cfg.get("model.features")?,
        embed: cfg.get("model.embed")?,
        heads: cfg.get("model.heads")?,
        mode: StreamMode::parse(cfg.raw("model.mode"))?,
        pool_tanh: true,
    })
}

fn train_config(cfg: &RunConfig, seed: u64) -> Result<TrainConfig, Failure> {
    let tc = TrainConfig {
        adam: AdamConfig {
            lr: cfg.get("train.lr")?,
            beta1: cfg.get("train.beta1")?,
            beta2: cfg.get("train.beta2")?,
            eps: cfg.get("train.eps")?,
            weight_decay: cfg.get("train.weight_decay")?,
        },
        batch_size: cfg.get("train.batch_size")?,
        epochs: cfg.get("train.epochs")?,
        seed,
        loss: LossConfig {
            margin: cfg.get("loss.margin")?,
            alignment: AlignmentKind::parse(cfg.raw("loss.alignment"))?,
            lambda: cfg.get("loss.lambda")?,
            huber_delta: cfg.get("loss.huber_delta")?,
        },
        model: model_config(cfg)?,
    };
    tc.validate()?;
    Ok(tc)
}

fn train_seeds(cfg: &RunConfig) -> Result<Vec<u64>, Failure> {
    let seeds: Vec<u64> = cfg.list("train.seeds")?;
    Ok(if seeds.is_empty() { vec![cfg.get("seed")?] } else { seeds })
}

/// Rejects tracks whose shapes disagree with the model configuration.
fn check_shapes(tracks: &[LabeledTrack], model: &ModelConfig) -> Outcome {
    for t in tracks {
        for (name, m, frames) in [
            ("music", &t.features.music, t.features.music_frames),
            ("vocal", &t.features.vocal, t.features.vocal_frames),
        ] {
            let (layers, width) = (m.shape()[0], m.shape()[1]);
            if layers != model.layers || width != frames * model.features {
                return Err(Failure::Validation(format!(
                    "track '{}': {name} stack has {layers} layers of width {} but the model expects {} layers of width {}",
                    t.id,
                    width / frames.max(1),
                    model.layers,
                    model.features
                )));
            }
        }
    }
    Ok(())
}

struct Data {
    train: Vec<LabeledTrack>,
    val: Vec<LabeledTrack>,
    test: Vec<LabeledTrack>,
}

/// Loads a manifest and partitions it, either by its split column or, when
/// generator sets are configured, by held-out generator.
fn load_data(cfg: &RunConfig, manifest: &Path) -> Result<Data, Failure> {
    let records = parse_manifest(manifest)?;
    let train_gens = cfg.strings("split.train_generators");
    let test_gens = cfg.strings("split.test_generators");
    let records = if train_gens.is_empty() && test_gens.is_empty() {
        records
    } else {
        let tr: Vec<&str> = train_gens.iter().map(String::as_str).collect();
        let te: Vec<&str> = test_gens.iter().map(String::as_str).collect();
        let split_cfg = SplitConfig {
            seed: cfg.get("seed")?,
            val_fraction: cfg.get("split.val_fraction")?,
            real_test_fraction: cfg.get("split.real_test_fraction")?,
        };
        let s = split_ood(&records, &tr, &te, &split_cfg)?;
        s.train.into_iter().chain(s.val).chain(s.test).collect()
    };
    let root = manifest_root(manifest);
    let enc = encode_settings(cfg)?;
    let pick = |split| -> Result<Vec<LabeledTrack>, Failure> {
        let subset: Vec<TrackRecord> = records.iter().filter(|r| r.split == split).cloned().collect();
        Ok(load_tracks(&subset, &root, &enc)?)
    };
    Ok(Data {
        train: pick(Split::Train)?,
        val: pick(Split::Val)?,
        test: pick(Split::Test)?,
    })
}

fn f1_of(preds: &[Prediction]) -> Result<f64, Failure> {
    Ok(confusion_f1(preds)?.f1)
}

struct SeedResult {
    seed: u64,
    best_epoch: usize,
    val_f1: f64,
    test_f1: Option<f64>,
}

/// Trains one model per seed under `dir/seed-<s>/`.
fn train_seeds_into(cfg: &RunConfig, data: &Data, dir: &Path) -> Result<Vec<SeedResult>, Failure> {
    let mut results = Vec::new();
    for seed in train_seeds(cfg)? {
        let tc = train_config(cfg, seed)?;
        check_shapes(&data.train, &tc.model)?;
        let out = fit(&tc, &data.train, &data.val)?;
        let run_dir = dir.join(format!("seed-{seed}"));
        create_dir(&run_dir)?;
        save_checkpoint(&out.best, &run_dir.join("checkpoint.clmc"))?;
        write(&run_dir.join("history.txt"), &format_history(&out.history))?;
        let test_f1 = if data.test.is_empty() {
            None
        } else {
            check_shapes(&data.test, &tc.model)?;
            Some(f1_of(&predict(&out.best.params, &tc.model, &data.test)?)?)
        };
        results.push(SeedResult {
            seed,
            best_epoch: out.best_epoch,
            val_f1: out.history[out.best_epoch - 1].val_f1,
            test_f1,
        });
    }
    Ok(results)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

const TRAIN_KEYS: [&str; 6] = ["seed", "model", "loss", "train", "split", "encode"];

pub fn train(cfg: &RunConfig, manifest: &Path, out: &Path) -> Outcome {
    let data = load_data(cfg, manifest)?;
    create_dir(out)?;
    write(&out.join("run.meta"), &format!("{}manifest={}\n", cfg.echo("train", &TRAIN_KEYS), manifest.display()))?;
    let results = train_seeds_into(cfg, &data, out)?;
    let mut summary = String::from("seed\tbest_epoch\tval_f1\ttest_f1\n");
    for r in &results {
        let _ = writeln!(summary, "{}\t{}\t{:.6}\t{}", r.seed, r.best_epoch, r.val_f1, fmt_opt(r.test_f1));
    }
    let test_mean = results.iter().all(|r| r.test_f1.is_some()).then(|| mean(results.iter().filter_map(|r| r.test_f1)));
    let _ = writeln!(summary, "mean\t-\t{:.6}\t{}", mean(results.iter().map(|r| r.val_f1)), fmt_opt(test_mean));
    write(&out.join("summary.tsv"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn sweep_lambda(cfg: &RunConfig, manifest: &Path, out: &Path) -> Outcome {
    let lambdas: Vec<String> = cfg.strings("sweep.lambdas");
    if lambdas.is_empty() {
        return Err(Failure::Validation("sweep.lambdas is empty".into()));
    }
    let data = load_data(cfg, manifest)?;
    create_dir(out)?;
    let mut keys = TRAIN_KEYS.to_vec();
    keys.push("sweep");
    write(&out.join("run.meta"), &format!("{}manifest={}\n", cfg.echo("sweep-lambda", &keys), manifest.display()))?;
    let mut table = String::from("lambda\tmean_val_f1\tmean_test_f1\n");
    for l in &lambdas {
        let lambda: f64 = l.parse().map_err(|_| Failure::Validation(format!("sweep.lambdas: bad value '{l}'")))?;
        let with = cfg.with_overrides(&[("loss.lambda".into(), l.clone())])?;
        let results = train_seeds_into(&with, &data, &out.join(format!("lambda-{lambda}")))?;
        let test = results
            .iter()
            .all(|r| r.test_f1.is_some())
            .then(|| mean(results.iter().filter_map(|r| r.test_f1)));
        let _ = writeln!(table, "{lambda}\t{:.6}\t{}", mean(results.iter().map(|r| r.val_f1)), fmt_opt(test));
    }
    write(&out.join("sweep.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

/// F1 per fake generator, each scored against all real tracks, in the order
/// generators first appear; then the pooled row.
fn generator_report(preds: &[Prediction], generators: &[String]) -> Result<Vec<(String, usize, Confusion)>, Failure> {
    let mut order: Vec<&str> = Vec::new();
    for (p, g) in preds.iter().zip(generators) {
        if p.truth == 1 && !order.contains(&g.as_str()) {
            order.push(g);
        }
    }
    let reals: Vec<Prediction> = preds.iter().filter(|p| p.truth == 0).cloned().collect();
    let mut rows = Vec::new();
    for g in order {
        let fakes: Vec<Prediction> = preds
            .iter()
            .zip(generators)
            .filter(|(p, gen)| p.truth == 1 && gen.as_str() == g)
            .map(|(p, _)| p.clone())
            .collect();
        let n = fakes.len();
        let mut subset = fakes;
        subset.extend(reals.iter().cloned());
        rows.push((g.to_string(), n, confusion_f1(&subset)?));
    }
    let fakes = preds.iter().filter(|p| p.truth == 1).count();
    rows.push(("Overall".into(), fakes, confusion_f1(preds)?));
    Ok(rows)
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, out: &Path) -> Outcome {
    let ckpt = load_checkpoint(checkpoint)?;
    let wanted = cfg.raw("eval.split");
    let split = match wanted {
        "all" => None,
        s => Some(Split::parse(s).ok_or_else(|| Failure::Validation(format!("eval.split: unknown split '{s}'")))?),
    };
    let records: Vec<TrackRecord> = parse_manifest(manifest)?
        .into_iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .collect();
    if records.is_empty() {
        return Err(Failure::Validation(format!("no tracks in split '{wanted}' of {}", manifest.display())));
    }
    let tracks = load_tracks(&records, &manifest_root(manifest), &encode_settings(cfg)?)?;
    check_shapes(&tracks, &ckpt.model)?;
    let preds = predict(&ckpt.params, &ckpt.model, &tracks)?;
    let generators: Vec<String> = records.iter().map(|r| r.generator.clone()).collect();
    let rows = generator_report(&preds, &generators)?;

    create_dir(out)?;
    let mut meta = cfg.echo("eval", &["encode", "eval"]);
    let _ = writeln!(meta, "checkpoint={}\nmanifest={}", checkpoint.display(), manifest.display());
    for (k, v) in &ckpt.hyper {
        let _ = writeln!(meta, "checkpoint.{k}={v}");
    }
    write(&out.join("run.meta"), &meta)?;
    write(&out.join("predictions.tsv"), &format_predictions(&preds))?;

    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("Generator".len());
    let mut text = format!("{:<width$}  {:>6}  {:>8}\n", "Generator", "Fakes", "F1 (%)");
    let mut tsv = String::from("generator\tfakes\ttp\tfp\tfn\ttn\tprecision\trecall\tf1\n");
    for (g, n, c) in &rows {
        let _ = writeln!(text, "{g:<width$}  {n:>6}  {:>8.2}", 100.0 * c.f1);
        let _ = writeln!(
            tsv,
            "{g}\t{n}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            c.tp, c.fp, c.fn_, c.tn, c.precision, c.recall, c.f1
        );
    }
    write(&out.join("report.txt"), &text)?;
    write(&out.join("report.tsv"), &tsv)?;
    print!("{text}");
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, out: Option<&Path>) -> Outcome {
    let cases: usize = cfg.get("gradcheck.cases")?;
    let h: f64 = cfg.get("gradcheck.h")?;
    let tol: f64 = cfg.get("gradcheck.tol")?;
    let seed: u64 = cfg.get("seed")?;
    if !(h > 0.0) || !(tol > 0.0) {
        return Err(Failure::Validation("gradcheck.h and gradcheck.tol must be positive".into()));
    }
    let mut text = String::from("case\tseed\talignment\tmax_rel_error\tresult\n");
    let mut failed = 0;
    for i in 0..cases {
        let s = seed.wrapping_add(i as u64);
        let case = MicroCase::random(s)?;
        let r = case.grad_check(h, tol)?;
        failed += usize::from(!r.pass);
        let verdict = if r.pass { "pass" } else { "FAIL" };
        let _ = writeln!(text, "{i}\t{s}\t{}\t{:.3e}\t{verdict}", case.loss.alignment, r.max_rel_error);
    }
    let _ = writeln!(text, "passed {}/{cases}", cases - failed);
    if let Some(dir) = out {
        create_dir(dir)?;
        write(&dir.join("run.meta"), &cfg.echo("gradcheck", &["seed", "gradcheck"]))?;
        write(&dir.join("report.txt"), &text)?;
    }
    print!("{text}");
    if failed > 0 {
        return Err(Failure::Runtime(format!("gradient check failed on {failed} of {cases} cases")));
    }
    Ok(())
}

pub fn mcnemar(first: &Path, second: &Path, out: Option<&Path>) -> Outcome {
    let m = mcnemar_exact(&read_predictions(first)?, &read_predictions(second)?)?;
    let text = format!(
        "            B correct  B wrong\nA correct   {:>9}  {:>7}\nA wrong     {:>9}  {:>7}\np={:?}\n",
        m.a, m.c, m.d, m.b, m.p_value
    );
    if let Some(dir) = out {
        create_dir(dir)?;
        write(&dir.join("run.meta"), &format!("command=mcnemar\nfirst={}\nsecond={}\n", first.display(), second.display()))?;
        write(&dir.join("report.txt"), &text)?;
    }
    print!("{text}");
    Ok(())
}

pub fn elo(cfg: &RunConfig, matches: &Path, out: Option<&Path>) -> Outcome {
    let ratings = elo_rank(&read_matches(matches)?, cfg.get("elo.k")?, cfg.get("elo.initial")?)?;
    let board = leaderboard(ratings);
    let mut text = String::from("rank\tmodel\trating\n");
    for (i, (name, r)) in board.iter().enumerate() {
        let _ = writeln!(text, "{}\t{name}\t{r:.2}", i + 1);
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        write(&dir.join("run.meta"), &format!("{}matches={}\n", cfg.echo("elo", &["elo"]), matches.display()))?;
        write(&dir.join("leaderboard.tsv"), &text)?;
    }
    print!("{text}");
    Ok(())
}
