//! `clam`: batch front end for the synthetic-music detector.
//!
//! Exit status: 0 on success, 1 on invalid input or configuration, 2 when a
//! valid request fails while running.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_override, ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "clam", version, about = "Dual-stream synthetic-music detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that reads the run configuration.
#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Flat key=value config file with dot-namespaced keys (e.g. loss.margin = 1.0)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable. Applied after the file and before the named flags
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Base seed (config key `seed`)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a coupled-stream synthetic dataset: feature files plus manifest.tsv
    Synth(SynthArgs),
    /// Encode the waveforms of a manifest into layer-stack files and a new manifest
    Encode(EncodeArgs),
    /// Train one model per seed; writes checkpoints, histories and a summary
    Train(TrainArgs),
    /// Score a manifest split with a checkpoint; writes predictions and a per-generator F1 report
    Eval(EvalArgs),
    /// Central-difference gradient checks of random micro-configurations
    Gradcheck(GradcheckArgs),
    /// Exact two-sided McNemar test between two prediction files
    Mcnemar(McnemarArgs),
    /// Sequential Elo leaderboard from a match log
    Elo(EloArgs),
    /// Train across a list of alignment weights and tabulate F1
    SweepLambda(SweepArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Number of real tracks (synth.n_real)
    #[arg(long)]
    n_real: Option<usize>,
    /// Number of fake tracks (synth.n_fake)
    #[arg(long)]
    n_fake: Option<usize>,
    /// Latent trajectory width (synth.latent_dim)
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Frames per track (synth.frames)
    #[arg(long)]
    frames: Option<usize>,
    /// Feature width per frame (synth.features)
    #[arg(long)]
    features: Option<usize>,
    /// Layers per stack (synth.layers)
    #[arg(long)]
    layers: Option<usize>,
    /// Fake vocal coupling to the music latent (synth.coupling)
    #[arg(long)]
    coupling: Option<f64>,
    /// Observation noise scale (synth.noise)
    #[arg(long)]
    noise: Option<f64>,
    /// Validation tracks (synth.val)
    #[arg(long)]
    val: Option<usize>,
    /// Test tracks (synth.test)
    #[arg(long)]
    test: Option<usize>,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[command(flatten)]
    common: Common,
    /// Input manifest; wav paths are encoded, feature stems are re-saved
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Mel filters per frame (encode.n_filters)
    #[arg(long)]
    n_filters: Option<usize>,
    /// Layers per stack (encode.n_layers)
    #[arg(long)]
    n_layers: Option<usize>,
    /// Projection seed (encode.projection_seed)
    #[arg(long)]
    projection_seed: Option<u64>,
}

/// Model, loss and optimiser flags shared by `train` and `sweep-lambda`.
#[derive(Args, Debug)]
struct TrainFlags {
    /// Training manifest (uses its split column unless split generators are configured)
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Alignment term: triplet, mse, huber, cosine, l1 or none (loss.alignment)
    #[arg(long)]
    alignment: Option<String>,
    /// Comma-separated training seeds (train.seeds)
    #[arg(long, value_name = "LIST")]
    seeds: Option<String>,
    /// Training epochs (train.epochs)
    #[arg(long)]
    epochs: Option<usize>,
    /// Tracks per batch (train.batch_size)
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate (train.lr)
    #[arg(long)]
    lr: Option<f64>,
    /// Triplet margin (loss.margin)
    #[arg(long)]
    margin: Option<f64>,
    /// Streams used: dual, music or vocal (model.mode)
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    flags: TrainFlags,
    /// Weight of the alignment term (loss.lambda)
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    flags: TrainFlags,
    /// Comma-separated alignment weights (sweep.lambdas)
    #[arg(long, value_name = "LIST")]
    lambdas: Option<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint written by `train`
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Manifest to score
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Split to score: train, val, test or all (eval.split)
    #[arg(long)]
    split: Option<String>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    /// Number of micro-configurations; case i uses seed + i (gradcheck.cases)
    #[arg(long)]
    cases: Option<usize>,
    /// Central-difference step (gradcheck.h)
    #[arg(long)]
    h: Option<f64>,
    /// Maximum relative error (gradcheck.tol)
    #[arg(long)]
    tol: Option<f64>,
    /// Optional directory for report.txt and run.meta
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct McnemarArgs {
    /// Predictions of the first model (TSV: id true pred score)
    first: PathBuf,
    /// Predictions of the second model, over the same ids
    second: PathBuf,
    /// Optional directory for report.txt and run.meta
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EloArgs {
    #[command(flatten)]
    common: Common,
    /// Match log (TSV: model_a model_b outcome, outcome a_wins or b_wins)
    matches: PathBuf,
    /// K factor (elo.k)
    #[arg(long)]
    k: Option<f64>,
    /// Initial rating (elo.initial)
    #[arg(long)]
    initial: Option<f64>,
    /// Optional directory for leaderboard.tsv and run.meta
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

/// Failure classes, mapped to exit codes 1 and 2.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Validation(e.0)
    }
}

impl From<clam_core::Error> for Failure {
    fn from(e: clam_core::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

/// Collects `(key, value)` overrides from named flags that were given.
#[derive(Default)]
struct Overrides(Vec<(String, String)>);

impl Overrides {
    fn put<T: ToString>(&mut self, key: &str, v: &Option<T>) -> &mut Self {
        if let Some(v) = v {
            self.0.push((key.to_string(), v.to_string()));
        }
        self
    }
}

fn resolve(common: &Common, named: Overrides) -> Result<RunConfig, Failure> {
    let mut all = common.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    let mut named = named;
    named.put("seed", &common.seed);
    all.extend(named.0);
    Ok(RunConfig::resolve(common.config.as_deref(), &all)?)
}

fn train_overrides(f: &TrainFlags) -> Overrides {
    let mut o = Overrides::default();
    o.put("loss.alignment", &f.alignment)
        .put("train.seeds", &f.seeds)
        .put("train.epochs", &f.epochs)
        .put("train.batch_size", &f.batch_size)
        .put("train.lr", &f.lr)
        .put("loss.margin", &f.margin)
        .put("model.mode", &f.mode);
    o
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth(a) => {
            let mut o = Overrides::default();
            o.put("synth.n_real", &a.n_real)
                .put("synth.n_fake", &a.n_fake)
                .put("synth.latent_dim", &a.latent_dim)
                .put("synth.frames", &a.frames)
                .put("synth.features", &a.features)
                .put("synth.layers", &a.layers)
                .put("synth.coupling", &a.coupling)
                .put("synth.noise", &a.noise)
                .put("synth.val", &a.val)
                .put("synth.test", &a.test);
            commands::synth(&resolve(&a.common, o)?, &a.out)
        }
        Command::Encode(a) => {
            let mut o = Overrides::default();
            o.put("encode.n_filters", &a.n_filters)
                .put("encode.n_layers", &a.n_layers)
                .put("encode.projection_seed", &a.projection_seed);
            commands::encode(&resolve(&a.common, o)?, &a.manifest, &a.out)
        }
        Command::Train(a) => {
            let mut o = train_overrides(&a.flags);
            o.put("loss.lambda", &a.lambda);
            commands::train(&resolve(&a.common, o)?, &a.flags.manifest, &a.flags.out)
        }
        Command::SweepLambda(a) => {
            let mut o = train_overrides(&a.flags);
            o.put("sweep.lambdas", &a.lambdas);
            commands::sweep_lambda(&resolve(&a.common, o)?, &a.flags.manifest, &a.flags.out)
        }
        Command::Eval(a) => {
            let mut o = Overrides::default();
            o.put("eval.split", &a.split);
            commands::eval(&resolve(&a.common, o)?, &a.checkpoint, &a.manifest, &a.out)
        }
        Command::Gradcheck(a) => {
            let mut o = Overrides::default();
            o.put("gradcheck.cases", &a.cases).put("gradcheck.h", &a.h).put("gradcheck.tol", &a.tol);
            commands::gradcheck(&resolve(&a.common, o)?, a.out.as_deref())
        }
        Command::Mcnemar(a) => commands::mcnemar(&a.first, &a.second, a.out.as_deref()),
        Command::Elo(a) => {
            let mut o = Overrides::default();
            o.put("elo.k", &a.k).put("elo.initial", &a.initial);
            commands::elo(&resolve(&a.common, o)?, &a.matches, a.out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 1,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
