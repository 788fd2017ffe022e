//! Python bindings: synthetic data, training, prediction, checkpoints,
//! layer stacks and the evaluation statistics.

use std::collections::HashMap;
use std::path::PathBuf;

use clam_core::datakit::{self, LabeledTrack, SynthSpec};
use clam_core::encoders::{self, StreamTag};
use clam_core::evalstat::{self, MatchRecord, Outcome, Prediction};
use clam_core::model::{self, StreamMode};
use clam_core::objectives::AlignmentKind;
use clam_core::tensor::Tensor;
use clam_core::trainer::{self, MicroCase, TrainConfig};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: clam_core::Error) -> PyErr {
    match e {
        clam_core::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        e if e.is_validation() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    if rows.is_empty() {
        return Ok(Tensor::zeros(&[0, 1]));
    }
    Tensor::from_rows(&rows).map_err(to_py)
}

/// Train/val/test tracks of a generated dataset.
#[pyclass(module = "clam")]
struct Dataset {
    train: Vec<LabeledTrack>,
    val: Vec<LabeledTrack>,
    test: Vec<LabeledTrack>,
}

impl Dataset {
    fn split(&self, name: &str) -> PyResult<&[LabeledTrack]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(PyValueError::new_err(format!("unknown split '{other}'"))),
        }
    }
}

#[pymethods]
impl Dataset {
    /// Generates coupled-stream tracks and holds out `n_val` and `n_test`.
    #[new]
    #[pyo3(signature = (seed=0, n_real=1375, n_fake=1375, coupling=0.2, noise=0.1, frames=32, features=16, latent_dim=8, layers=4, n_val=250, n_test=500))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        seed: u64,
        n_real: usize,
        n_fake: usize,
        coupling: f64,
        noise: f64,
        frames: usize,
        features: usize,
        latent_dim: usize,
        layers: usize,
        n_val: usize,
        n_test: usize,
    ) -> PyResult<Self> {
        let spec = SynthSpec {
            n_real,
            n_fake,
            latent_dim,
            frames,
            features,
            layers,
            coupling,
            noise_scale: noise,
            seed,
        };
        let tracks = datakit::synth_dataset(&spec).map_err(to_py)?;
        let splits = datakit::assign_splits(tracks.len(), n_val, n_test, seed).map_err(to_py)?;
        let mut out = Dataset {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for (t, s) in tracks.into_iter().zip(splits) {
            let track = LabeledTrack {
                features: model::TrackFeatures::from_stacks(&t.music, &t.vocal),
                id: t.id,
                label: t.label,
                generator: if t.label == 0 { "real".into() } else { "synth".into() },
            };
            match s {
                datakit::Split::Train => out.train.push(track),
                datakit::Split::Val => out.val.push(track),
                datakit::Split::Test => out.test.push(track),
            }
        }
        Ok(out)
    }

    /// `(train, val, test)` sizes.
    fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    /// `(id, label)` pairs of one split.
    fn labels(&self, split: &str) -> PyResult<Vec<(String, u8)>> {
        Ok(self.split(split)?.iter().map(|t| (t.id.clone(), t.label)).collect())
    }
}

/// A trained or loaded detector.
#[pyclass(module = "clam")]
struct Checkpoint {
    inner: model::Checkpoint,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: model::load_checkpoint(&path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_bytes(bytes: Vec<u8>) -> PyResult<Self> {
        Ok(Self {
            inner: model::Checkpoint::from_bytes(&bytes).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model::save_checkpoint(&self.inner, &path).map_err(to_py)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.inner.to_bytes()
    }

    /// Architecture fields.
    fn model(&self) -> HashMap<String, String> {
        let m = &self.inner.model;
        HashMap::from([
            ("layers".into(), m.layers.to_string()),
            ("features".into(), m.features.to_string()),
            ("embed".into(), m.embed.to_string()),
            ("heads".into(), m.heads.to_string()),
            ("mode".into(), m.mode.name().to_string()),
        ])
    }

    /// Training hyperparameters recorded with the weights.
    fn hyper(&self) -> Vec<(String, String)> {
        self.inner.hyper.clone()
    }

    /// `(id, true, pred, score)` for every track of a dataset split.
    fn predict(&self, data: &Dataset, split: &str) -> PyResult<Vec<(String, u8, u8, f64)>> {
        let preds = trainer::predict(&self.inner.params, &self.inner.model, data.split(split)?).map_err(to_py)?;
        Ok(preds.into_iter().map(|p| (p.id, p.truth, p.pred, p.score)).collect())
    }
}

/// Trains on `data.train`, selecting the epoch with the best validation F1.
/// Returns the checkpoint and per-epoch `(train_loss, bce, align, val_acc, val_f1)`.
#[pyfunction]
#[pyo3(signature = (data, seed=1, epochs=30, alignment="triplet", lambda_=0.5, margin=1.0, lr=3e-3, batch_size=16, mode="dual", embed=32, heads=4))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    data: &Dataset,
    seed: u64,
    epochs: usize,
    alignment: &str,
    lambda_: f64,
    margin: f64,
    lr: f64,
    batch_size: usize,
    mode: &str,
    embed: usize,
    heads: usize,
) -> PyResult<(Checkpoint, Vec<(f64, f64, f64, f64, f64)>)> {
    let first = data
        .train
        .first()
        .ok_or_else(|| PyValueError::new_err("empty training split"))?;
    let mut cfg = TrainConfig {
        seed,
        epochs,
        batch_size,
        ..TrainConfig::default()
    };
    cfg.adam.lr = lr;
    cfg.loss.alignment = AlignmentKind::parse(alignment).map_err(to_py)?;
    cfg.loss.lambda = lambda_;
    cfg.loss.margin = margin;
    cfg.model.mode = StreamMode::parse(mode).map_err(to_py)?;
    cfg.model.layers = first.features.music.shape()[0];
    cfg.model.features = first.features.music.shape()[1] / first.features.music_frames;
    cfg.model.embed = embed;
    cfg.model.heads = heads;
    let out = py
        .detach(|| trainer::train(&cfg, &data.train, &data.val))
        .map_err(to_py)?;
    let history = out
        .history
        .iter()
        .map(|r| (r.train_loss, r.bce, r.align, r.val_acc, r.val_f1))
        .collect();
    Ok((Checkpoint { inner: out.best }, history))
}

/// A per-stream feature stack.
#[pyclass(module = "clam")]
struct LayerStack {
    inner: encoders::LayerStack,
}

#[pymethods]
impl LayerStack {
    /// `data` is layer-major, `layers × frames × features`.
    #[new]
    #[pyo3(signature = (stream, layers, frames, features, data, frame_hop=0.02))]
    fn new(stream: &str, layers: usize, frames: usize, features: usize, data: Vec<f32>, frame_hop: f64) -> PyResult<Self> {
        let tag = match stream {
            "music" => StreamTag::Music,
            "vocal" => StreamTag::Vocal,
            other => return Err(PyValueError::new_err(format!("stream must be music or vocal, got '{other}'"))),
        };
        Ok(Self {
            inner: encoders::LayerStack::new(tag, layers, frames, features, frame_hop, data).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: encoders::load_layerstack(&path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_bytes(bytes: Vec<u8>) -> PyResult<Self> {
        Ok(Self {
            inner: encoders::LayerStack::from_bytes(&bytes).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        encoders::save_layerstack(&self.inner, &path).map_err(to_py)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.inner.to_bytes()
    }

    /// `(layers, frames, features)`.
    fn shape(&self) -> (usize, usize, usize) {
        (self.inner.layers(), self.inner.frames(), self.inner.features())
    }

    fn stream(&self) -> &'static str {
        self.inner.stream().name()
    }

    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }
}

/// Mean hinge over ordered pairs of distinct rows; 0 for fewer than two rows.
#[pyfunction]
#[pyo3(signature = (music, vocal, margin=1.0))]
fn triplet_inbatch(music: Vec<Vec<f64>>, vocal: Vec<Vec<f64>>, margin: f64) -> PyResult<f64> {
    clam_core::objectives::triplet_inbatch(&matrix(music)?, &matrix(vocal)?, margin).map_err(to_py)
}

#[pyfunction]
fn kl_discrete(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    datakit::kl_discrete(&p, &q).map_err(to_py)
}

fn predictions(rows: Vec<(String, u8, u8, f64)>) -> Vec<Prediction> {
    rows.into_iter()
        .map(|(id, truth, pred, score)| Prediction { id, truth, pred, score })
        .collect()
}

/// `tp, fp, fn, tn, accuracy, precision, recall, f1` of `(id, true, pred, score)` rows.
#[pyfunction]
fn confusion_f1(rows: Vec<(String, u8, u8, f64)>) -> PyResult<HashMap<String, f64>> {
    let c = evalstat::confusion_f1(&predictions(rows)).map_err(to_py)?;
    Ok(HashMap::from([
        ("tp".into(), c.tp as f64),
        ("fp".into(), c.fp as f64),
        ("fn".into(), c.fn_ as f64),
        ("tn".into(), c.tn as f64),
        ("accuracy".into(), c.accuracy),
        ("precision".into(), c.precision),
        ("recall".into(), c.recall),
        ("f1".into(), c.f1),
    ]))
}

/// Exact two-sided p-value for `c` vs `d` discordant pairs.
#[pyfunction]
fn mcnemar_p(c: usize, d: usize) -> f64 {
    evalstat::mcnemar_p(c, d)
}

/// `(a, b, c, d, p)` for two prediction sets over the same ids.
#[pyfunction]
fn mcnemar(first: Vec<(String, u8, u8, f64)>, second: Vec<(String, u8, u8, f64)>) -> PyResult<(usize, usize, usize, usize, f64)> {
    let m = evalstat::mcnemar_exact(&predictions(first), &predictions(second)).map_err(to_py)?;
    Ok((m.a, m.b, m.c, m.d, m.p_value))
}

/// Sequential Elo over `(model_a, model_b, a_won)` matches; best first.
#[pyfunction]
#[pyo3(signature = (matches, k=32.0, initial=1000.0))]
fn elo_rank(matches: Vec<(String, String, bool)>, k: f64, initial: f64) -> PyResult<Vec<(String, f64)>> {
    let log: Vec<MatchRecord> = matches
        .into_iter()
        .map(|(model_a, model_b, a_won)| MatchRecord {
            model_a,
            model_b,
            outcome: if a_won { Outcome::AWins } else { Outcome::BWins },
        })
        .collect();
    Ok(evalstat::leaderboard(evalstat::elo_rank(&log, k, initial).map_err(to_py)?))
}

/// Central-difference check of one random micro-configuration:
/// `(max_rel_error, passed)`.
#[pyfunction]
#[pyo3(signature = (seed, h=1e-6, tol=1e-5))]
fn gradcheck(seed: u64, h: f64, tol: f64) -> PyResult<(f64, bool)> {
    let r = MicroCase::random(seed)
        .and_then(|c| c.grad_check(h, tol))
        .map_err(to_py)?;
    Ok((r.max_rel_error, r.pass))
}

#[pymodule]
fn clam(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Checkpoint>()?;
    m.add_class::<LayerStack>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_inbatch, m)?)?;
    m.add_function(wrap_pyfunction!(kl_discrete, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_f1, m)?)?;
    m.add_function(wrap_pyfunction!(mcnemar_p, m)?)?;
    m.add_function(wrap_pyfunction!(mcnemar, m)?)?;
    m.add_function(wrap_pyfunction!(elo_rank, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
