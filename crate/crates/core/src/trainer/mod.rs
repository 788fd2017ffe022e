//! Seeded mini-batch training: forward every track of a batch on one tape,
//! BCE over the batch, alignment over its real tracks, `bce + λ·align`,
//! backward, AdamW. The checkpoint with the best validation F1 is kept.

mod adamw;
mod micro;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adamw::{adamw_step, AdamConfig, OptState};
pub use micro::MicroCase;

use crate::datakit::LabeledTrack;
use crate::error::{Error, Result};
use crate::evalstat::{confusion_f1, Prediction};
use crate::model::{forward_var, Checkpoint, ClamParams, ModelConfig, StreamMode, TrackFeatures};
use crate::objectives::{alignment_var, bce_var, total_var, AlignmentKind, LossConfig};
use crate::tensor::{Tape, Tensor, Var};

/// Batch size of the original full-scale runs.
pub const PAPER_BATCH_SIZE: usize = 128;
/// Learning rate of the original full-scale runs.
pub const PAPER_LR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 16,
            epochs: 30,
            seed: 1,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.loss.validate()?;
        self.model.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch size must be >= 2, got {}", self.batch_size)));
        }
        if self.model.mode != StreamMode::Dual && self.loss.alignment != AlignmentKind::None && self.loss.lambda != 0.0 {
            return Err(Error::Config(format!(
                "alignment '{}' needs both streams, but the model mode is '{}'",
                self.loss.alignment,
                self.model.mode.name()
            )));
        }
        Ok(())
    }

    /// Hyperparameters echoed into checkpoint headers.
    pub fn hyper(&self) -> Vec<(String, String)> {
        [
            ("alignment", self.loss.alignment.name().to_string()),
            ("margin", self.loss.margin.to_string()),
            ("lambda", self.loss.lambda.to_string()),
            ("huber_delta", self.loss.huber_delta.to_string()),
            ("lr", self.adam.lr.to_string()),
            ("weight_decay", self.adam.weight_decay.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Seeded Fisher–Yates shuffle of `0..n` cut into batches of `batch_size`;
/// the last batch may be short.
pub fn make_batches(n: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Contract("cannot batch an empty split".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total loss over training tracks.
    pub train_loss: f64,
    pub bce: f64,
    /// Mean weighted alignment term `λ·align`, so that
    /// `train_loss = bce + align`.
    pub align: f64,
    pub val_acc: f64,
    pub val_f1: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} train_loss={:.9} bce={:.9} align={:.9} val_acc={:.6} val_f1={:.6}",
            self.epoch, self.train_loss, self.bce, self.align, self.val_acc, self.val_f1
        )
    }
}

pub fn format_history(history: &[EpochRecord]) -> String {
    history.iter().map(|r| format!("{r}\n")).collect()
}

/// Losses of one batch, recorded on `tape`.
pub struct BatchLoss<'t> {
    pub total: Var<'t>,
    pub bce: Var<'t>,
    pub align: Var<'t>,
}

/// Records the objective for `tracks` against parameter handles `vars`.
pub fn batch_loss<'t>(
    tape: &'t Tape,
    vars: &crate::model::ParamVars<'t>,
    tracks: &[(&TrackFeatures, u8)],
    model: &ModelConfig,
    loss: &LossConfig,
) -> Result<BatchLoss<'t>> {
    let mut logits = Vec::with_capacity(tracks.len());
    let (mut real_m, mut real_v) = (Vec::new(), Vec::new());
    let mut labels = Vec::with_capacity(tracks.len());
    for &(features, label) in tracks {
        let out = forward_var(tape, features, vars, model)?;
        logits.push(out.logit);
        labels.push(label);
        if label == 0 {
            if let (Some(m), Some(v)) = (out.music, out.vocal) {
                real_m.push(m);
                real_v.push(v);
            }
        }
    }
    let bce = bce_var(tape.concat(&logits, 0)?, &labels)?;
    let align = if real_m.is_empty() {
        let empty = || tape.constant(Tensor::zeros(&[0, model.embed]));
        alignment_var(loss.alignment, empty(), empty(), loss)?
    } else {
        alignment_var(loss.alignment, tape.concat(&real_m, 0)?, tape.concat(&real_v, 0)?, loss)?
    };
    let weighted = align.scale(loss.lambda)?;
    let total = total_var(bce, align, loss.lambda)?;
    Ok(BatchLoss {
        total,
        bce,
        align: weighted,
    })
}

/// Scores tracks: `score = σ(logit)`, predicted fake when `score > 0.5`.
pub fn predict(params: &ClamParams, model: &ModelConfig, tracks: &[LabeledTrack]) -> Result<Vec<Prediction>> {
    tracks
        .iter()
        .map(|t| {
            let (logit, _) = crate::model::forward_features(&t.id, &t.features, params, model)?;
            let score = crate::tensor::tape::sigmoid(logit);
            Ok(Prediction {
                id: t.id.clone(),
                truth: t.label,
                pred: u8::from(logit > 0.0),
                score,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the best validation F1 (first on ties).
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Parameters after the last epoch.
    pub last: ClamParams,
}

pub fn train(cfg: &TrainConfig, train_set: &[LabeledTrack], val_set: &[LabeledTrack]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if val_set.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    if train_set.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut params = ClamParams::init(&cfg.model, cfg.seed)?;
    let names = ClamParams::names();
    let mut state = OptState::new(params.tensors());
    let mut history = Vec::with_capacity(cfg.epochs);
    let snapshot = |p: &ClamParams| Checkpoint {
        model: cfg.model.clone(),
        hyper: cfg.hyper(),
        params: p.clone(),
    };
    let mut best = snapshot(&params);
    let (mut best_epoch, mut best_f1) = (0, f64::NEG_INFINITY);

    for epoch in 1..=cfg.epochs {
        let (mut sum_total, mut sum_bce, mut sum_align) = (0.0, 0.0, 0.0);
        for (b, batch) in make_batches(train_set.len(), cfg.batch_size, epoch_seed(cfg.seed, epoch))?
            .into_iter()
            .enumerate()
        {
            let tracks: Vec<(&TrackFeatures, u8)> =
                batch.iter().map(|&i| (&train_set[i].features, train_set[i].label)).collect();
            let tape = Tape::new();
            let vars = params.record(&tape);
            let loss = match batch_loss(&tape, &vars, &tracks, &cfg.model, &cfg.loss) {
                Err(Error::Numeric { .. }) => return Err(Error::NonFiniteLoss { epoch, batch: b }),
                other => other?,
            };
            let total = loss.total.item();
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let n = batch.len() as f64;
            sum_total += total * n;
            sum_bce += loss.bce.item() * n;
            sum_align += loss.align.item() * n;
            let grads = tape.backward(loss.total)?;
            let grads: Vec<Tensor> = vars.all().iter().map(|&v| grads.wrt(v)).collect();
            adamw_step(&mut params.tensors_mut(), &grads, &names, &mut state, &cfg.adam)?;
        }
        let val = confusion_f1(&predict(&params, &cfg.model, val_set)?)?;
        let n = train_set.len() as f64;
        history.push(EpochRecord {
            epoch,
            train_loss: sum_total / n,
            bce: sum_bce / n,
            align: sum_align / n,
            val_acc: val.accuracy,
            val_f1: val.f1,
        });
        if val.f1 > best_f1 {
            best_f1 = val.f1;
            best_epoch = epoch;
            best = snapshot(&params);
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
        last: params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_sizes_keep_the_remainder() {
        let b = make_batches(10, 4, 7).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn one_batch_when_large() {
        let b = make_batches(5, 16, 0).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 5);
        assert_eq!(make_batches(5, 16, 3).unwrap(), make_batches(5, 16, 3).unwrap());
        assert!(matches!(make_batches(0, 4, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn single_stream_rejects_alignment() {
        let mut cfg = TrainConfig::default();
        cfg.model.mode = StreamMode::MusicOnly;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.loss.alignment = AlignmentKind::None;
        assert!(cfg.validate().is_ok());
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
    }
}
