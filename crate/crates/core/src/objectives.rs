//! Training objective: BCE on the fused logits plus a weighted alignment
//! term between the music and vocal embeddings of real tracks.
//!
//! The `*_var` functions record onto a tape; the plain versions evaluate
//! the same code on scalars and tensors.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Label of an authentic track.
pub const REAL: u8 = 0;
/// Label of a generated track.
pub const FAKE: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignmentKind {
    Triplet,
    Mse,
    Huber,
    L1,
    Cosine,
    None,
}

impl AlignmentKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "triplet" => Self::Triplet,
            "mse" => Self::Mse,
            "huber" => Self::Huber,
            "l1" => Self::L1,
            "cosine" => Self::Cosine,
            "none" => Self::None,
            other => {
                return Err(Error::Config(format!(
                    "unknown alignment '{other}' (expected triplet, mse, huber, l1, cosine or none)"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Triplet => "triplet",
            Self::Mse => "mse",
            Self::Huber => "huber",
            Self::L1 => "l1",
            Self::Cosine => "cosine",
            Self::None => "none",
        }
    }
}

impl fmt::Display for AlignmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub alignment: AlignmentKind,
    pub lambda: f64,
    pub huber_delta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            alignment: AlignmentKind::Triplet,
            lambda: 0.5,
            huber_delta: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::Config(format!(
                "huber delta must be positive, got {}",
                self.huber_delta
            )));
        }
        Ok(())
    }
}

pub fn check_labels(labels: &[u8]) -> Result<()> {
    match labels.iter().find(|&&l| l > 1) {
        Some(l) => Err(Error::Contract(format!("label {l} is not 0 (real) or 1 (fake)"))),
        None => Ok(()),
    }
}

/// Mean of `softplus(z) − y·z` over an `N × 1` logit column.
pub fn bce_var<'t>(logits: Var<'t>, labels: &[u8]) -> Result<Var<'t>> {
    if labels.is_empty() {
        return Err(Error::Contract("BCE over an empty batch".into()));
    }
    check_labels(labels)?;
    let shape = logits.shape();
    if shape.iter().product::<usize>() != labels.len() {
        return Err(Error::dim("bce", &shape, &[labels.len()]));
    }
    let y = Tensor::new(shape, labels.iter().map(|&l| l as f64).collect())?;
    let y = logits.tape().constant(y);
    logits.softplus()?.sub(logits.mul(y)?)?.mean_all()
}

fn zero<'t>(tape: &'t Tape) -> Var<'t> {
    tape.constant(Tensor::scalar(0.0))
}

fn check_pair(m: Var<'_>, v: Var<'_>, op: &'static str) -> Result<usize> {
    let (ms, vs) = (m.shape(), v.shape());
    if ms.len() != 2 || ms != vs {
        return Err(Error::dim(op, &ms, &vs));
    }
    Ok(ms[0])
}

/// Mean hinge `max(0, ‖mᵢ−vᵢ‖² − ‖mᵢ−vⱼ‖² + α)` over all ordered pairs
/// `i ≠ j`; zero for fewer than two rows.
pub fn triplet_var<'t>(music: Var<'t>, vocal: Var<'t>, margin: f64) -> Result<Var<'t>> {
    let n = check_pair(music, vocal, "triplet")?;
    if n <= 1 {
        return Ok(zero(music.tape()));
    }
    let (mut anchor, mut negative) = (Vec::with_capacity(n * (n - 1)), Vec::with_capacity(n * (n - 1)));
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            anchor.push(i);
            negative.push(j);
        }
    }
    let a = music.gather_rows(&anchor)?;
    let pos = a.sq_dist_rows(vocal.gather_rows(&anchor)?)?;
    let neg = a.sq_dist_rows(vocal.gather_rows(&negative)?)?;
    pos.sub(neg)?.add_scalar(margin)?.relu()?.mean_all()
}

/// Matched-pair alignment loss between `N × e` real-track embeddings.
pub fn alignment_var<'t>(
    kind: AlignmentKind,
    music: Var<'t>,
    vocal: Var<'t>,
    cfg: &LossConfig,
) -> Result<Var<'t>> {
    let n = check_pair(music, vocal, kind.name())?;
    if kind == AlignmentKind::Triplet {
        return triplet_var(music, vocal, cfg.margin);
    }
    if n == 0 || kind == AlignmentKind::None {
        return Ok(zero(music.tape()));
    }
    let diff = || music.sub(vocal);
    match kind {
        AlignmentKind::Mse => {
            let d = diff()?;
            d.mul(d)?.mean_all()
        }
        AlignmentKind::Huber => diff()?.huber(cfg.huber_delta)?.mean_all(),
        AlignmentKind::L1 => diff()?.abs()?.mean_all(),
        AlignmentKind::Cosine => {
            let row_norm = |x: Var<'t>| x.mul(x)?.sum(1)?.sqrt();
            let (nm, nv) = (row_norm(music)?, row_norm(vocal)?);
            let denom = nm.mul(nv)?;
            if denom.value().data().contains(&0.0) {
                return Err(Error::Numeric { kernel: "cosine" });
            }
            let cos = music.mul(vocal)?.sum(1)?.div(denom)?;
            cos.scale(-1.0)?.add_scalar(1.0)?.mean_all()
        }
        AlignmentKind::Triplet | AlignmentKind::None => unreachable!(),
    }
}

/// `bce + λ·align`.
pub fn total_var<'t>(bce: Var<'t>, align: Var<'t>, lambda: f64) -> Result<Var<'t>> {
    bce.add(align.scale(lambda)?)
}

pub fn bce_with_logits(logits: &[f64], labels: &[u8]) -> Result<f64> {
    let tape = Tape::new();
    let z = tape.constant(Tensor::vector(logits.to_vec()));
    Ok(bce_var(z, labels)?.item())
}

pub fn triplet_inbatch(music: &Tensor, vocal: &Tensor, margin: f64) -> Result<f64> {
    let tape = Tape::new();
    Ok(triplet_var(tape.constant(music.clone()), tape.constant(vocal.clone()), margin)?.item())
}

pub fn alignment_variant(
    kind: AlignmentKind,
    music: &Tensor,
    vocal: &Tensor,
    cfg: &LossConfig,
) -> Result<f64> {
    let tape = Tape::new();
    Ok(alignment_var(kind, tape.constant(music.clone()), tape.constant(vocal.clone()), cfg)?.item())
}

pub fn total_loss(bce: f64, align: f64, lambda: f64) -> f64 {
    bce + lambda * align
}
