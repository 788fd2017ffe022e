//! Dual-stream synthetic-music detection.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense `f64` tensors and a reverse-mode autodiff tape.
//! * [`encoders`]: waveform preprocessing, toy spectral encoders and the
//!   layer-stack file format.
//! * [`model`]: per-stream layer aggregation, self-attention, pooling and
//!   the fused classification head.
//! * [`objectives`]: BCE, in-batch triplet alignment and its ablation
//!   variants.
//! * [`trainer`]: AdamW and the seeded training loop.
//! * [`datakit`]: manifests, out-of-distribution splits and the synthetic
//!   coupled-stream generator.
//! * [`evalstat`]: F1, exact McNemar and Elo.

pub mod datakit;
pub mod error;
pub mod evalstat;
pub mod encoders;
pub mod model;
pub mod objectives;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
