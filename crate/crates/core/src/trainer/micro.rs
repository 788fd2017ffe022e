//! Tiny random instances of the full model and objective, used for
//! end-to-end gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batch_loss;
use crate::error::Result;
use crate::model::{ClamParams, ModelConfig, ParamVars, StreamMode, TrackFeatures};
use crate::objectives::{AlignmentKind, LossConfig};
use crate::tensor::{grad_check, GradCheckReport, Tensor};

/// A random micro-configuration: `L ≤ 3`, `T ≤ 5`, `d ≤ 8`, `e ≤ 4`,
/// `H ∈ {1, 2}`, a batch of 2–4 tracks of which at least two are real.
#[derive(Clone, Debug)]
pub struct MicroCase {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub params: ClamParams,
    pub tracks: Vec<(TrackFeatures, u8)>,
}

const KINDS: [AlignmentKind; 5] = [
    AlignmentKind::Triplet,
    AlignmentKind::Mse,
    AlignmentKind::Huber,
    AlignmentKind::Cosine,
    AlignmentKind::L1,
];

/// Range of the attention projections in micro-cases.
const ATTN_SCALE: f64 = 2.0;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect())
        .expect("shape matches data")
}

impl MicroCase {
    pub fn random(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heads = rng.random_range(1..=2);
        let model = ModelConfig {
            layers: rng.random_range(1..=3),
            features: heads * rng.random_range(1..=8 / heads),
            embed: rng.random_range(1..=4),
            heads,
            mode: StreamMode::Dual,
            pool_tanh: true,
        };
        // Every other case uses the triplet objective; the rest cycle
        // through the other alignment losses.
        let alignment = if seed % 2 == 0 { KINDS[0] } else { KINDS[1 + (seed as usize / 2) % 4] };
        let loss = LossConfig {
            alignment,
            lambda: 0.5,
            margin: rng.random_range(0.5..2.0),
            huber_delta: 1.0,
        };
        // Attention projections wider than the training init keep attention
        // away from the uniform regime, where query/key gradients sink below
        // the finite-difference noise floor.
        let mut params = ClamParams::init(&model, rng.random())?;
        let d = model.features as f64;
        let scales = [1.0, ATTN_SCALE, ATTN_SCALE, ATTN_SCALE, ATTN_SCALE, 1.0 / d.sqrt(), 0.2];
        let classifier = [2.0, 0.2];
        for (t, &scale) in params
            .tensors_mut()
            .into_iter()
            .zip(scales.iter().chain(&scales).chain(&classifier))
        {
            for v in t.data_mut() {
                *v = rng.random_range(-scale..scale);
            }
        }
        let n = rng.random_range(2..=4);
        let tracks = (0..n)
            .map(|i| {
                let (tm, tv) = (rng.random_range(1..=5), rng.random_range(1..=5));
                let features = TrackFeatures {
                    music: uniform(&mut rng, &[model.layers, tm * model.features], 1.0),
                    vocal: uniform(&mut rng, &[model.layers, tv * model.features], 1.0),
                    music_frames: tm,
                    vocal_frames: tv,
                };
                let label = if i < 2 { 0 } else { rng.random_range(0..=1) };
                (features, label)
            })
            .collect();
        Ok(Self {
            model,
            loss,
            params,
            tracks,
        })
    }

    /// Total loss of the batch as a function of every parameter tensor,
    /// checked against central differences.
    pub fn grad_check(&self, h: f64, tol: f64) -> Result<GradCheckReport> {
        let tracks: Vec<(&TrackFeatures, u8)> = self.tracks.iter().map(|(f, y)| (f, *y)).collect();
        let point: Vec<Tensor> = self.params.tensors().into_iter().cloned().collect();
        grad_check(
            |tape, vars| {
                let pv = ParamVars::from_vars(vars.to_vec())?;
                Ok(batch_loss(tape, &pv, &tracks, &self.model, &self.loss)?.total)
            },
            &point,
            h,
            tol,
        )
    }
}
