//! The dual-stream detector: per-stream learned layer aggregation,
//! multi-head self-attention with a residual, mean pooling to a fixed
//! embedding, and a linear head on the concatenated embeddings.
//!
//! Every operation is written once against the autodiff [`Tape`]; the plain
//! tensor entry points ([`aggregate_layers`], [`self_attend`],
//! [`pool_embed`], [`forward`]) run the same code on a throwaway tape.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use crate::encoders::LayerStack;
use crate::error::{Error, Result};
use crate::tensor::{NamedTensors, Tape, Tensor, Var};

/// Embedding width used by the original full-size model.
pub const PAPER_EMBED_DIM: usize = 512;

/// Which embeddings reach the classifier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StreamMode {
    #[default]
    Dual,
    /// Music embedding only; the vocal half of the head sees zeros.
    MusicOnly,
    /// Vocal embedding only; the music half of the head sees zeros.
    VocalOnly,
}

impl StreamMode {
    pub fn name(self) -> &'static str {
        match self {
            StreamMode::Dual => "dual",
            StreamMode::MusicOnly => "music",
            StreamMode::VocalOnly => "vocal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(StreamMode::Dual),
            "music" => Ok(StreamMode::MusicOnly),
            "vocal" => Ok(StreamMode::VocalOnly),
            other => Err(Error::Config(format!(
                "unknown stream mode '{other}' (expected dual, music or vocal)"
            ))),
        }
    }

    fn uses_music(self) -> bool {
        self != StreamMode::VocalOnly
    }

    fn uses_vocal(self) -> bool {
        self != StreamMode::MusicOnly
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub features: usize,
    pub embed: usize,
    pub heads: usize,
    pub mode: StreamMode,
    /// `tanh` after the pooled projection; only disabled to isolate pooling.
    pub pool_tanh: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            features: 16,
            embed: 32,
            heads: 4,
            mode: StreamMode::Dual,
            pool_tanh: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.features == 0 || self.embed == 0 || self.heads == 0 {
            return Err(Error::Config("model dimensions must all be at least 1".into()));
        }
        if self.features % self.heads != 0 {
            return Err(Error::Config(format!(
                "feature dim {} is not divisible by {} heads",
                self.features, self.heads
            )));
        }
        Ok(())
    }
}

/// Attention projections for one stream, each `d × d`, applied as `X·W`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamParams {
    /// `1 × L`.
    pub layer_weights: Tensor,
    pub attn: AttentionParams,
    /// `d × e`.
    pub pool_w: Tensor,
    /// `1 × e`.
    pub pool_b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClamParams {
    pub music: StreamParams,
    pub vocal: StreamParams,
    /// `2e × 1`.
    pub classifier_w: Tensor,
    /// `1 × 1`.
    pub classifier_b: Tensor,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape")
}

impl StreamParams {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let (l, d, e) = (cfg.layers, cfg.features, cfg.embed);
        Self {
            layer_weights: Tensor::full(&[1, l], 1.0 / l as f64),
            attn: AttentionParams {
                wq: uniform(rng, d, d, d),
                wk: uniform(rng, d, d, d),
                wv: uniform(rng, d, d, d),
                wo: uniform(rng, d, d, d),
            },
            pool_w: uniform(rng, d, e, d),
            pool_b: Tensor::zeros(&[1, e]),
        }
    }

    fn tensors(&self) -> [&Tensor; 7] {
        [
            &self.layer_weights,
            &self.attn.wq,
            &self.attn.wk,
            &self.attn.wv,
            &self.attn.wo,
            &self.pool_w,
            &self.pool_b,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 7] {
        [
            &mut self.layer_weights,
            &mut self.attn.wq,
            &mut self.attn.wk,
            &mut self.attn.wv,
            &mut self.attn.wo,
            &mut self.pool_w,
            &mut self.pool_b,
        ]
    }
}

const STREAM_FIELDS: [&str; 7] = [
    "layer_weights",
    "attn.wq",
    "attn.wk",
    "attn.wv",
    "attn.wo",
    "pool.w",
    "pool.b",
];

impl ClamParams {
    /// Seeded initialization: projections uniform in `±1/√fan_in`, biases
    /// zero, layer weights `1/L`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let music = StreamParams::init(cfg, &mut rng);
        let vocal = StreamParams::init(cfg, &mut rng);
        let classifier_w = uniform(&mut rng, 2 * cfg.embed, 1, 2 * cfg.embed);
        Ok(Self {
            music,
            vocal,
            classifier_w,
            classifier_b: Tensor::zeros(&[1, 1]),
        })
    }

    /// Parameter names in canonical order.
    pub fn names() -> Vec<String> {
        let mut names = Vec::with_capacity(16);
        for stream in ["music", "vocal"] {
            names.extend(STREAM_FIELDS.iter().map(|f| format!("{stream}.{f}")));
        }
        names.push("classifier.w".into());
        names.push("classifier.b".into());
        names
    }

    /// Tensors in the order of [`ClamParams::names`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.music.tensors().into();
        out.extend(self.vocal.tensors());
        out.push(&self.classifier_w);
        out.push(&self.classifier_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.music.tensors_mut().into();
        out.extend(self.vocal.tensors_mut());
        out.push(&mut self.classifier_w);
        out.push(&mut self.classifier_b);
        out
    }

    pub fn to_named(&self) -> NamedTensors {
        Self::names()
            .into_iter()
            .zip(self.tensors())
            .map(|(n, t)| (n, t.clone()))
            .collect()
    }

    /// Rebuilds parameters from a named-tensor list, checking every shape
    /// against `cfg`.
    pub fn from_named(named: NamedTensors, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut params = Self::init(cfg, 0)?;
        let names = Self::names();
        if named.len() != names.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                names.len(),
                named.len()
            )));
        }
        for ((expected, slot), (name, tensor)) in names.iter().zip(params.tensors_mut()).zip(named) {
            if &name != expected {
                return Err(Error::Format(format!("expected parameter '{expected}', found '{name}'")));
            }
            if tensor.shape() != slot.shape() {
                return Err(Error::Format(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            if !tensor.is_finite() {
                return Err(Error::Format(format!("parameter '{name}' is not finite")));
            }
            *slot = tensor;
        }
        Ok(params)
    }

    /// Records every parameter on `tape` as a gradient-tracked leaf.
    pub fn record<'t>(&self, tape: &'t Tape) -> ParamVars<'t> {
        ParamVars {
            vars: self.tensors().into_iter().map(|t| tape.param(t.clone())).collect(),
        }
    }
}

/// Tape handles for every parameter, in [`ClamParams::names`] order.
#[derive(Clone, Debug)]
pub struct ParamVars<'t> {
    vars: Vec<Var<'t>>,
}

/// Handles for one stream.
#[derive(Clone, Copy, Debug)]
pub struct StreamVars<'t> {
    pub layer_weights: Var<'t>,
    pub wq: Var<'t>,
    pub wk: Var<'t>,
    pub wv: Var<'t>,
    pub wo: Var<'t>,
    pub pool_w: Var<'t>,
    pub pool_b: Var<'t>,
}

impl<'t> ParamVars<'t> {
    /// Wraps handles given in [`ClamParams::names`] order.
    pub fn from_vars(vars: Vec<Var<'t>>) -> Result<Self> {
        if vars.len() != STREAM_FIELDS.len() * 2 + 2 {
            return Err(Error::dim("param_vars", &[STREAM_FIELDS.len() * 2 + 2], &[vars.len()]));
        }
        Ok(Self { vars })
    }

    pub fn all(&self) -> &[Var<'t>] {
        &self.vars
    }

    fn stream(&self, offset: usize) -> StreamVars<'t> {
        let v = &self.vars[offset..offset + 7];
        StreamVars {
            layer_weights: v[0],
            wq: v[1],
            wk: v[2],
            wv: v[3],
            wo: v[4],
            pool_w: v[5],
            pool_b: v[6],
        }
    }

    pub fn music(&self) -> StreamVars<'t> {
        self.stream(0)
    }

    pub fn vocal(&self) -> StreamVars<'t> {
        self.stream(7)
    }

    pub fn classifier_w(&self) -> Var<'t> {
        self.vars[14]
    }

    pub fn classifier_b(&self) -> Var<'t> {
        self.vars[15]
    }
}

/// Weighted sum of layers: `w` is `1 × L`, `stack` is `L × (T·d)`.
/// Returns the `T × d` aggregated map.
pub fn aggregate_var<'t>(stack: Var<'t>, w: Var<'t>, frames: usize, features: usize) -> Result<Var<'t>> {
    w.matmul(stack)?.reshape(&[frames, features])
}

/// Multi-head scaled dot-product self-attention plus residual. Returns the
/// `T × d` output and the per-head `T × T` attention weights.
pub fn attend_var<'t>(
    x: Var<'t>,
    wq: Var<'t>,
    wk: Var<'t>,
    wv: Var<'t>,
    wo: Var<'t>,
    heads: usize,
) -> Result<(Var<'t>, Vec<Var<'t>>)> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(Error::dim("self_attend", &shape, &[2]));
    }
    let d = shape[1];
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("feature dim {d} is not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (q, k, v) = (x.matmul(wq)?, x.matmul(wk)?, x.matmul(wv)?);
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (
            q.narrow(1, h * dh, dh)?,
            k.narrow(1, h * dh, dh)?,
            v.narrow(1, h * dh, dh)?,
        );
        let a = qh.matmul(kh.t()?)?.scale(scale)?.softmax(1)?;
        outs.push(a.matmul(vh)?);
        weights.push(a);
    }
    let joined = if heads == 1 { outs[0] } else { x.tape().concat(&outs, 1)? };
    Ok((joined.matmul(wo)?.add(x)?, weights))
}

/// Mean over frames, affine `d → e`, optional `tanh`. Returns `1 × e`.
pub fn pool_var<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>, apply_tanh: bool) -> Result<Var<'t>> {
    let z = x.mean(0)?.matmul(w)?.add(b)?;
    if apply_tanh {
        z.tanh()
    } else {
        Ok(z)
    }
}

/// One stream of one track: `stack` is `L × (T·d)`. Returns `1 × e`.
pub fn stream_embed<'t>(
    stack: Var<'t>,
    frames: usize,
    p: &StreamVars<'t>,
    cfg: &ModelConfig,
) -> Result<Var<'t>> {
    let shape = stack.shape();
    if shape[0] != cfg.layers || shape[1] != frames * cfg.features {
        return Err(Error::dim(
            "forward",
            &[cfg.layers, frames * cfg.features],
            &shape,
        ));
    }
    let x = aggregate_var(stack, p.layer_weights, frames, cfg.features)?;
    let (y, _) = attend_var(x, p.wq, p.wk, p.wv, p.wo, cfg.heads)?;
    pool_var(y, p.pool_w, p.pool_b, cfg.pool_tanh)
}

/// A track's two layer stacks flattened to `L × (T·d)` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackFeatures {
    pub music: Tensor,
    pub vocal: Tensor,
    pub music_frames: usize,
    pub vocal_frames: usize,
}

impl TrackFeatures {
    pub fn from_stacks(music: &LayerStack, vocal: &LayerStack) -> Self {
        Self {
            music: music.to_matrix(),
            vocal: vocal.to_matrix(),
            music_frames: music.frames(),
            vocal_frames: vocal.frames(),
        }
    }
}

/// Per-track outputs recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TrackVars<'t> {
    /// `1 × 1`.
    pub logit: Var<'t>,
    /// `1 × e`; absent when the stream is disabled.
    pub music: Option<Var<'t>>,
    pub vocal: Option<Var<'t>>,
}

/// Records the full forward pass of one track.
pub fn forward_var<'t>(
    tape: &'t Tape,
    track: &TrackFeatures,
    p: &ParamVars<'t>,
    cfg: &ModelConfig,
) -> Result<TrackVars<'t>> {
    let zeros = || tape.constant(Tensor::zeros(&[1, cfg.embed]));
    let music = if cfg.mode.uses_music() {
        let s = tape.constant(track.music.clone());
        Some(stream_embed(s, track.music_frames, &p.music(), cfg)?)
    } else {
        None
    };
    let vocal = if cfg.mode.uses_vocal() {
        let s = tape.constant(track.vocal.clone());
        Some(stream_embed(s, track.vocal_frames, &p.vocal(), cfg)?)
    } else {
        None
    };
    let fused = tape.concat(&[music.unwrap_or_else(zeros), vocal.unwrap_or_else(zeros)], 1)?;
    let logit = fused.matmul(p.classifier_w())?.add(p.classifier_b())?;
    Ok(TrackVars { logit, music, vocal })
}

/// Fixed-size embeddings of one track.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamEmbeddingPair {
    pub id: String,
    pub music: Vec<f64>,
    pub vocal: Vec<f64>,
}

/// Logit and embeddings of one track. Disabled streams yield zero
/// embeddings.
pub fn forward(
    id: &str,
    music: &LayerStack,
    vocal: &LayerStack,
    params: &ClamParams,
    cfg: &ModelConfig,
) -> Result<(f64, StreamEmbeddingPair)> {
    forward_features(id, &TrackFeatures::from_stacks(music, vocal), params, cfg)
}

pub fn forward_features(
    id: &str,
    track: &TrackFeatures,
    params: &ClamParams,
    cfg: &ModelConfig,
) -> Result<(f64, StreamEmbeddingPair)> {
    let tape = Tape::new();
    let vars = params.record(&tape);
    let out = forward_var(&tape, track, &vars, cfg)?;
    let embed = |v: Option<Var<'_>>| v.map_or_else(|| vec![0.0; cfg.embed], |v| v.value().into_data());
    Ok((
        out.logit.item(),
        StreamEmbeddingPair {
            id: id.to_string(),
            music: embed(out.music),
            vocal: embed(out.vocal),
        },
    ))
}

/// `Σ wᵢ · layerᵢ` as a `T × d` tensor.
pub fn aggregate_layers(stack: &LayerStack, w: &[f64]) -> Result<Tensor> {
    if w.len() != stack.layers() {
        return Err(Error::dim("aggregate_layers", &[stack.layers()], &[w.len()]));
    }
    let tape = Tape::new();
    let s = tape.constant(stack.to_matrix());
    let wv = tape.constant(Tensor::new(vec![1, w.len()], w.to_vec())?);
    Ok(aggregate_var(s, wv, stack.frames(), stack.features())?.value())
}

/// Output and per-head attention weights of [`self_attend`].
#[derive(Clone, Debug)]
pub struct Attended {
    pub output: Tensor,
    pub weights: Vec<Tensor>,
}

pub fn self_attend(map: &Tensor, p: &AttentionParams, heads: usize) -> Result<Attended> {
    let tape = Tape::new();
    let c = |t: &Tensor| tape.constant(t.clone());
    let (out, weights) = attend_var(c(map), c(&p.wq), c(&p.wk), c(&p.wv), c(&p.wo), heads)?;
    Ok(Attended {
        output: out.value(),
        weights: weights.into_iter().map(Var::value).collect(),
    })
}

/// Pooled embedding of a `T × d` map; `w` is `d × e`, `b` is `1 × e`.
pub fn pool_embed(map: &Tensor, w: &Tensor, b: &Tensor, apply_tanh: bool) -> Result<Vec<f64>> {
    if map.rank() != 2 || map.shape()[0] == 0 {
        return Err(Error::dim("pool_embed", map.shape(), &[1, w.shape()[0]]));
    }
    let tape = Tape::new();
    let out = pool_var(tape.constant(map.clone()), tape.constant(w.clone()), tape.constant(b.clone()), apply_tanh)?;
    Ok(out.value().into_data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::StreamTag;

    fn stack(layers: &[Vec<f32>], t: usize, d: usize) -> LayerStack {
        LayerStack::new(StreamTag::Music, layers.len(), t, d, 0.1, layers.concat()).unwrap()
    }

    #[test]
    fn aggregation_examples() {
        let s = stack(&[vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]], 2, 2);
        let avg = aggregate_layers(&s, &[0.5, 0.5]).unwrap();
        assert_eq!(avg.data(), &[3.0, 4.0, 5.0, 6.0]);
        assert_eq!(aggregate_layers(&s, &[0.0, 1.0]).unwrap().data(), &[5.0, 6.0, 7.0, 8.0]);
        assert!(aggregate_layers(&s, &[0.0, 0.0]).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(matches!(aggregate_layers(&s, &[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn heads_must_divide_features() {
        let cfg = ModelConfig {
            features: 6,
            heads: 4,
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let p = AttentionParams {
            wq: Tensor::eye(6),
            wk: Tensor::eye(6),
            wv: Tensor::eye(6),
            wo: Tensor::eye(6),
        };
        assert!(matches!(self_attend(&Tensor::zeros(&[3, 6]), &p, 4), Err(Error::Config(_))));
    }

    #[test]
    fn names_match_tensor_count() {
        let p = ClamParams::init(&ModelConfig::default(), 3).unwrap();
        assert_eq!(ClamParams::names().len(), p.tensors().len());
        assert_eq!(ClamParams::names()[0], "music.layer_weights");
        assert_eq!(ClamParams::names()[15], "classifier.b");
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::default();
        assert_eq!(ClamParams::init(&cfg, 1).unwrap(), ClamParams::init(&cfg, 1).unwrap());
        assert_ne!(ClamParams::init(&cfg, 1).unwrap(), ClamParams::init(&cfg, 2).unwrap());
        let p = ClamParams::init(&cfg, 1).unwrap();
        assert!(p.music.layer_weights.data().iter().all(|&w| w == 0.25));
        let bound = 1.0 / (cfg.features as f64).sqrt();
        assert!(p.music.attn.wq.data().iter().all(|w| w.abs() <= bound));
    }
}
