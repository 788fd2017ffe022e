//! `LayerStack` and its binary file format.
//!
//! Layout (little-endian): `CLMS`, u32 version (1), u8 stream tag
//! (0 music, 1 vocal), u32 L, u32 T, u32 d, f64 frame hop in seconds,
//! then `L·T·d` f32 values, layer-major then row-major.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CLMS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 4 * 3 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamTag {
    Music,
    Vocal,
}

impl StreamTag {
    pub fn code(self) -> u8 {
        match self {
            StreamTag::Music => 0,
            StreamTag::Vocal => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(StreamTag::Music),
            1 => Ok(StreamTag::Vocal),
            other => Err(Error::Format(format!("unknown stream tag {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StreamTag::Music => "music",
            StreamTag::Vocal => "vocal",
        }
    }
}

/// `L` feature maps of `T × d` for one stream of one track.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStack {
    stream: StreamTag,
    layers: usize,
    frames: usize,
    features: usize,
    frame_hop: f64,
    data: Vec<f32>,
}

impl LayerStack {
    pub fn new(
        stream: StreamTag,
        layers: usize,
        frames: usize,
        features: usize,
        frame_hop: f64,
        data: Vec<f32>,
    ) -> Result<Self> {
        if layers == 0 || frames == 0 || features == 0 {
            return Err(Error::Contract(format!(
                "layer stack extents must be positive, got L={layers} T={frames} d={features}"
            )));
        }
        if data.len() != layers * frames * features {
            return Err(Error::dim("layer_stack", &[layers, frames, features], &[data.len()]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { kernel: "layer_stack" });
        }
        Ok(Self {
            stream,
            layers,
            frames,
            features,
            frame_hop,
            data,
        })
    }

    /// Builds a stack from `f64` layer maps (each `T × d`), rounding to f32.
    pub fn from_layers(stream: StreamTag, frame_hop: f64, layers: &[Tensor]) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Contract("layer stack needs at least one layer".into()))?;
        let (t, d) = (first.shape()[0], first.shape()[1]);
        let mut data = Vec::with_capacity(layers.len() * t * d);
        for l in layers {
            if l.shape() != first.shape() {
                return Err(Error::dim("layer_stack", first.shape(), l.shape()));
            }
            data.extend(l.data().iter().map(|&v| v as f32));
        }
        Self::new(stream, layers.len(), t, d, frame_hop, data)
    }

    pub fn stream(&self) -> StreamTag {
        self.stream
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn frame_hop(&self) -> f64 {
        self.frame_hop
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn layer(&self, i: usize) -> &[f32] {
        let n = self.frames * self.features;
        &self.data[i * n..(i + 1) * n]
    }

    /// Layer `i` as a `T × d` tensor.
    pub fn layer_tensor(&self, i: usize) -> Tensor {
        Tensor::new(
            vec![self.frames, self.features],
            self.layer(i).iter().map(|&v| v as f64).collect(),
        )
        .expect("layer shape")
    }

    /// All layers flattened to `L × (T·d)`.
    pub fn to_matrix(&self) -> Tensor {
        Tensor::new(
            vec![self.layers, self.frames * self.features],
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("stack shape")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.stream.code());
        for n in [self.layers, self.frames, self.features] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.frame_hop.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic, expected CLMS".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported layer stack version {version}")));
        }
        let stream = StreamTag::from_code(bytes[8])?;
        let (layers, frames, features) =
            (u32_at(9) as usize, u32_at(13) as usize, u32_at(17) as usize);
        let frame_hop = f64::from_le_bytes(bytes[21..29].try_into().unwrap());
        let expected = HEADER_LEN + layers * frames * features * 4;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                expected,
                actual: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::Format(format!(
                "{} trailing bytes after layer stack payload",
                bytes.len() - expected
            )));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(stream, layers, frames, features, frame_hop, data)
    }
}

pub fn save_layerstack(stack: &LayerStack, path: &Path) -> Result<()> {
    std::fs::write(path, stack.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_layerstack(path: &Path) -> Result<LayerStack> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    LayerStack::from_bytes(&bytes)
}
