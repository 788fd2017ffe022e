//! Checkpoint file: a plain-text `key=value` header, one blank line, then
//! the parameters as a named-tensor blob.
//!
//! ```text
//! clam-checkpoint 1
//! layers=4
//! features=32
//! ...
//!
//! CLT1<binary>
//! ```

use std::path::Path;

use super::{ClamParams, ModelConfig, StreamMode};
use crate::error::{Error, Result};
use crate::tensor::{read_named, write_named};

const FIRST_LINE: &str = "clam-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    /// Training hyperparameters echoed for provenance (margin, lambda,
    /// seed, ...), in write order.
    pub hyper: Vec<(String, String)>,
    pub params: ClamParams,
}

impl Checkpoint {
    pub fn hyper(&self, key: &str) -> Option<&str> {
        self.hyper.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut header = format!(
            "{FIRST_LINE}\nlayers={}\nfeatures={}\nembed={}\nheads={}\nmode={}\npool_tanh={}\n",
            m.layers,
            m.features,
            m.embed,
            m.heads,
            m.mode.name(),
            m.pool_tanh
        );
        for (k, v) in &self.hyper {
            header.push_str(&format!("{k}={v}\n"));
        }
        header.push('\n');
        let mut out = header.into_bytes();
        write_named(&mut out, &self.params.to_named()).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| Error::Format("checkpoint header is not terminated".into()))?;
        let header = std::str::from_utf8(&bytes[..split])
            .map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
        let mut lines = header.lines();
        if lines.next() != Some(FIRST_LINE) {
            return Err(Error::Format(format!("not a checkpoint (expected '{FIRST_LINE}')")));
        }
        let mut model = ModelConfig::default();
        let mut seen = [false; 6];
        let mut hyper = Vec::new();
        for line in lines {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad checkpoint header line '{line}'")))?;
            let num = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad value for {k}: '{v}'")))
            };
            match k {
                "layers" => (model.layers, seen[0]) = (num(v)?, true),
                "features" => (model.features, seen[1]) = (num(v)?, true),
                "embed" => (model.embed, seen[2]) = (num(v)?, true),
                "heads" => (model.heads, seen[3]) = (num(v)?, true),
                "mode" => {
                    model.mode = StreamMode::parse(v).map_err(|e| Error::Format(e.to_string()))?;
                    seen[4] = true;
                }
                "pool_tanh" => {
                    model.pool_tanh = v
                        .parse()
                        .map_err(|_| Error::Format(format!("bad value for pool_tanh: '{v}'")))?;
                    seen[5] = true;
                }
                _ => hyper.push((k.to_string(), v.to_string())),
            }
        }
        if seen.contains(&false) {
            return Err(Error::Format("checkpoint header is missing model dimensions".into()));
        }
        model.validate().map_err(|e| Error::Format(e.to_string()))?;
        let params = ClamParams::from_named(read_named(&bytes[split + 2..])?, &model)?;
        Ok(Self { model, hyper, params })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
