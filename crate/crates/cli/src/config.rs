//! Flat `key = value` run configuration with dot-namespaced keys.
//!
//! Resolution order: built-in defaults, then the config file, then flags.
//! Every key is listed in [`KEYS`]; anything else is rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "base seed for synthesis, splitting, init and gradient checks"),
    ("synth.n_real", "1375", "number of real tracks"),
    ("synth.n_fake", "1375", "number of fake tracks"),
    ("synth.latent_dim", "8", "latent trajectory width"),
    ("synth.frames", "32", "frames per track"),
    ("synth.features", "16", "feature width per frame"),
    ("synth.layers", "4", "layers per stack"),
    ("synth.coupling", "0.2", "fake vocal coupling to the music latent, in [0, 1]"),
    ("synth.noise", "0.1", "observation noise scale"),
    ("synth.val", "250", "tracks assigned to the validation split"),
    ("synth.test", "500", "tracks assigned to the test split"),
    ("encode.n_filters", "16", "mel filters, which is also the feature width"),
    ("encode.n_layers", "4", "layers per encoded stack"),
    ("encode.projection_seed", "0", "seed of the fixed random projections"),
    ("model.layers", "4", "layers aggregated per stream"),
    ("model.features", "16", "feature width per frame"),
    ("model.embed", "32", "stream embedding width"),
    ("model.heads", "4", "attention heads"),
    ("model.mode", "dual", "streams used: dual, music or vocal"),
    ("loss.alignment", "triplet", "alignment term: triplet, mse, huber, cosine, l1 or none"),
    ("loss.lambda", "0.5", "weight of the alignment term"),
    ("loss.margin", "1.0", "triplet margin"),
    ("loss.huber_delta", "1.0", "Huber transition point"),
    ("train.epochs", "30", "training epochs"),
    ("train.batch_size", "16", "tracks per batch"),
    ("train.lr", "0.003", "AdamW learning rate"),
    ("train.beta1", "0.9", "AdamW first-moment decay"),
    ("train.beta2", "0.999", "AdamW second-moment decay"),
    ("train.eps", "1e-8", "AdamW denominator guard"),
    ("train.weight_decay", "0", "decoupled weight decay"),
    ("train.seeds", "", "comma-separated training seeds; empty means just `seed`"),
    ("split.train_generators", "", "comma-separated fake generators for train/val; empty keeps the manifest splits"),
    ("split.test_generators", "", "comma-separated held-out fake generators"),
    ("split.val_fraction", "0.1", "validation share of train-side tracks"),
    ("split.real_test_fraction", "0.0", "share of real tracks sent to test"),
    ("eval.split", "test", "split to evaluate: train, val, test or all"),
    ("gradcheck.cases", "100", "random micro-configurations to check"),
    ("gradcheck.h", "1e-6", "central-difference step"),
    ("gradcheck.tol", "1e-5", "maximum relative error"),
    ("elo.k", "32", "Elo K factor"),
    ("elo.initial", "1000", "initial Elo rating"),
    ("sweep.lambdas", "0,0.1,0.5,1", "comma-separated alignment weights"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

/// Parses config text. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str, origin: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| ConfigError(format!("{origin}:{}: {msg}", i + 1));
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, found '{line}'")))?;
        let (k, v) = (k.trim(), v.trim());
        if !known(k) {
            return Err(err(format!("unknown key '{k}'")));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(err(format!("key '{k}' given twice")));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Parses a `KEY=VALUE` flag override.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("--set expects KEY=VALUE, found '{s}'")))?;
    let k = k.trim();
    if !known(k) {
        return Err(ConfigError(format!("unknown key '{k}'")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut values: BTreeMap<String, String> =
            KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse_config(&text, &path.display().to_string())? {
                values.insert(k, v);
            }
        }
        for (k, v) in overrides {
            if !known(k) {
                return Err(ConfigError(format!("unknown key '{k}'")));
            }
            values.insert(k.clone(), v.clone());
        }
        Ok(Self { values })
    }

    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut out = self.clone();
        for (k, v) in overrides {
            if !known(k) {
                return Err(ConfigError(format!("unknown key '{k}'")));
            }
            out.values.insert(k.clone(), v.clone());
        }
        Ok(out)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| ConfigError(format!("{key}: cannot parse '{raw}' as {}", std::any::type_name::<T>())))
    }

    /// Comma-separated list; the empty string is the empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError> {
        self.strings(key)
            .into_iter()
            .map(|s| s.parse().map_err(|_| ConfigError(format!("{key}: cannot parse list item '{s}'"))))
            .collect()
    }

    pub fn strings(&self, key: &str) -> Vec<String> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    }

    /// `key=value` lines for every key under one of `prefixes`, sorted.
    /// A prefix without a dot matches that exact key.
    pub fn echo(&self, command: &str, prefixes: &[&str]) -> String {
        let mut s = format!("command={command}\n");
        for (k, v) in &self.values {
            let hit = prefixes
                .iter()
                .any(|p| k == p || k.strip_prefix(p).is_some_and(|rest| rest.starts_with('.')));
            if hit {
                s.push_str(&format!("{k}={v}\n"));
            }
        }
        s
    }
}
