//! Track manifests, per-generator out-of-distribution splits, feature
//! loading and the synthetic coupled-stream generator.

mod synth;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

pub use synth::{
    assign_splits, cross_stream_statistic, histogram, kl_by_coupling, materialize, stat_kl, synth_dataset, synth_splits, SynthSpec,
    SynthTrack, SYNTH_TEST, SYNTH_VAL,
};

use crate::encoders::{
    encode, load_layerstack, preprocess, read_wav, EncoderSpec, MAX_DURATION, TARGET_RATE,
};
use crate::error::{Error, Result};
use crate::model::TrackFeatures;

/// Generators whose fakes are used for training and validation.
pub const TABLE3_TRAIN: [&str; 4] = ["Suno 3.5", "Udio 1.5", "Diffrythm", "Suno 2"];
/// Generators held out for out-of-distribution testing.
pub const TABLE3_TEST: [&str; 5] = ["Suno 1", "Suno 3", "Riffusion", "Yue", "Voice Clones"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tier {
    Real,
    FullyFake,
    MostlyFake,
}

impl Tier {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Real" => Some(Tier::Real),
            "FullyFake" => Some(Tier::FullyFake),
            "MostlyFake" => Some(Tier::MostlyFake),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tier::Real => "Real",
            Tier::FullyFake => "FullyFake",
            Tier::MostlyFake => "MostlyFake",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One manifest row. `path` is either a `.wav` file or a stem `S` naming
/// the feature files `S.music.clms` and `S.vocal.clms`; relative paths
/// resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackRecord {
    pub id: String,
    pub path: String,
    pub label: u8,
    pub tier: Tier,
    pub generator: String,
    pub split: Split,
}

pub const MANIFEST_HEADER: &str = "id\tpath\tlabel\ttier\tgenerator\tsplit";

pub fn parse_manifest(path: &Path) -> Result<Vec<TrackRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest_str(&text, path)
}

/// Parses manifest text; `path` only labels errors.
pub fn parse_manifest_str(text: &str, path: &Path) -> Result<Vec<TrackRecord>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, h)) if h == MANIFEST_HEADER => {}
        Some((n, h)) => return Err(err(n, format!("expected header '{MANIFEST_HEADER}', found '{h}'"))),
        None => return Err(err(1, "empty manifest".into())),
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(err(n, format!("expected 6 tab-separated columns, found {}", cols.len())));
        }
        let label = match cols[2] {
            "0" => 0,
            "1" => 1,
            other => return Err(err(n, format!("label must be 0 or 1, found '{other}'"))),
        };
        let tier = Tier::parse(cols[3]).ok_or_else(|| err(n, format!("unknown tier '{}'", cols[3])))?;
        if (tier == Tier::Real) != (label == 0) {
            return Err(err(n, format!("tier {} is inconsistent with label {label}", tier.name())));
        }
        let split = Split::parse(cols[5]).ok_or_else(|| err(n, format!("unknown split '{}'", cols[5])))?;
        if cols[0].is_empty() {
            return Err(err(n, "empty id".into()));
        }
        if !seen.insert(cols[0].to_string()) {
            return Err(err(n, format!("duplicate id '{}'", cols[0])));
        }
        out.push(TrackRecord {
            id: cols[0].into(),
            path: cols[1].into(),
            label,
            tier,
            generator: cols[4].into(),
            split,
        });
    }
    Ok(out)
}

pub fn format_manifest(records: &[TrackRecord]) -> String {
    let mut s = String::from(MANIFEST_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.id,
            r.path,
            r.label,
            r.tier.name(),
            r.generator,
            r.split
        ));
    }
    s
}

pub fn write_manifest(path: &Path, records: &[TrackRecord]) -> Result<()> {
    std::fs::write(path, format_manifest(records)).map_err(|e| Error::io(path, e))
}

/// Canonical generator key: lowercase, only alphanumerics and dots, so
/// "Suno 3.5", "suno-3.5" and "SUNO_3.5" coincide.
pub fn generator_key(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_alphanumeric() || *c == '.')
        .flat_map(char::to_lowercase)
        .collect()
}

/// Stable 64-bit hash of `id` under `seed` (FNV-1a with a final mix).
pub fn seeded_hash(id: &str, seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// Maps `id` to `[0, 1)` deterministically.
pub fn unit_hash(id: &str, seed: u64) -> f64 {
    (seeded_hash(id, seed) >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitConfig {
    pub seed: u64,
    /// Fraction of train-side tracks (reals and train-generator fakes)
    /// held out for validation.
    pub val_fraction: f64,
    /// Fraction of real tracks sent to the test split.
    pub real_test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            val_fraction: 0.1,
            real_test_fraction: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits<T = TrackRecord> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

impl<T> Default for Splits<T> {
    fn default() -> Self {
        Self {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        }
    }
}

/// Routes fakes by generator and reals by seeded hash. Every output record
/// carries its new split; input order is preserved within each output.
pub fn split_ood(
    records: &[TrackRecord],
    train_generators: &[&str],
    test_generators: &[&str],
    cfg: &SplitConfig,
) -> Result<Splits> {
    let train: HashSet<String> = train_generators.iter().map(|g| generator_key(g)).collect();
    let test: HashSet<String> = test_generators.iter().map(|g| generator_key(g)).collect();
    if let Some(g) = train.intersection(&test).next() {
        return Err(Error::Config(format!("generator '{g}' is in both the train and test sets")));
    }
    for f in [cfg.val_fraction, cfg.real_test_fraction] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Config(format!("split fractions must lie in [0, 1], got {f}")));
        }
    }
    let mut out = Splits::default();
    for r in records {
        let u = unit_hash(&r.id, cfg.seed);
        let split = if r.label == 0 {
            if u < cfg.real_test_fraction {
                Split::Test
            } else if u < cfg.real_test_fraction + (1.0 - cfg.real_test_fraction) * cfg.val_fraction {
                Split::Val
            } else {
                Split::Train
            }
        } else {
            let key = generator_key(&r.generator);
            if test.contains(&key) {
                Split::Test
            } else if train.contains(&key) {
                if u < cfg.val_fraction {
                    Split::Val
                } else {
                    Split::Train
                }
            } else {
                return Err(Error::Config(format!(
                    "track '{}': generator '{}' is in neither the train nor the test set",
                    r.id, r.generator
                )));
            }
        };
        let rec = TrackRecord {
            split,
            ..r.clone()
        };
        match split {
            Split::Train => out.train.push(rec),
            Split::Val => out.val.push(rec),
            Split::Test => out.test.push(rec),
        }
    }
    Ok(out)
}

/// Kullback–Leibler divergence `Σ pᵢ ln(pᵢ/qᵢ)` in nats.
pub fn kl_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dim("kl_discrete", &[p.len()], &[q.len()]));
    }
    for (name, v) in [("p", p), ("q", q)] {
        if v.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::Domain(format!("{name} has a negative or NaN entry")));
        }
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("{name} sums to {s}, not 1")));
        }
    }
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::Domain(format!("q[{i}] = 0 where p[{i}] = {pi}")));
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl)
}

/// How `.wav` sources are turned into layer stacks.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodeSettings {
    pub n_filters: usize,
    pub n_layers: usize,
    pub projection_seed: u64,
}

impl EncodeSettings {
    pub fn specs(&self) -> (EncoderSpec, EncoderSpec) {
        (
            EncoderSpec::music(self.n_filters, self.n_layers, self.projection_seed),
            EncoderSpec::vocal(self.n_filters, self.n_layers, self.projection_seed),
        )
    }
}

/// Feature-file pair for a stem.
pub fn stack_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let s = stem.as_os_str().to_string_lossy();
    (PathBuf::from(format!("{s}.music.clms")), PathBuf::from(format!("{s}.vocal.clms")))
}

/// Loads or computes the features of one record.
pub fn load_track(rec: &TrackRecord, root: &Path, enc: &EncodeSettings) -> Result<TrackFeatures> {
    let path = root.join(&rec.path);
    if rec.path.to_ascii_lowercase().ends_with(".wav") {
        let w = preprocess(&read_wav(&path)?, TARGET_RATE, MAX_DURATION)?;
        let (ms, vs) = enc.specs();
        return Ok(TrackFeatures::from_stacks(&encode(&w, &ms)?, &encode(&w, &vs)?));
    }
    let (mp, vp) = stack_paths(&path);
    let (m, v) = (load_layerstack(&mp)?, load_layerstack(&vp)?);
    if m.layers() != v.layers() || m.features() != v.features() {
        return Err(Error::Format(format!(
            "track '{}': music stack is {}×{} but vocal stack is {}×{} (layers × features)",
            rec.id,
            m.layers(),
            m.features(),
            v.layers(),
            v.features()
        )));
    }
    Ok(TrackFeatures::from_stacks(&m, &v))
}

/// A record with its features, ready for training or evaluation.
#[derive(Clone, Debug)]
pub struct LabeledTrack {
    pub id: String,
    pub label: u8,
    pub generator: String,
    pub features: TrackFeatures,
}

pub fn load_tracks(records: &[TrackRecord], root: &Path, enc: &EncodeSettings) -> Result<Vec<LabeledTrack>> {
    records
        .iter()
        .map(|r| {
            Ok(LabeledTrack {
                id: r.id.clone(),
                label: r.label,
                generator: r.generator.clone(),
                features: load_track(r, root, enc)?,
            })
        })
        .collect()
}
