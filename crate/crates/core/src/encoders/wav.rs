use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

/// Reads a WAV file, averaging channels to mono and scaling integer
/// samples into [-1, 1].
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader =
        hound::WavReader::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let raw: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mono = raw
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(mono, spec.sample_rate as f64)
}

/// Writes mono 32-bit float WAV.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate().round() as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let fmt = |e: hound::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = hound::WavWriter::create(path, spec).map_err(fmt)?;
    for &s in w.samples() {
        writer.write_sample(s as f32).map_err(fmt)?;
    }
    writer.finalize().map_err(fmt)
}
