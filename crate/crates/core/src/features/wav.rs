use std::path::Path;

use super::SAMPLE_RATE;
use crate::error::{Error, Result};

/// Reads a mono 16-bit PCM WAV at 16 kHz into samples in `[-1, 1)`.
///
/// Other rates, channel counts, or sample formats are rejected rather than
/// converted.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::data(format!(
            "{}: sample rate {} Hz, expected {SAMPLE_RATE} Hz",
            path.display(),
            spec.sample_rate
        )));
    }
    if spec.channels != 1 {
        return Err(Error::data(format!("{}: {} channels, expected mono", path.display(), spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::data(format!(
            "{}: {}-bit {:?} samples, expected 16-bit PCM",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    reader
        .samples::<i16>()
        .map(|s| Ok(s? as f32 / 32768.0))
        .collect()
}

/// Writes samples as mono 16-bit PCM at 16 kHz, clamping to the i16 range.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}
