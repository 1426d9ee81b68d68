//! Multichannel WAV input and output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcmFormat {
    Int16,
    Float32,
}

/// Reads a WAV file into `[N, M]` samples scaled to `[-1, 1]`, plus its
/// sample rate.
pub fn read_wav(path: &Path) -> Result<(Array2<f64>, u32)> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1i64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(Error::Data(format!(
                "{}: unsupported sample format {fmt:?}/{bits}",
                path.display()
            )))
        }
    };
    if channels == 0 || !samples.len().is_multiple_of(channels) {
        return Err(Error::Data(format!("{}: malformed channel layout", path.display())));
    }
    let frames = samples.len() / channels;
    let data = Array2::from_shape_vec((frames, channels), samples).map_err(|e| Error::Data(e.to_string()))?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("WAV samples"));
    }
    Ok((data, spec.sample_rate))
}

/// Writes `[N, M]` samples. Integer output is clipped to full scale.
pub fn write_wav(path: &Path, data: &Array2<f64>, sample_rate: u32, format: PcmFormat) -> Result<()> {
    let (_, channels) = data.dim();
    if channels == 0 || channels > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!("cannot write {channels} channels")));
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let spec = WavSpec {
        channels: channels as u16,
        sample_rate,
        bits_per_sample: match format {
            PcmFormat::Int16 => 16,
            PcmFormat::Float32 => 32,
        },
        sample_format: match format {
            PcmFormat::Int16 => SampleFormat::Int,
            PcmFormat::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &v in data.iter() {
        match format {
            PcmFormat::Int16 => writer.write_sample((v.clamp(-1.0, 1.0) * 32767.0).round() as i16)?,
            PcmFormat::Float32 => writer.write_sample(v as f32)?,
        }
    }
    writer.finalize()?;
    Ok(())
}
