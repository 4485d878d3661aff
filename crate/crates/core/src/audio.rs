//! Multichannel audio files: WAV (integer or float) and headerless
//! interleaved little-endian `f32`.

use std::fs;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Result, SrpError};
use crate::frontend::MultichannelSignal;

fn deinterleave(samples: Vec<f64>, channels: usize, sample_rate: f64) -> Result<MultichannelSignal> {
    if channels == 0 || !samples.len().is_multiple_of(channels) {
        return Err(SrpError::Format(format!(
            "{} samples do not split into {channels} channels",
            samples.len()
        )));
    }
    let frames = samples.len() / channels;
    let mut out = vec![Vec::with_capacity(frames); channels];
    for (idx, s) in samples.into_iter().enumerate() {
        out[idx % channels].push(s);
    }
    MultichannelSignal::new(sample_rate, out)
}

/// Reads a WAV file; integer samples are scaled to `[-1, 1)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelSignal> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let samples: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()?
        }
    };
    deinterleave(samples, spec.channels as usize, spec.sample_rate as f64)
}

/// Writes 32-bit float WAV.
pub fn write_wav(path: impl AsRef<Path>, signal: &MultichannelSignal) -> Result<()> {
    let spec = WavSpec {
        channels: signal.channel_count() as u16,
        sample_rate: signal.sample_rate.round() as u32,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for n in 0..signal.len() {
        for ch in &signal.channels {
            writer.write_sample(ch[n] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Reads headerless interleaved little-endian `f32` samples.
pub fn read_raw_f32(path: impl AsRef<Path>, channels: usize, sample_rate: f64) -> Result<MultichannelSignal> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(SrpError::Format("raw audio length is not a multiple of 4 bytes".into()));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    deinterleave(samples, channels, sample_rate)
}

/// Dispatches on the extension: `.wav` as WAV, anything else as raw `f32`.
pub fn read_audio(path: impl AsRef<Path>, channels: usize, sample_rate: f64) -> Result<MultichannelSignal> {
    let path = path.as_ref();
    let is_wav = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    let signal = if is_wav {
        read_wav(path)?
    } else {
        read_raw_f32(path, channels, sample_rate)?
    };
    if signal.channel_count() != channels {
        return Err(SrpError::Dimension {
            what: "audio channels",
            expected: channels,
            found: signal.channel_count(),
        });
    }
    if (signal.sample_rate - sample_rate).abs() > 1e-6 {
        return Err(SrpError::Config(format!(
            "audio is sampled at {} Hz but the pipeline expects {sample_rate} Hz",
            signal.sample_rate
        )));
    }
    Ok(signal)
}
