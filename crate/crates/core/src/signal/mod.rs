//! Mono audio container, WAV I/O, resampling, STFT and frame features.

mod features;
mod resample;
mod stft;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::{
    frame_rms_db, loudness_vad, mel_filterbank, read_features, vad_from_levels, write_features,
    FeatureDump, LogMel, MelConfig, MelNormalizer, LOG_FLOOR, VAD_HANGOVER, VAD_THRESHOLD_DB,
};
pub use resample::resample;
pub use stft::{istft, stft, PadMode, Spectrogram, StftConfig};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

const PCM16_SCALE: f64 = 32768.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let s = Self {
            samples,
            sample_rate,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::config("sample rate must be > 0"));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite sample at index {i}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub(crate) fn require_rate(&self, rate: u32, what: &str) -> Result<()> {
        if self.sample_rate != rate {
            return Err(Error::config(format!(
                "{what} expects {rate} Hz audio, got {} Hz",
                self.sample_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WavEncoding {
    #[default]
    Pcm16,
    Float32,
}

/// Reads a WAV file. Multichannel input is an error unless `downmix` is set,
/// in which case channels are averaged.
pub fn read_wav(path: impl AsRef<Path>, downmix: bool) -> Result<Signal> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels != 1 && !downmix {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("{channels} channels; mono required (use down-mixing)"),
        });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 2f64.powi(bits as i32 - 1);
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("unsupported encoding {fmt:?} with {bits} bits"),
            })
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    Signal::new(samples, spec.sample_rate)
}

/// Writes a mono WAV file. PCM16 stores `round(32768 x)` clamped to the
/// 16-bit range.
pub fn write_wav(path: impl AsRef<Path>, signal: &Signal, encoding: WavEncoding) -> Result<()> {
    signal.validate()?;
    let (bits, format) = match encoding {
        WavEncoding::Pcm16 => (16, hound::SampleFormat::Int),
        WavEncoding::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    match encoding {
        WavEncoding::Pcm16 => {
            for &v in &signal.samples {
                let q = (v * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(q)?;
            }
        }
        WavEncoding::Float32 => {
            for &v in &signal.samples {
                writer.write_sample(v as f32)?;
            }
        }
    }
    writer.finalize()?;
    Ok(())
}
