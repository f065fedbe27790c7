//! Frame features at 100 Hz: log-mel spectra, RMS loudness and a simple VAD.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::stft::{stft, PadMode, StftConfig};
use super::Signal;

pub const LOG_FLOOR: f64 = 1e-5;
pub const VAD_THRESHOLD_DB: f64 = -40.0;
/// Consecutive frames needed to flip the VAD state.
pub const VAD_HANGOVER: usize = 2;
/// RMS floor, in linear amplitude, before conversion to dB.
const RMS_FLOOR: f64 = 1e-5;

const DUMP_MAGIC: &[u8; 4] = b"SWFM";
const DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub frame: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    /// Upper band edge; Nyquist when absent.
    pub fmax: Option<f64>,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame: 512,
            hop: 160,
            n_mels: 80,
            fmin: 0.0,
            fmax: None,
            log_floor: LOG_FLOOR,
        }
    }
}

impl MelConfig {
    pub fn fmax(&self) -> f64 {
        self.fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    fn stft_config(&self) -> StftConfig {
        StftConfig {
            frame: self.frame,
            hop: self.hop,
            pad: PadMode::Reflect,
        }
    }

    fn check(&self, signal: &Signal) -> Result<()> {
        signal.require_rate(self.sample_rate, "feature extraction")?;
        if signal.len() < self.frame {
            return Err(Error::config(format!(
                "signal of {} samples is shorter than one {}-sample frame",
                signal.len(),
                self.frame
            )));
        }
        Ok(())
    }
}

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(f: f64) -> f64 {
    if f < MIN_LOG_HZ {
        f / F_SP
    } else {
        MIN_LOG_MEL + (f / MIN_LOG_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(m: f64) -> f64 {
    if m < MIN_LOG_MEL {
        m * F_SP
    } else {
        MIN_LOG_HZ * ((m - MIN_LOG_MEL) * log_step()).exp()
    }
}

/// Triangular, area-normalized mel filterbank, `n_mels x (frame / 2 + 1)`.
pub fn mel_filterbank(config: &MelConfig) -> Result<Vec<Vec<f64>>> {
    let fmax = config.fmax();
    if config.n_mels == 0
        || !(0.0 <= config.fmin && config.fmin < fmax && fmax <= config.sample_rate as f64 / 2.0)
    {
        return Err(Error::config(
            "mel filterbank needs n_mels >= 1 and 0 <= fmin < fmax <= Nyquist",
        ));
    }
    let n_bins = config.frame / 2 + 1;
    let (lo, hi) = (hz_to_mel(config.fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.n_mels + 1) as f64))
        .collect();
    let bin_hz = config.sample_rate as f64 / config.frame as f64;
    Ok((0..config.n_mels)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (r - l);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let w = ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0);
                    w * norm
                })
                .collect()
        })
        .collect())
}

/// `frames x n_mels` natural-log mel power.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMel {
    pub config: MelConfig,
    pub frames: Vec<Vec<f64>>,
}

impl LogMel {
    pub fn compute(signal: &Signal, config: MelConfig) -> Result<Self> {
        config.check(signal)?;
        let fb = mel_filterbank(&config)?;
        let spec = stft(&signal.samples, config.stft_config())?;
        let frames = spec
            .powers()
            .iter()
            .map(|p| {
                fb.iter()
                    .map(|row| {
                        let e: f64 = row.iter().zip(p).map(|(w, v)| w * v).sum();
                        e.max(config.log_floor).ln()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { config, frames })
    }
}

/// Per-frame RMS in dBFS (full-scale amplitude 1) over centered frames.
pub fn frame_rms_db(signal: &Signal, frame: usize, hop: usize) -> Result<Vec<f64>> {
    let config = StftConfig {
        frame,
        hop,
        pad: PadMode::Reflect,
    };
    config.validate()?;
    if signal.len() <= frame {
        return Err(Error::config("signal is shorter than one frame"));
    }
    let left = frame / 2;
    let x = &signal.samples;
    let reflect = |i: isize| -> f64 {
        let n = x.len() as isize;
        let j = if i < 0 {
            -i
        } else if i >= n {
            2 * (n - 1) - i
        } else {
            i
        };
        x[j as usize]
    };
    Ok((0..config.n_frames(x.len()))
        .map(|m| {
            let start = (m * hop) as isize - left as isize;
            let ms = (0..frame as isize)
                .map(|i| reflect(start + i).powi(2))
                .sum::<f64>()
                / frame as f64;
            20.0 * ms.sqrt().max(RMS_FLOOR).log10()
        })
        .collect())
}

/// `frames x 2`: RMS loudness in dBFS and a 0/1 voice-activity flag.
///
/// The VAD thresholds loudness at [`VAD_THRESHOLD_DB`] and only changes
/// state after [`VAD_HANGOVER`] consecutive frames on the other side,
/// starting inactive.
pub fn loudness_vad(signal: &Signal, config: &MelConfig) -> Result<Vec<[f64; 2]>> {
    config.check(signal)?;
    let db = frame_rms_db(signal, config.frame, config.hop)?;
    let vad = vad_from_levels(&db);
    Ok(db.into_iter().zip(vad).map(|(l, v)| [l, v]).collect())
}

/// Thresholded levels with hysteresis; see [`loudness_vad`].
pub fn vad_from_levels(levels_db: &[f64]) -> Vec<f64> {
    let mut active = false;
    let mut run = 0;
    levels_db
        .iter()
        .map(|&level| {
            if (level > VAD_THRESHOLD_DB) != active {
                run += 1;
                if run >= VAD_HANGOVER {
                    active = !active;
                    run = 0;
                }
            } else {
                run = 0;
            }
            if active {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Per-band mean and standard deviation over a corpus of log-mel frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MelNormalizer {
    pub fn fit(corpus: &[LogMel]) -> Result<Self> {
        let bands = corpus
            .first()
            .and_then(|m| m.frames.first())
            .map(Vec::len)
            .ok_or_else(|| Error::config("cannot fit a normalizer on an empty corpus"))?;
        let mut sum = vec![0.0; bands];
        let mut sq = vec![0.0; bands];
        let mut count = 0usize;
        for frame in corpus.iter().flat_map(|m| &m.frames) {
            if frame.len() != bands {
                return Err(Error::config("log-mel frames disagree on band count"));
            }
            for (b, v) in frame.iter().enumerate() {
                sum[b] += v;
                sq[b] += v * v;
            }
            count += 1;
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(LOG_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
        frames
            .iter()
            .map(|f| {
                f.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect()
            })
            .collect()
    }

    pub fn invert(&self, frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
        frames
            .iter()
            .map(|f| {
                f.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((v, m), s)| v * s + m)
                    .collect()
            })
            .collect()
    }
}

/// Feature matrix as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDump {
    pub frame_rate: f32,
    pub frames: Vec<Vec<f32>>,
}

/// Writes `frames` as little-endian f32 after a header:
/// `"SWFM" | version u32 | n_frames u32 | n_dims u32 | frame_rate f32`.
pub fn write_features(path: impl AsRef<Path>, frames: &[Vec<f64>], frame_rate: f64) -> Result<()> {
    let dims = frames.first().map_or(0, Vec::len);
    if frames.iter().any(|f| f.len() != dims) {
        return Err(Error::config("feature frames must share one dimension"));
    }
    let mut buf = Vec::with_capacity(20 + 4 * frames.len() * dims);
    buf.extend_from_slice(DUMP_MAGIC);
    buf.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    buf.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(dims as u32).to_le_bytes());
    buf.extend_from_slice(&(frame_rate as f32).to_le_bytes());
    for v in frames.iter().flatten() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureDump> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
    if bytes.len() < 20 || &bytes[..4] != DUMP_MAGIC {
        return Err(bad("missing feature-dump header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(4) != DUMP_VERSION {
        return Err(bad("unsupported feature-dump version"));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let frame_rate = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if bytes.len() != 20 + 4 * rows * cols {
        return Err(bad("feature-dump size does not match its header"));
    }
    let values: Vec<f32> = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let frames = if cols == 0 {
        vec![Vec::new(); rows]
    } else {
        values.chunks_exact(cols).map(<[f32]>::to_vec).collect()
    };
    Ok(FeatureDump { frame_rate, frames })
}
