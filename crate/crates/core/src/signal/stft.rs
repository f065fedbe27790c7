//! Centered short-time Fourier transform with a periodic Hann window.
//!
//! The signal is padded by `frame / 2` on the left (and `frame - frame / 2`
//! on the right), giving `1 + len / hop` frames. The inverse uses weighted
//! overlap-add divided by the summed squared window, which reconstructs the
//! input exactly whenever that sum is nonzero over the signal.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    #[default]
    Zero,
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub frame: usize,
    pub hop: usize,
    #[serde(default)]
    pub pad: PadMode,
}

impl StftConfig {
    pub fn new(frame: usize, hop: usize) -> Self {
        Self {
            frame,
            hop,
            pad: PadMode::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame < 2 || self.hop == 0 || self.hop > self.frame {
            return Err(Error::config(format!(
                "STFT needs frame >= 2 and 1 <= hop <= frame, got frame={} hop={}",
                self.frame, self.hop
            )));
        }
        Ok(())
    }

    pub fn window(&self) -> Vec<f64> {
        hann(self.frame)
    }

    pub fn n_bins(&self) -> usize {
        self.frame / 2 + 1
    }

    pub fn n_frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    /// `sum_m w^2(n - m hop)` over one hop period.
    fn overlap_profile(&self) -> Vec<f64> {
        let w = self.window();
        (0..self.hop)
            .map(|n| w.iter().skip(n).step_by(self.hop).map(|v| v * v).sum())
            .collect()
    }

    /// True when the squared window overlap-adds to a constant.
    pub fn is_cola(&self) -> bool {
        let p = self.overlap_profile();
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        mean > 0.0 && p.iter().all(|v| (v - mean).abs() <= 1e-10 * mean)
    }

    /// Mean squared-window overlap; the constant of [`is_cola`](Self::is_cola)
    /// configurations.
    pub fn overlap_gain(&self) -> f64 {
        let p = self.overlap_profile();
        p.iter().sum::<f64>() / p.len() as f64
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// One-sided spectra, `frames x (frame / 2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub config: StftConfig,
    /// Length of the analysed signal.
    pub len: usize,
    pub frames: Vec<Vec<Complex64>>,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn magnitudes(&self) -> Vec<Vec<f64>> {
        self.frames
            .iter()
            .map(|f| f.iter().map(|c| c.norm()).collect())
            .collect()
    }

    pub fn powers(&self) -> Vec<Vec<f64>> {
        self.frames
            .iter()
            .map(|f| f.iter().map(|c| c.norm_sqr()).collect())
            .collect()
    }

    /// `sum |X|^2 / frame` over all frames and both spectrum halves, i.e. the
    /// energy of the windowed frames.
    pub fn frame_energy(&self) -> f64 {
        let n = self.config.frame;
        let mut total = 0.0;
        for f in &self.frames {
            for (k, c) in f.iter().enumerate() {
                let mirrored = k != 0 && !(n % 2 == 0 && k == n / 2);
                total += c.norm_sqr() * if mirrored { 2.0 } else { 1.0 };
            }
        }
        total / n as f64
    }
}

fn padded(x: &[f64], config: &StftConfig) -> Result<Vec<f64>> {
    let left = config.frame / 2;
    let right = config.frame - left;
    let mut out = Vec::with_capacity(x.len() + config.frame);
    match config.pad {
        PadMode::Zero => {
            out.resize(left, 0.0);
            out.extend_from_slice(x);
            out.resize(out.len() + right, 0.0);
        }
        PadMode::Reflect => {
            if x.len() <= right {
                return Err(Error::config(format!(
                    "reflect padding needs more than {right} samples, got {}",
                    x.len()
                )));
            }
            out.extend((1..=left).rev().map(|i| x[i]));
            out.extend_from_slice(x);
            out.extend((1..=right).map(|i| x[x.len() - 1 - i]));
        }
    }
    Ok(out)
}

pub fn stft(x: &[f64], config: StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    let n = config.frame;
    let w = config.window();
    let xp = padded(x, &config)?;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let frames = (0..config.n_frames(x.len()))
        .map(|m| {
            let start = m * config.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(xp[start + i] * w[i], 0.0);
            }
            fft.process(&mut buf);
            buf[..config.n_bins()].to_vec()
        })
        .collect();
    Ok(Spectrogram {
        config,
        len: x.len(),
        frames,
    })
}

/// Inverse of [`stft`]. Configurations whose squared window does not
/// overlap-add to a constant are still inverted, with a warning; windows that
/// leave gaps are rejected.
pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    let config = spec.config;
    config.validate()?;
    if !config.is_cola() {
        log::warn!(
            "STFT frame={} hop={} is not COLA; relying on window-sum normalization",
            config.frame,
            config.hop
        );
    }
    let n = config.frame;
    let w = config.window();
    let total = (spec.n_frames().max(1) - 1) * config.hop + n;
    let mut out = vec![0.0; total];
    let mut wsum = vec![0.0; total];
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (m, frame) in spec.frames.iter().enumerate() {
        if frame.len() != config.n_bins() {
            return Err(Error::config(
                "spectrogram frame has the wrong number of bins",
            ));
        }
        buf[..frame.len()].copy_from_slice(frame);
        for k in frame.len()..n {
            buf[k] = frame[n - k].conj();
        }
        ifft.process(&mut buf);
        let start = m * config.hop;
        for i in 0..n {
            out[start + i] += buf[i].re / n as f64 * w[i];
            wsum[start + i] += w[i] * w[i];
        }
    }
    let left = n / 2;
    let peak = wsum.iter().cloned().fold(0.0, f64::max);
    let mut x = Vec::with_capacity(spec.len);
    for i in left..left + spec.len {
        let s = wsum.get(i).copied().unwrap_or(0.0);
        if s <= 1e-10 * peak {
            return Err(Error::config(format!(
                "STFT frame={} hop={} leaves sample {} uncovered",
                n,
                config.hop,
                i - left
            )));
        }
        x.push(out[i] / s);
    }
    Ok(x)
}
