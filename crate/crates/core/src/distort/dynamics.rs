//! Amplitude-domain distortions: quantization, saturation, level dynamics.

use rand::Rng as _;

use super::filters::{Biquad, BiquadKind};
use crate::error::{Error, Result};
use crate::seed;

fn peak(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn db_to_amp(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Mu-law companding followed by uniform quantization of the companded value
/// to `2^(bits-1) - 1` steps per polarity. Input is clamped to `[-1, 1]`.
pub fn mu_law(x: &[f64], mu: f64, bits: usize) -> Result<Vec<f64>> {
    if !(mu > 0.0) || !(2..=32).contains(&bits) {
        return Err(Error::domain(format!(
            "mu-law needs mu > 0 and 2..=32 bits, got {mu}, {bits}"
        )));
    }
    let steps = ((1u64 << (bits - 1)) - 1) as f64;
    let denom = mu.ln_1p();
    Ok(x.iter()
        .map(|&v| {
            let v = v.clamp(-1.0, 1.0);
            let c = v.signum() * (mu * v.abs()).ln_1p() / denom;
            let q = (c * steps).round() / steps;
            q.signum() * ((1.0 + mu).powf(q.abs()) - 1.0) / mu
        })
        .collect())
}

/// `(tanh(g x + h) - tanh h) / (tanh(g + h) - tanh h)`: unit output at unit
/// input, with `h` adding even harmonics.
pub fn overdrive(x: &[f64], gain_db: f64, harmonicity: f64) -> Result<Vec<f64>> {
    let g = db_to_amp(gain_db);
    let base = harmonicity.tanh();
    let norm = (g + harmonicity).tanh() - base;
    if !(norm > 0.0) {
        return Err(Error::domain("overdrive normalization vanished"));
    }
    Ok(x.iter()
        .map(|&v| ((g * v + harmonicity).tanh() - base) / norm)
        .collect())
}

/// Hard clipping at `threshold` times the signal peak.
pub fn clip(x: &[f64], threshold: f64) -> Result<Vec<f64>> {
    if !(threshold > 0.0) {
        return Err(Error::domain(format!(
            "clip threshold must be > 0, got {threshold}"
        )));
    }
    let t = threshold * peak(x);
    Ok(x.iter().map(|&v| v.clamp(-t, t)).collect())
}

pub struct Envelope {
    pub attack_ms: f64,
    pub release_ms: f64,
}

impl Envelope {
    fn coefficients(&self, sr: f64) -> Result<(f64, f64)> {
        if !(self.attack_ms > 0.0 && self.release_ms > 0.0) {
            return Err(Error::domain("attack and release times must be > 0"));
        }
        let c = |ms: f64| (-1.0 / (ms * 1e-3 * sr)).exp();
        Ok((c(self.attack_ms), c(self.release_ms)))
    }

    /// Peak follower on `|x|`.
    fn follow(&self, x: &[f64], sr: f64) -> Result<Vec<f64>> {
        let (att, rel) = self.coefficients(sr)?;
        let mut env = 0.0;
        Ok(x.iter()
            .map(|v| {
                let a = v.abs();
                let c = if a > env { att } else { rel };
                env = c * env + (1.0 - c) * a;
                env
            })
            .collect())
    }
}

/// Feed-forward compressor: above `threshold_db` the envelope level is
/// reduced by the factor `1 - 1 / ratio` (in dB). No make-up gain.
pub fn compressor(
    x: &[f64],
    sr: f64,
    env: &Envelope,
    threshold_db: f64,
    ratio: f64,
) -> Result<Vec<f64>> {
    if !(ratio >= 1.0) {
        return Err(Error::domain(format!(
            "compressor ratio must be >= 1, got {ratio}"
        )));
    }
    let e = env.follow(x, sr)?;
    Ok(x.iter()
        .zip(e)
        .map(|(&v, e)| {
            let level = 20.0 * e.max(1e-12).log10();
            let gain = ((threshold_db - level) * (1.0 - 1.0 / ratio)).min(0.0);
            v * db_to_amp(gain)
        })
        .collect())
}

/// Noise gate: attenuates by `range_db` while the envelope sits below the
/// threshold. The gain opens with the attack time and closes with the
/// release time.
pub fn gate(
    x: &[f64],
    sr: f64,
    env: &Envelope,
    threshold_db: f64,
    range_db: f64,
) -> Result<Vec<f64>> {
    if !(range_db >= 0.0) {
        return Err(Error::domain("gate range must be >= 0 dB"));
    }
    let (att, rel) = env.coefficients(sr)?;
    let e = env.follow(x, sr)?;
    let closed = db_to_amp(-range_db);
    let mut g = 1.0;
    Ok(x.iter()
        .zip(e)
        .map(|(&v, e)| {
            let target = if 20.0 * e.max(1e-12).log10() < threshold_db {
                closed
            } else {
                1.0
            };
            let c = if target > g { att } else { rel };
            g = target + (g - target) * c;
            v * g
        })
        .collect())
}

/// Static power-law map `peak * sign(x) (|x| / peak)^exponent`; exponents
/// below one compress, above one expand.
pub fn power_law(x: &[f64], exponent: f64) -> Result<Vec<f64>> {
    if !(exponent > 0.0 && exponent.is_finite()) {
        return Err(Error::domain(format!(
            "power-law exponent must be > 0, got {exponent}"
        )));
    }
    let p = peak(x);
    if p == 0.0 {
        return Ok(x.to_vec());
    }
    Ok(x.iter()
        .map(|&v| v.signum() * p * (v.abs() / p).powf(exponent))
        .collect())
}

/// Gain `1 - depth (1 - cos(2 pi f t)) / 2`.
pub fn tremolo(x: &[f64], sr: f64, rate_hz: f64, depth: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&depth) || !(rate_hz >= 0.0) {
        return Err(Error::domain("tremolo needs depth in [0, 1] and rate >= 0"));
    }
    let w = 2.0 * std::f64::consts::PI * rate_hz / sr;
    Ok(x.iter()
        .enumerate()
        .map(|(i, &v)| v * (1.0 - depth * (1.0 - (w * i as f64).cos()) / 2.0))
        .collect())
}

/// Piecewise-constant gain per slot of `slot` samples, with a linear ramp of
/// `ramp` samples into each slot whose gain differs from the previous one.
pub(super) fn piecewise_gain(x: &[f64], slot: usize, gains_db: &[f64], ramp: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut prev = db_to_amp(gains_db.first().copied().unwrap_or(0.0));
    for (s, chunk) in x.chunks(slot).enumerate() {
        let g = db_to_amp(gains_db[s]);
        for (i, &v) in chunk.iter().enumerate() {
            let gi = if i < ramp && g != prev {
                prev + (g - prev) * (i + 1) as f64 / (ramp + 1) as f64
            } else {
                g
            };
            out.push(v * gi);
        }
        prev = g;
    }
    out
}

pub(super) fn slot_len(sr: f64, ms: f64) -> Result<usize> {
    let n = (ms * 1e-3 * sr).round();
    if !(n >= 1.0) {
        return Err(Error::domain(format!("{ms} ms is shorter than one sample")));
    }
    Ok(n as usize)
}

/// Each segment is, with probability `probability`, scaled by a gain drawn
/// uniformly in `[-max_gain_db, max_gain_db]`. Gain changes ramp over 5 ms.
pub fn destroy_levels(
    x: &[f64],
    sr: f64,
    segment_ms: f64,
    probability: f64,
    max_gain_db: f64,
    rng: &mut seed::Rng,
) -> Result<Vec<f64>> {
    let slot = slot_len(sr, segment_ms)?;
    let gains: Vec<f64> = (0..x.len().div_ceil(slot))
        .map(|_| {
            let hit = rng.random::<f64>() < probability;
            let g = rng.random_range(-1.0..=1.0) * max_gain_db;
            if hit {
                g
            } else {
                0.0
            }
        })
        .collect();
    let ramp = slot_len(sr, 5.0)?.min(slot / 2);
    Ok(piecewise_gain(x, slot, &gains, ramp))
}

/// Cascade of `bands` peaking filters with log-uniform centers in
/// 100 Hz..min(7 kHz, 0.45 fs), gains uniform in `+-max_gain_db`, Q in 0.5..5.
pub fn random_eq(
    x: &[f64],
    sr: f64,
    bands: usize,
    max_gain_db: f64,
    rng: &mut seed::Rng,
) -> Result<Vec<f64>> {
    let top = 7000f64.min(0.45 * sr);
    let mut y = x.to_vec();
    for _ in 0..bands {
        let f = rng.random_range(100f64.ln()..top.ln()).exp();
        let g = rng.random_range(-1.0..=1.0) * max_gain_db;
        let q = rng.random_range(0.5..5.0);
        y = Biquad::design(BiquadKind::Peaking { gain_db: g }, f, q, sr)?.apply(&y);
    }
    Ok(y)
}
