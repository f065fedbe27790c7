//! Additive noises: recorded, impulsive, colored, tonal, gated.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::dynamics::{piecewise_gain, slot_len};
use crate::error::{Error, Result};
use crate::seed;
use crate::signal::Signal;

/// Reference power per sample used when the clean signal is silent (-60 dBFS).
const SILENT_REFERENCE: f64 = 1e-6;

/// `x + a n` with `a` chosen so that `10 log10(|x|^2 / |a n|^2) = snr_db`.
pub fn add_at_snr(x: &[f64], n: &[f64], snr_db: f64) -> Result<Vec<f64>> {
    if x.len() != n.len() {
        return Err(Error::config("noise and signal lengths differ"));
    }
    let px = match x.iter().map(|v| v * v).sum::<f64>() {
        0.0 => SILENT_REFERENCE * x.len() as f64,
        p => p,
    };
    let pn: f64 = n.iter().map(|v| v * v).sum();
    if pn == 0.0 {
        return Ok(x.to_vec());
    }
    let a = (px / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    Ok(x.iter().zip(n).map(|(s, v)| s + a * v).collect())
}

/// A random excerpt of a random pool entry, looped to `len` samples.
pub fn from_pool(pool: &[Signal], len: usize, rng: &mut seed::Rng) -> Result<Vec<f64>> {
    if pool.is_empty() {
        return Err(Error::config("additive noise needs a noise pool"));
    }
    let src = &pool[rng.random_range(0..pool.len())].samples;
    let start = rng.random_range(0..src.len());
    Ok(src.iter().cycle().skip(start).take(len).copied().collect())
}

/// Gaussian noise whose amplitude spectrum changes by `slope_db` per octave
/// (0 white, -3 pink, -6 brown). The DC bin is removed.
pub fn colored(len: usize, sr: f64, slope_db: f64, rng: &mut seed::Rng) -> Vec<f64> {
    if len == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex64> = (0..len)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(len).process(&mut buf);
    let exponent = slope_db / (20.0 * 2f64.log10());
    for (k, b) in buf.iter_mut().enumerate() {
        let f = k.min(len - k) as f64 * sr / len as f64;
        *b *= if f > 0.0 {
            (f / 1000.0).powf(exponent)
        } else {
            0.0
        };
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf.iter().map(|c| c.re / len as f64).collect()
}

/// Band-limited periodic waveform with a random phase: 0 sine, 1 square,
/// 2 sawtooth, 3 triangle. At most `max_partials` partials below Nyquist.
pub fn tone(
    len: usize,
    sr: f64,
    freq: f64,
    waveform: usize,
    max_partials: usize,
    rng: &mut seed::Rng,
) -> Result<Vec<f64>> {
    if !(freq > 0.0 && freq < sr / 2.0) {
        return Err(Error::domain(format!(
            "tone frequency {freq} Hz out of range"
        )));
    }
    if waveform > 3 {
        return Err(Error::config(format!("unknown waveform code {waveform}")));
    }
    let phase = rng.random_range(0.0..2.0 * PI);
    let mut partials = Vec::new();
    let mut k = 1usize;
    while (k as f64) * freq < sr / 2.0 && partials.len() < max_partials.max(1) {
        let amp = match waveform {
            0 if k > 1 => break,
            0 => 1.0,
            1 if k % 2 == 1 => 1.0 / k as f64,
            2 => 1.0 / k as f64,
            3 if k % 2 == 1 => {
                let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
                sign / (k * k) as f64
            }
            _ => 0.0,
        };
        if amp != 0.0 {
            partials.push((k as f64, amp));
        }
        k += 1;
    }
    let w = 2.0 * PI * freq / sr;
    Ok((0..len)
        .map(|i| {
            partials
                .iter()
                .map(|(k, a)| a * (k * (w * i as f64 + phase)).sin())
                .sum()
        })
        .collect())
}

/// Mains hum at 50 Hz (`mains == 0`) or 60 Hz.
pub fn mains(
    len: usize,
    sr: f64,
    mains: usize,
    harmonics: usize,
    waveform: usize,
    rng: &mut seed::Rng,
) -> Result<Vec<f64>> {
    let base = match mains {
        0 => 50.0,
        1 => 60.0,
        m => return Err(Error::config(format!("mains code must be 0 or 1, got {m}"))),
    };
    tone(len, sr, base, waveform, harmonics, rng)
}

/// Switches `n` on and off in slots of `duration_ms`, each on with
/// `probability`, with 5 ms linear fades.
pub fn gated(
    n: &[f64],
    sr: f64,
    duration_ms: f64,
    probability: f64,
    rng: &mut seed::Rng,
) -> Result<Vec<f64>> {
    let slot = slot_len(sr, duration_ms)?;
    let gains: Vec<f64> = (0..n.len().div_ceil(slot))
        .map(|_| {
            if rng.random::<f64>() < probability {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let ramp = slot_len(sr, 5.0)?.min(slot / 2);
    Ok(piecewise_gain(n, slot, &gains, ramp))
}

/// Exponentially decaying bursts of `burst_ms`, arriving as a Poisson
/// process of `rate_hz` (at least one burst). Burst material comes from the
/// pool when one is given, else Gaussian noise.
pub fn impulsive(
    len: usize,
    sr: f64,
    rate_hz: f64,
    burst_ms: f64,
    pool: &[Signal],
    rng: &mut seed::Rng,
) -> Result<Vec<f64>> {
    if !(rate_hz > 0.0) {
        return Err(Error::domain("burst rate must be > 0"));
    }
    let burst = slot_len(sr, burst_ms)?;
    let mut out = vec![0.0; len];
    if len == 0 {
        return Ok(out);
    }
    let mut starts = Vec::new();
    let mut t = 0.0;
    loop {
        t += -(1.0 - rng.random::<f64>()).ln() / rate_hz;
        let s = (t * sr) as usize;
        if s >= len {
            break;
        }
        starts.push(s);
    }
    if starts.is_empty() {
        starts.push(rng.random_range(0..len));
    }
    for s in starts {
        let material = if pool.is_empty() {
            (0..burst).map(|_| rng.sample(StandardNormal)).collect()
        } else {
            from_pool(pool, burst, rng)?
        };
        for (i, m) in material.iter().enumerate() {
            if let Some(o) = out.get_mut(s + i) {
                *o += m * (-5.0 * i as f64 / burst as f64).exp();
            }
        }
    }
    Ok(out)
}
