//! Transmission artifacts: rate reduction, packet loss, reordering, level
//! jumps and narrow-band telephone coloring.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::dynamics::{self, piecewise_gain, slot_len, Envelope};
use super::filters::{cascade, Biquad, BiquadKind};
use crate::error::{Error, Result};
use crate::seed;
use crate::signal::{resample, Signal};

/// Reduces the effective rate to `rate_hz`. Method 0 holds every sample for
/// `fs / rate` output samples (no anti-aliasing); method 1 band-limits by
/// resampling down and back up.
pub fn downsample(x: &[f64], sample_rate: u32, rate_hz: f64, method: usize) -> Result<Vec<f64>> {
    let sr = sample_rate as f64;
    if !(rate_hz > 0.0) {
        return Err(Error::domain("target rate must be > 0"));
    }
    if rate_hz >= sr {
        return Ok(x.to_vec());
    }
    match method {
        0 => {
            let step = sr / rate_hz;
            Ok((0..x.len())
                .map(|n| x[((n as f64 / step).floor() * step).floor() as usize])
                .collect())
        }
        1 => {
            let low = resample(
                &Signal::new(x.to_vec(), sample_rate)?,
                rate_hz.round() as u32,
            )?;
            let mut back = resample(&low, sample_rate)?.samples;
            back.resize(x.len(), 0.0);
            Ok(back)
        }
        m => Err(Error::config(format!("unknown down-sampling method {m}"))),
    }
}

/// One Bernoulli(`probability`) draw per slot.
fn hit_slots(len: usize, slot: usize, probability: f64, rng: &mut seed::Rng) -> Vec<bool> {
    (0..len.div_ceil(slot))
        .map(|_| rng.random::<f64>() < probability)
        .collect()
}

/// Zeroes slots of `length_ms` with the given probability. Returns the
/// output and the per-sample gap mask.
pub fn silent_gap(
    x: &[f64],
    sr: f64,
    length_ms: f64,
    probability: f64,
    rng: &mut seed::Rng,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let slot = slot_len(sr, length_ms)?;
    let hits = hit_slots(x.len(), slot, probability, rng);
    let mask: Vec<bool> = (0..x.len()).map(|n| hits[n / slot]).collect();
    let y = x
        .iter()
        .zip(&mask)
        .map(|(v, m)| if *m { 0.0 } else { *v })
        .collect();
    Ok((y, mask))
}

/// Swaps selected frames with their successor.
pub fn frame_shuffle(
    x: &[f64],
    sr: f64,
    length_ms: f64,
    probability: f64,
    rng: &mut seed::Rng,
) -> Result<Vec<f64>> {
    let slot = slot_len(sr, length_ms)?;
    let full = x.len() / slot;
    let hits = hit_slots(x.len(), slot, probability, rng);
    let mut y = x.to_vec();
    let mut i = 0;
    while i + 1 < full {
        if hits[i] {
            let (a, b) = y[i * slot..(i + 2) * slot].split_at_mut(slot);
            a.swap_with_slice(b);
            i += 2;
        } else {
            i += 1;
        }
    }
    Ok(y)
}

pub fn insert_attenuation(
    x: &[f64],
    sr: f64,
    length_ms: f64,
    probability: f64,
    gain_db: f64,
    rng: &mut seed::Rng,
) -> Result<Vec<f64>> {
    let slot = slot_len(sr, length_ms)?;
    let gains: Vec<f64> = hit_slots(x.len(), slot, probability, rng)
        .into_iter()
        .map(|h| if h { gain_db } else { 0.0 })
        .collect();
    Ok(piecewise_gain(x, slot, &gains, 0))
}

/// Adds white noise inside selected slots, at `snr_db` below the mean
/// per-sample power of the whole signal.
pub fn insert_noise(
    x: &[f64],
    sr: f64,
    length_ms: f64,
    probability: f64,
    snr_db: f64,
    rng: &mut seed::Rng,
) -> Result<Vec<f64>> {
    let slot = slot_len(sr, length_ms)?;
    let hits = hit_slots(x.len(), slot, probability, rng);
    let power = if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    };
    let std = (power.max(1e-6) / 10f64.powf(snr_db / 10.0)).sqrt();
    Ok(x.iter()
        .enumerate()
        .map(|(n, v)| {
            if hits[n / slot] {
                v + std * rng.sample::<f64, _>(StandardNormal)
            } else {
                *v
            }
        })
        .collect())
}

/// Selected slots get a gain uniform in `+-gain_db`.
pub fn perturb_amplitude(
    x: &[f64],
    sr: f64,
    length_ms: f64,
    probability: f64,
    gain_db: f64,
    rng: &mut seed::Rng,
) -> Result<Vec<f64>> {
    let slot = slot_len(sr, length_ms)?;
    let gains: Vec<f64> = hit_slots(x.len(), slot, probability, rng)
        .into_iter()
        .map(|h| {
            let g = rng.random_range(-1.0..=1.0) * gain_db;
            if h {
                g
            } else {
                0.0
            }
        })
        .collect();
    Ok(piecewise_gain(x, slot, &gains, 0))
}

/// Plays selected slots twice; the output is cut back to the input length.
pub fn sample_duplicate(
    x: &[f64],
    sr: f64,
    length_ms: f64,
    probability: f64,
    rng: &mut seed::Rng,
) -> Result<Vec<f64>> {
    let slot = slot_len(sr, length_ms)?;
    let hits = hit_slots(x.len(), slot, probability, rng);
    let mut y = Vec::with_capacity(x.len() * 2);
    for (chunk, h) in x.chunks(slot).zip(hits) {
        y.extend_from_slice(chunk);
        if h {
            y.extend_from_slice(chunk);
        }
        if y.len() >= x.len() {
            break;
        }
    }
    y.truncate(x.len());
    Ok(y)
}

/// Band-pass between `low_hz` and `high_hz` (Butterworth-Q biquads,
/// `stages` of each) followed by a fast compressor at -25 dB.
pub fn telephone(
    x: &[f64],
    sr: f64,
    low_hz: f64,
    high_hz: f64,
    ratio: f64,
    stages: usize,
) -> Result<Vec<f64>> {
    if low_hz >= high_hz {
        return Err(Error::domain("telephone band is empty"));
    }
    let q = std::f64::consts::FRAC_1_SQRT_2;
    let hp = Biquad::design(BiquadKind::HighPass, low_hz, q, sr)?;
    let lp = Biquad::design(BiquadKind::LowPass, high_hz, q, sr)?;
    let y = cascade(&cascade(x, &hp, stages), &lp, stages);
    dynamics::compressor(
        &y,
        sr,
        &Envelope {
            attack_ms: 5.0,
            release_ms: 60.0,
        },
        -25.0,
        ratio,
    )
}
