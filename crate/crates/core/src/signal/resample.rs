//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc.
//!
//! For a ratio `L / M` (reduced), output sample `m` sits at position `m M`
//! on the `L`-times upsampled grid and is computed as
//! `sum_n x[n] h(m M - n L)`, where `h` is a zero-phase low-pass with cutoff
//! at the lower of the two Nyquist frequencies. Taps are normalized by their
//! sum for every output sample, so DC passes with unit gain, including at
//! the edges.

use crate::error::{Error, Result};

use super::Signal;

/// Zero crossings of the sinc kept on each side.
const ZERO_CROSSINGS: usize = 32;
/// Cutoff as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.94;
const KAISER_BETA: f64 = 8.6;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

pub fn resample(signal: &Signal, target_rate: u32) -> Result<Signal> {
    signal.validate()?;
    if target_rate == 0 {
        return Err(Error::config("target sample rate must be > 0"));
    }
    if target_rate == signal.sample_rate {
        return Ok(signal.clone());
    }
    let g = gcd(signal.sample_rate as u64, target_rate as u64);
    let up = (target_rate as u64 / g) as usize;
    let down = (signal.sample_rate as u64 / g) as usize;
    let x = &signal.samples;
    let out_len = (x.len() * up).div_ceil(down);

    // Filter on the upsampled grid; sinc zeros every `period` samples.
    let period = up.max(down) as f64 / ROLLOFF;
    let half = (ZERO_CROSSINGS as f64 * period).ceil() as usize;
    let denom = bessel_i0(KAISER_BETA);
    let table: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let j = i as f64 - half as f64;
            let r = j / half as f64;
            sinc(j / period) * bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect();

    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len {
        let p = (m * down) as i64;
        let lo = (p - half as i64).max(0);
        let hi = p + half as i64;
        let n_lo = (lo as usize).div_ceil(up);
        let n_hi = ((hi.max(0) as usize) / up).min(x.len().saturating_sub(1));
        let (mut acc, mut norm) = (0.0, 0.0);
        for (n, &xn) in x.iter().enumerate().take(n_hi + 1).skip(n_lo) {
            let h = table[(p - (n * up) as i64 + half as i64) as usize];
            acc += xn * h;
            norm += h;
        }
        out.push(if norm != 0.0 { acc / norm } else { 0.0 });
    }
    Signal::new(out, target_rate)
}
