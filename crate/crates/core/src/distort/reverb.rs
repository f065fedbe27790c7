//! Reverberation, delays and modulation effects.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::seed;

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn check_mix(mix: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&mix) {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{what} must lie in [0, 1], got {mix}"
        )))
    }
}

fn samples(ms: f64, sr: f64) -> usize {
    (ms * 1e-3 * sr).round().max(0.0) as usize
}

/// First `x.len()` samples of the linear convolution `x * h`.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let pad = |v: &[f64]| {
        let mut b: Vec<Complex64> = v.iter().map(|&a| Complex64::new(a, 0.0)).collect();
        b.resize(n, Complex64::new(0.0, 0.0));
        b
    };
    let (mut a, mut b) = (pad(x), pad(h));
    let fwd = planner.plan_fft_forward(n);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    planner.plan_fft_inverse(n).process(&mut a);
    a[..x.len()].iter().map(|c| c.re / n as f64).collect()
}

/// Convolves with `h` and rescales to the input RMS times `gain_db`.
pub fn convolve_rms(x: &[f64], h: &[f64], gain_db: f64) -> Vec<f64> {
    let y = fft_convolve(x, h);
    let r = rms(&y);
    if r == 0.0 {
        return y;
    }
    let a = rms(x) / r * 10f64.powf(gain_db / 20.0);
    y.into_iter().map(|v| v * a).collect()
}

/// Direct impulse after `predelay_ms`, followed by Gaussian noise whose
/// amplitude falls 60 dB over `rt60_s`. The direct-to-reverberant energy
/// ratio is `drr_db`.
pub fn synthetic_rir(
    sr: f64,
    rt60_s: f64,
    drr_db: f64,
    predelay_ms: f64,
    rng: &mut seed::Rng,
) -> Result<Vec<f64>> {
    if !(rt60_s > 0.0) || !(predelay_ms >= 0.0) {
        return Err(Error::domain("RIR needs rt60 > 0 and predelay >= 0"));
    }
    let pre = samples(predelay_ms, sr);
    let tail = (rt60_s * sr).ceil() as usize;
    let mut h = vec![0.0; pre + 1 + tail];
    let mut energy = 0.0;
    for i in 0..tail {
        let v: f64 = rng.sample::<f64, _>(StandardNormal)
            * 10f64.powf(-3.0 * (i + 1) as f64 / (rt60_s * sr));
        h[pre + 1 + i] = v;
        energy += v * v;
    }
    h[pre] = (10f64.powf(drr_db / 10.0) * energy).sqrt();
    Ok(h)
}

/// Rescales the strongest tap of a recorded response so that its energy over
/// the remaining taps equals `drr_db`.
pub fn augment_rir(h: &[f64], drr_db: f64) -> Result<Vec<f64>> {
    let (p, _) = h
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .ok_or_else(|| Error::config("empty impulse response"))?;
    let rest: f64 = h
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != p)
        .map(|(_, v)| v * v)
        .sum();
    let mut out = h.to_vec();
    if rest > 0.0 {
        let sign = if h[p] < 0.0 { -1.0 } else { 1.0 };
        out[p] = sign * (10f64.powf(drr_db / 10.0) * rest).sqrt();
    }
    Ok(out)
}

/// Dry/wet mix with the wet path scaled to the dry RMS.
fn mix_wet(x: &[f64], wet_path: &[f64], wet: f64) -> Vec<f64> {
    let (rx, rw) = (rms(x), rms(wet_path));
    let a = if rw > 0.0 { rx / rw } else { 0.0 };
    x.iter()
        .zip(wet_path)
        .map(|(d, w)| (1.0 - wet) * d + wet * a * w)
        .collect()
}

struct DelayLine {
    buf: Vec<f64>,
    pos: usize,
}

impl DelayLine {
    fn new(len: usize) -> Self {
        Self {
            buf: vec![0.0; len.max(1)],
            pos: 0,
        }
    }

    /// Pushes `v`, returning the sample written `len` steps ago.
    fn step(&mut self, v: f64) -> f64 {
        let out = self.buf[self.pos];
        self.buf[self.pos] = v;
        self.pos = (self.pos + 1) % self.buf.len();
        out
    }

    fn peek(&self) -> f64 {
        self.buf[self.pos]
    }
}

/// Four parallel feedback combs into two series all-passes.
pub fn schroeder(x: &[f64], sr: f64, rt60_s: f64, wet: f64) -> Result<Vec<f64>> {
    check_mix(wet, "reverb wet level")?;
    if !(rt60_s > 0.0) {
        return Err(Error::domain("rt60 must be > 0"));
    }
    let combs: Vec<(DelayLine, f64)> = [29.7, 37.1, 41.1, 43.7]
        .iter()
        .map(|ms| {
            let d = samples(*ms, sr).max(1);
            (
                DelayLine::new(d),
                10f64.powf(-3.0 * d as f64 / (rt60_s * sr)),
            )
        })
        .collect();
    let mut combs = combs;
    let mut aps: Vec<DelayLine> = [5.0, 1.7]
        .iter()
        .map(|ms| DelayLine::new(samples(*ms, sr).max(1)))
        .collect();
    let g_ap = 0.7;
    let rev: Vec<f64> = x
        .iter()
        .map(|&v| {
            let mut s = 0.0;
            for (line, g) in combs.iter_mut() {
                let out = line.peek();
                line.step(v + *g * out);
                s += out;
            }
            let mut u = s / 4.0;
            for ap in aps.iter_mut() {
                let delayed = ap.peek();
                let inner = u + g_ap * delayed;
                ap.step(inner);
                u = delayed - g_ap * inner;
            }
            u
        })
        .collect();
    Ok(mix_wet(x, &rev, wet))
}

/// Four-line feedback delay network with an orthogonal Hadamard mixing
/// matrix; line lengths scale with `size`.
pub fn fdn(x: &[f64], sr: f64, rt60_s: f64, size: f64, wet: f64) -> Result<Vec<f64>> {
    check_mix(wet, "reverb wet level")?;
    if !(rt60_s > 0.0 && size > 0.0) {
        return Err(Error::domain("FDN needs rt60 > 0 and size > 0"));
    }
    let mut lines: Vec<(DelayLine, f64)> = [1021.0, 1327.0, 1657.0, 1999.0]
        .iter()
        .map(|base| {
            let d = ((base * size * sr / 16_000.0).round() as usize).max(1);
            (
                DelayLine::new(d),
                10f64.powf(-3.0 * d as f64 / (rt60_s * sr)),
            )
        })
        .collect();
    const H: [[f64; 4]; 4] = [
        [0.5, 0.5, 0.5, 0.5],
        [0.5, -0.5, 0.5, -0.5],
        [0.5, 0.5, -0.5, -0.5],
        [0.5, -0.5, -0.5, 0.5],
    ];
    let rev: Vec<f64> = x
        .iter()
        .map(|&v| {
            let d: Vec<f64> = lines.iter().map(|(l, g)| g * l.peek()).collect();
            for (i, (line, _)) in lines.iter_mut().enumerate() {
                let fb: f64 = (0..4).map(|j| H[i][j] * d[j]).sum();
                line.step(v + fb);
            }
            d.iter().sum()
        })
        .collect();
    Ok(mix_wet(x, &rev, wet))
}

/// Linear-interpolated read of `x` at fractional index `pos` (zero outside).
fn read_frac(x: &[f64], pos: f64) -> f64 {
    if pos < 0.0 {
        return 0.0;
    }
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    let a = x.get(i).copied().unwrap_or(0.0);
    let b = x.get(i + 1).copied().unwrap_or(0.0);
    a + f * (b - a)
}

/// Dry signal mixed with a copy delayed by a sinusoidally modulated time.
pub fn chorus(
    x: &[f64],
    sr: f64,
    rate_hz: f64,
    depth_ms: f64,
    delay_ms: f64,
    mix: f64,
) -> Result<Vec<f64>> {
    check_mix(mix, "chorus mix")?;
    if !(depth_ms >= 0.0 && delay_ms >= depth_ms) {
        return Err(Error::domain("chorus needs 0 <= depth <= delay"));
    }
    let w = 2.0 * PI * rate_hz / sr;
    Ok((0..x.len())
        .map(|n| {
            let d = (delay_ms + depth_ms * (w * n as f64).sin()) * 1e-3 * sr;
            (1.0 - mix) * x[n] + mix * read_frac(x, n as f64 - d)
        })
        .collect())
}

pub struct PhaserParams {
    pub rate_hz: f64,
    pub min_hz: f64,
    pub max_hz: f64,
    pub stages: usize,
    pub feedback: f64,
    pub mix: f64,
}

/// First-order all-pass cascade whose break frequency sweeps log-sinusoidally
/// between `min_hz` and `max_hz`, with feedback from the last stage.
pub fn phaser(x: &[f64], sr: f64, p: &PhaserParams) -> Result<Vec<f64>> {
    check_mix(p.mix, "phaser mix")?;
    if !(p.feedback.abs() < 1.0) || p.stages == 0 {
        return Err(Error::domain(
            "phaser needs |feedback| < 1 and at least one stage",
        ));
    }
    if !(p.min_hz > 0.0 && p.min_hz <= p.max_hz && p.max_hz < sr / 2.0) {
        return Err(Error::domain("phaser sweep range out of bounds"));
    }
    let mut state = vec![(0.0, 0.0); p.stages];
    let mut last = 0.0;
    let w = 2.0 * PI * p.rate_hz / sr;
    let ratio = p.max_hz / p.min_hz;
    Ok(x.iter()
        .enumerate()
        .map(|(n, &v)| {
            let fc = p.min_hz * ratio.powf(0.5 * (1.0 + (w * n as f64).sin()));
            let t = (PI * fc / sr).tan();
            let a = (t - 1.0) / (t + 1.0);
            let mut u = v + p.feedback * last;
            for (x1, y1) in state.iter_mut() {
                let y = a * u + *x1 - a * *y1;
                *x1 = u;
                *y1 = y;
                u = y;
            }
            last = u;
            (1.0 - p.mix) * v + p.mix * u
        })
        .collect())
}

/// `x[n] + gain x[n - d]`.
pub fn short_delay(x: &[f64], sr: f64, delay_ms: f64, gain: f64) -> Result<Vec<f64>> {
    let d = samples(delay_ms, sr);
    if d == 0 {
        return Err(Error::domain(format!(
            "delay of {delay_ms} ms rounds to zero samples"
        )));
    }
    Ok((0..x.len())
        .map(|n| x[n] + if n >= d { gain * x[n - d] } else { 0.0 })
        .collect())
}

/// Integer delay with zero fill; length is preserved.
pub fn delay(x: &[f64], d: usize) -> Vec<f64> {
    (0..x.len())
        .map(|n| if n >= d { x[n - d] } else { 0.0 })
        .collect()
}
