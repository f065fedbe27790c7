//! Time-frequency manipulations on a Hann STFT with 75% overlap.

use std::f64::consts::PI;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;

use crate::error::Result;
use crate::seed;
use crate::signal::{istft, stft, Spectrogram, StftConfig};

fn analyse(x: &[f64], frame: usize) -> Result<Spectrogram> {
    stft(x, StftConfig::new(frame, frame / 4))
}

pub(super) fn randomize_phase(spec: &mut Spectrogram, amount: f64, rng: &mut seed::Rng) {
    for f in &mut spec.frames {
        for c in f.iter_mut() {
            let d = amount * rng.random_range(-PI..PI);
            *c *= Complex64::from_polar(1.0, d);
        }
    }
}

/// Within each frame, permutes the phases of a random `amount` fraction of
/// the interior bins among themselves.
pub(super) fn shuffle_phase(spec: &mut Spectrogram, amount: f64, rng: &mut seed::Rng) {
    for f in &mut spec.frames {
        let interior: Vec<usize> = (1..f.len().saturating_sub(1)).collect();
        let k = (amount * interior.len() as f64).round() as usize;
        let mut chosen: Vec<usize> = interior.choose_multiple(rng, k).copied().collect();
        chosen.sort_unstable();
        let mut phases: Vec<f64> = chosen.iter().map(|&i| f[i].arg()).collect();
        phases.shuffle(rng);
        for (&i, p) in chosen.iter().zip(phases) {
            f[i] = Complex64::from_polar(f[i].norm(), p);
        }
    }
}

/// Zeroes random rectangles (2..16 bins by 2..8 frames) until about `amount`
/// of the time-frequency plane is covered. Returns the zeroed mask.
pub(super) fn punch_holes(
    spec: &mut Spectrogram,
    amount: f64,
    rng: &mut seed::Rng,
) -> Vec<Vec<bool>> {
    let (nf, nb) = (spec.frames.len(), spec.config.n_bins());
    let mut mask = vec![vec![false; nb]; nf];
    let target = (amount.clamp(0.0, 1.0) * (nf * nb) as f64) as usize;
    let mut covered = 0;
    let mut tries = 0;
    while covered < target && tries < 100_000 {
        tries += 1;
        let (h, w) = (
            rng.random_range(2..=16).min(nb),
            rng.random_range(2..=8).min(nf),
        );
        let (b0, t0) = (rng.random_range(0..=nb - h), rng.random_range(0..=nf - w));
        for row in mask.iter_mut().skip(t0).take(w) {
            for cell in row.iter_mut().skip(b0).take(h) {
                if !*cell {
                    *cell = true;
                    covered += 1;
                }
            }
        }
    }
    for (f, m) in spec.frames.iter_mut().zip(&mask) {
        for (c, &z) in f.iter_mut().zip(m) {
            if z {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }
    mask
}

/// Adds circular complex Gaussian noise with total power `snr_db` below the
/// spectrogram power.
pub(super) fn add_spectral_noise(spec: &mut Spectrogram, snr_db: f64, rng: &mut seed::Rng) {
    let power: f64 = spec.frames.iter().flatten().map(|c| c.norm_sqr()).sum();
    let noise: Vec<Vec<Complex64>> = spec
        .frames
        .iter()
        .map(|f| {
            f.iter()
                .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect()
        })
        .collect();
    let pn: f64 = noise.iter().flatten().map(|c| c.norm_sqr()).sum();
    if pn == 0.0 || power == 0.0 {
        return;
    }
    let a = (power / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    for (f, n) in spec.frames.iter_mut().zip(noise) {
        for (c, v) in f.iter_mut().zip(n) {
            *c += a * v;
        }
    }
}

/// Replaces magnitudes by their mean over a `(2r+1) x (2r+1)` neighbourhood
/// (truncated at the edges), keeping phases.
pub(super) fn smooth_magnitude(spec: &mut Spectrogram, r: usize) {
    let mags = spec.magnitudes();
    let (nf, nb) = (mags.len(), spec.config.n_bins());
    for t in 0..nf {
        for k in 0..nb {
            let (t0, t1) = (t.saturating_sub(r), (t + r).min(nf - 1));
            let (k0, k1) = (k.saturating_sub(r), (k + r).min(nb - 1));
            let mut s = 0.0;
            for row in &mags[t0..=t1] {
                s += row[k0..=k1].iter().sum::<f64>();
            }
            let m = s / ((t1 - t0 + 1) * (k1 - k0 + 1)) as f64;
            let c = spec.frames[t][k];
            spec.frames[t][k] = if c.norm() > 0.0 {
                c / c.norm() * m
            } else {
                Complex64::new(m, 0.0)
            };
        }
    }
}

fn modify(x: &[f64], frame: usize, f: impl FnOnce(&mut Spectrogram)) -> Result<Vec<f64>> {
    let mut spec = analyse(x, frame)?;
    f(&mut spec);
    istft(&spec)
}

pub fn phase_randomization(
    x: &[f64],
    frame: usize,
    amount: f64,
    rng: &mut seed::Rng,
) -> Result<Vec<f64>> {
    modify(x, frame, |s| randomize_phase(s, amount, rng))
}

pub fn phase_shuffle(
    x: &[f64],
    frame: usize,
    amount: f64,
    rng: &mut seed::Rng,
) -> Result<Vec<f64>> {
    modify(x, frame, |s| shuffle_phase(s, amount, rng))
}

pub fn holes(x: &[f64], frame: usize, amount: f64, rng: &mut seed::Rng) -> Result<Vec<f64>> {
    modify(x, frame, |s| {
        punch_holes(s, amount, rng);
    })
}

pub fn noise(x: &[f64], frame: usize, snr_db: f64, rng: &mut seed::Rng) -> Result<Vec<f64>> {
    modify(x, frame, |s| add_spectral_noise(s, snr_db, rng))
}

pub fn convolved(x: &[f64], frame: usize, radius: usize) -> Result<Vec<f64>> {
    modify(x, frame, |s| smooth_magnitude(s, radius))
}

/// Spectral convergence `| |S| - |STFT(istft(S))| |_F / |S|_F` of a target
/// magnitude against the consistent spectrogram nearest to `spec`.
#[cfg(test)]
fn inconsistency(target: &[Vec<f64>], spec: &Spectrogram) -> Result<f64> {
    let back = stft(&istft(spec)?, spec.config)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (t, f) in target.iter().zip(back.magnitudes()) {
        for (a, b) in t.iter().zip(f) {
            num += (a - b).powi(2);
            den += a * a;
        }
    }
    Ok(if den > 0.0 { (num / den).sqrt() } else { 0.0 })
}

/// Rebuilds a spectrogram with the magnitudes of `target` and phases from
/// `iterations` rounds of Griffin-Lim started at random phase.
pub(super) fn griffin_lim_spec(
    target: &[Vec<f64>],
    config: StftConfig,
    len: usize,
    iterations: usize,
    rng: &mut seed::Rng,
) -> Result<Spectrogram> {
    let mut spec = Spectrogram {
        config,
        len,
        frames: target
            .iter()
            .map(|f| {
                f.iter()
                    .map(|&m| Complex64::from_polar(m, rng.random_range(-PI..PI)))
                    .collect()
            })
            .collect(),
    };
    for _ in 0..iterations {
        let est = stft(&istft(&spec)?, config)?;
        for ((f, e), t) in spec.frames.iter_mut().zip(&est.frames).zip(target) {
            for ((c, ec), &m) in f.iter_mut().zip(e).zip(t) {
                let n = ec.norm();
                *c = if n > 0.0 {
                    ec / n * m
                } else {
                    Complex64::new(m, 0.0)
                };
            }
        }
    }
    Ok(spec)
}

/// Magnitude-only resynthesis. Zero iterations keep the original phase.
pub fn griffin_lim(
    x: &[f64],
    frame: usize,
    iterations: usize,
    rng: &mut seed::Rng,
) -> Result<Vec<f64>> {
    let spec = analyse(x, frame)?;
    if iterations == 0 {
        return istft(&spec);
    }
    let target = spec.magnitudes();
    istft(&griffin_lim_spec(
        &target,
        spec.config,
        x.len(),
        iterations,
        rng,
    )?)
}
