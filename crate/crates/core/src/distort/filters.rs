//! Audio-cookbook biquads and a normalized two-pole resonator.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    /// Normalized so that `a0 == 1`; stores `[a1, a2]`.
    pub a: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BiquadKind {
    LowPass,
    HighPass,
    /// Constant 0 dB peak gain.
    BandPass,
    Notch,
    Peaking {
        gain_db: f64,
    },
    LowShelf {
        gain_db: f64,
    },
    HighShelf {
        gain_db: f64,
    },
}

impl Biquad {
    pub fn design(kind: BiquadKind, freq: f64, q: f64, sample_rate: f64) -> Result<Self> {
        if !(freq > 0.0 && freq < sample_rate / 2.0) {
            return Err(Error::domain(format!(
                "biquad frequency {freq} Hz outside (0, {}) Hz",
                sample_rate / 2.0
            )));
        }
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::domain(format!("biquad Q must be > 0, got {q}")));
        }
        let w0 = 2.0 * PI * freq / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let (b, a0, a1, a2) = match kind {
            BiquadKind::LowPass => (
                [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0],
                1.0 + alpha,
                -2.0 * cos,
                1.0 - alpha,
            ),
            BiquadKind::HighPass => (
                [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0],
                1.0 + alpha,
                -2.0 * cos,
                1.0 - alpha,
            ),
            BiquadKind::BandPass => ([alpha, 0.0, -alpha], 1.0 + alpha, -2.0 * cos, 1.0 - alpha),
            BiquadKind::Notch => ([1.0, -2.0 * cos, 1.0], 1.0 + alpha, -2.0 * cos, 1.0 - alpha),
            BiquadKind::Peaking { gain_db } => {
                let amp = 10f64.powf(gain_db / 40.0);
                (
                    [1.0 + alpha * amp, -2.0 * cos, 1.0 - alpha * amp],
                    1.0 + alpha / amp,
                    -2.0 * cos,
                    1.0 - alpha / amp,
                )
            }
            BiquadKind::LowShelf { gain_db } => {
                let amp = 10f64.powf(gain_db / 40.0);
                let k = 2.0 * amp.sqrt() * alpha;
                (
                    [
                        amp * ((amp + 1.0) - (amp - 1.0) * cos + k),
                        2.0 * amp * ((amp - 1.0) - (amp + 1.0) * cos),
                        amp * ((amp + 1.0) - (amp - 1.0) * cos - k),
                    ],
                    (amp + 1.0) + (amp - 1.0) * cos + k,
                    -2.0 * ((amp - 1.0) + (amp + 1.0) * cos),
                    (amp + 1.0) + (amp - 1.0) * cos - k,
                )
            }
            BiquadKind::HighShelf { gain_db } => {
                let amp = 10f64.powf(gain_db / 40.0);
                let k = 2.0 * amp.sqrt() * alpha;
                (
                    [
                        amp * ((amp + 1.0) + (amp - 1.0) * cos + k),
                        -2.0 * amp * ((amp - 1.0) + (amp + 1.0) * cos),
                        amp * ((amp + 1.0) + (amp - 1.0) * cos - k),
                    ],
                    (amp + 1.0) - (amp - 1.0) * cos + k,
                    2.0 * ((amp - 1.0) - (amp + 1.0) * cos),
                    (amp + 1.0) - (amp - 1.0) * cos - k,
                )
            }
        };
        Ok(Self {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [a1 / a0, a2 / a0],
        })
    }

    /// Transposed direct form II, zero initial state.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (mut s1, mut s2) = (0.0, 0.0);
        x.iter()
            .map(|&v| {
                let y = self.b[0] * v + s1;
                s1 = self.b[1] * v - self.a[0] * y + s2;
                s2 = self.b[2] * v - self.a[1] * y;
                y
            })
            .collect()
    }

    /// `|H(e^{jw})|` at `freq`, evaluated from the coefficients.
    pub fn magnitude(&self, freq: f64, sample_rate: f64) -> f64 {
        let w = 2.0 * PI * freq / sample_rate;
        let z1 = (w.cos(), -w.sin());
        let z2 = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num = (
            self.b[0] + self.b[1] * z1.0 + self.b[2] * z2.0,
            self.b[1] * z1.1 + self.b[2] * z2.1,
        );
        let den = (
            1.0 + self.a[0] * z1.0 + self.a[1] * z2.0,
            self.a[0] * z1.1 + self.a[1] * z2.1,
        );
        (num.0.hypot(num.1)) / (den.0.hypot(den.1))
    }
}

/// Applies `stages` identical biquads in series.
pub fn cascade(x: &[f64], filter: &Biquad, stages: usize) -> Vec<f64> {
    let mut y = x.to_vec();
    for _ in 0..stages {
        y = filter.apply(&y);
    }
    y
}

/// Resonator `y[n] = g x[n] + 2 r cos(w) y[n-1] - r^2 y[n-2]` with `g`
/// chosen for unit gain at the resonance frequency.
pub fn two_pole(x: &[f64], freq: f64, radius: f64, sample_rate: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&radius) {
        return Err(Error::domain(format!(
            "two-pole radius must lie in [0, 1), got {radius}"
        )));
    }
    if !(freq > 0.0 && freq < sample_rate / 2.0) {
        return Err(Error::domain(format!(
            "two-pole frequency {freq} Hz out of range"
        )));
    }
    let w = 2.0 * PI * freq / sample_rate;
    let (c1, c2) = (2.0 * radius * w.cos(), -radius * radius);
    // |1 - c1 e^{-jw} - c2 e^{-2jw}| at the resonance.
    let re = 1.0 - c1 * w.cos() - c2 * (2.0 * w).cos();
    let im = c1 * w.sin() + c2 * (2.0 * w).sin();
    let g = re.hypot(im);
    let (mut y1, mut y2) = (0.0, 0.0);
    Ok(x.iter()
        .map(|&v| {
            let y = g * v + c1 * y1 + c2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 16_000.0;

    /// Steady-state gain measured by filtering a long tone.
    fn measured_gain(f: impl Fn(&[f64]) -> Vec<f64>, freq: f64) -> f64 {
        let n = 32_000;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / FS).sin())
            .collect();
        let y = f(&x);
        let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
        rms(&y[n / 2..]) / rms(&x[n / 2..])
    }

    #[test]
    fn lowpass_is_minus_three_db_at_cutoff() {
        let q = std::f64::consts::FRAC_1_SQRT_2;
        for fc in [300.0, 1000.0, 4000.0] {
            let bq = Biquad::design(BiquadKind::LowPass, fc, q, FS).unwrap();
            let db = 20.0 * bq.magnitude(fc, FS).log10();
            assert!(
                (db - 20.0 * std::f64::consts::FRAC_1_SQRT_2.log10()).abs() < 1e-9,
                "{db}"
            );
            let measured = 20.0 * measured_gain(|x| bq.apply(x), fc).log10();
            assert!((measured + 3.01).abs() < 0.1, "{measured}");
            assert!((bq.magnitude(1e-3, FS) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn highpass_and_bandpass_responses() {
        let q = std::f64::consts::FRAC_1_SQRT_2;
        let hp = Biquad::design(BiquadKind::HighPass, 500.0, q, FS).unwrap();
        assert!(
            (20.0 * hp.magnitude(500.0, FS).log10()
                - 20.0 * std::f64::consts::FRAC_1_SQRT_2.log10())
            .abs()
                < 1e-9
        );
        assert!((hp.magnitude(7999.0, FS) - 1.0).abs() < 1e-6);
        let bp = Biquad::design(BiquadKind::BandPass, 1000.0, 2.0, FS).unwrap();
        assert!((bp.magnitude(1000.0, FS) - 1.0).abs() < 1e-12);
        assert!((measured_gain(|x| bp.apply(x), 1000.0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn notch_kills_center_and_passes_dc() {
        let n = Biquad::design(BiquadKind::Notch, 1200.0, 2.0, FS).unwrap();
        assert!(n.magnitude(1200.0, FS) < 1e-12);
        assert!(measured_gain(|x| n.apply(x), 1200.0) < 0.01);
        assert!((n.magnitude(1e-3, FS) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn peaking_and_shelves_reach_their_gain() {
        let pk = Biquad::design(BiquadKind::Peaking { gain_db: 9.0 }, 2000.0, 1.5, FS).unwrap();
        assert!((20.0 * pk.magnitude(2000.0, FS).log10() - 9.0).abs() < 1e-9);
        let ls = Biquad::design(BiquadKind::LowShelf { gain_db: 6.0 }, 200.0, 0.707, FS).unwrap();
        assert!((20.0 * ls.magnitude(1e-6, FS).log10() - 6.0).abs() < 1e-6);
        let hs =
            Biquad::design(BiquadKind::HighShelf { gain_db: -8.0 }, 4000.0, 0.707, FS).unwrap();
        assert!((20.0 * hs.magnitude(FS / 2.0 - 1e-6, FS).log10() + 8.0).abs() < 1e-6);
    }

    #[test]
    fn zero_gain_peaking_is_identity() {
        let pk = Biquad::design(BiquadKind::Peaking { gain_db: 0.0 }, 900.0, 3.0, FS).unwrap();
        let x: Vec<f64> = (0..500)
            .map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0)
            .collect();
        let y = pk.apply(&x);
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn two_pole_unit_gain_at_resonance() {
        let g = measured_gain(|x| two_pole(x, 1500.0, 0.95, FS).unwrap(), 1500.0);
        assert!((g - 1.0).abs() < 0.01, "{g}");
        let x = [1.0, -0.5, 0.25];
        assert_eq!(two_pole(&x, 1000.0, 0.0, FS).unwrap(), x.to_vec());
        assert!(two_pole(&x, 1000.0, 1.0, FS).is_err());
    }

    #[test]
    fn invalid_designs() {
        assert!(Biquad::design(BiquadKind::LowPass, 9000.0, 1.0, FS).is_err());
        assert!(Biquad::design(BiquadKind::LowPass, 1000.0, 0.0, FS).is_err());
    }
}
