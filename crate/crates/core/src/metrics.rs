//! Objective proxy metrics: SNR, scale-invariant SNR, log-spectral distance
//! and the multi-resolution STFT distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{stft, Signal, StftConfig};

/// Reported in place of +inf (and its negative in place of -inf).
pub const SNR_CAP_DB: f64 = 100.0;
/// Magnitude floor inside the logarithm of the STFT distance.
pub const MRSTFT_LOG_FLOOR: f64 = 1e-7;
/// Power floor for the log-spectral distance (-100 dB).
pub const LSD_POWER_FLOOR: f64 = 1e-10;

pub const DEFAULT_RESOLUTIONS: [(usize, usize); 3] = [(512, 128), (1024, 256), (2048, 512)];

fn check_pair(reference: &[f64], estimate: &[f64]) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::config(format!(
            "metric inputs differ in length: {} vs {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.iter().chain(estimate).any(|v| !v.is_finite()) {
        return Err(Error::domain("metric inputs must be finite"));
    }
    if reference.iter().all(|v| *v == 0.0) {
        return Err(Error::UndefinedMetric("reference is silent".into()));
    }
    Ok(())
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        return SNR_CAP_DB;
    }
    (10.0 * (num / den).log10()).clamp(-SNR_CAP_DB, SNR_CAP_DB)
}

/// `10 log10(|ref|^2 / |ref - est|^2)`, capped at [`SNR_CAP_DB`].
pub fn snr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pair(reference, estimate)?;
    let s: f64 = reference.iter().map(|v| v * v).sum();
    let e: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, x)| (r - x).powi(2))
        .sum();
    Ok(ratio_db(s, e))
}

/// SNR after removing means and projecting the estimate onto the reference.
pub fn si_snr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pair(reference, estimate)?;
    let n = reference.len() as f64;
    let mr = reference.iter().sum::<f64>() / n;
    let me = estimate.iter().sum::<f64>() / n;
    let r: Vec<f64> = reference.iter().map(|v| v - mr).collect();
    let e: Vec<f64> = estimate.iter().map(|v| v - me).collect();
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(Error::UndefinedMetric("reference is constant".into()));
    }
    let alpha = r.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target: f64 = alpha * alpha * rr;
    let noise: f64 = r.iter().zip(&e).map(|(a, b)| (b - alpha * a).powi(2)).sum();
    Ok(ratio_db(target, noise))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionTerm {
    pub frame: usize,
    pub hop: usize,
    pub spectral_convergence: f64,
    pub log_magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrStft {
    /// Mean over resolutions of spectral convergence plus log-magnitude term.
    pub total: f64,
    pub resolutions: Vec<ResolutionTerm>,
}

/// Multi-resolution STFT distance with Hann windows. Per resolution:
/// `| |R| - |E| |_F / |R|_F + mean |ln|R| - ln|E||`, magnitudes floored at
/// [`MRSTFT_LOG_FLOOR`] inside the logarithm.
pub fn mrstft(
    reference: &[f64],
    estimate: &[f64],
    resolutions: &[(usize, usize)],
) -> Result<MrStft> {
    check_pair(reference, estimate)?;
    if resolutions.is_empty() {
        return Err(Error::config("mrstft needs at least one resolution"));
    }
    let mut terms = Vec::with_capacity(resolutions.len());
    for &(frame, hop) in resolutions {
        let cfg = StftConfig::new(frame, hop);
        let r = stft(reference, cfg)?.magnitudes();
        let e = stft(estimate, cfg)?.magnitudes();
        let (mut diff, mut norm, mut log_sum, mut count) = (0.0, 0.0, 0.0, 0usize);
        for (fr, fe) in r.iter().zip(&e) {
            for (a, b) in fr.iter().zip(fe) {
                diff += (a - b).powi(2);
                norm += a * a;
                log_sum += (a.max(MRSTFT_LOG_FLOOR).ln() - b.max(MRSTFT_LOG_FLOOR).ln()).abs();
                count += 1;
            }
        }
        if norm == 0.0 {
            return Err(Error::UndefinedMetric(
                "reference spectrogram is silent".into(),
            ));
        }
        terms.push(ResolutionTerm {
            frame,
            hop,
            spectral_convergence: (diff / norm).sqrt(),
            log_magnitude: log_sum / count as f64,
        });
    }
    let total = terms
        .iter()
        .map(|t| t.spectral_convergence + t.log_magnitude)
        .sum::<f64>()
        / terms.len() as f64;
    Ok(MrStft {
        total,
        resolutions: terms,
    })
}

/// Log-spectral distance in dB: per frame, the RMS over bins of the power
/// difference in dB; then the RMS over frames.
pub fn lsd_with(reference: &[f64], estimate: &[f64], config: StftConfig) -> Result<f64> {
    check_pair(reference, estimate)?;
    let r = stft(reference, config)?.powers();
    let e = stft(estimate, config)?.powers();
    let db = |p: f64| 10.0 * p.max(LSD_POWER_FLOOR).log10();
    let per_frame: Vec<f64> = r
        .iter()
        .zip(&e)
        .map(|(fr, fe)| {
            fr.iter()
                .zip(fe)
                .map(|(a, b)| (db(*a) - db(*b)).powi(2))
                .sum::<f64>()
                / fr.len() as f64
        })
        .collect();
    Ok((per_frame.iter().sum::<f64>() / per_frame.len() as f64).sqrt())
}

pub fn lsd(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    lsd_with(reference, estimate, StftConfig::new(512, 128))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub snr: f64,
    pub si_snr: f64,
    pub lsd: f64,
    pub mrstft: MrStft,
}

pub fn evaluate(reference: &Signal, estimate: &Signal) -> Result<MetricReport> {
    evaluate_with(reference, estimate, &DEFAULT_RESOLUTIONS)
}

pub fn evaluate_with(
    reference: &Signal,
    estimate: &Signal,
    resolutions: &[(usize, usize)],
) -> Result<MetricReport> {
    if reference.sample_rate != estimate.sample_rate {
        return Err(Error::config(format!(
            "sample rates differ: {} vs {}",
            reference.sample_rate, estimate.sample_rate
        )));
    }
    let (r, e) = (&reference.samples, &estimate.samples);
    Ok(MetricReport {
        snr: snr(r, e)?,
        si_snr: si_snr(r, e)?,
        lsd: lsd(r, e)?,
        mrstft: mrstft(r, e, resolutions)?,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::seed;

    fn noise(n: usize, s: u64) -> Vec<f64> {
        let mut rng = seed::rng(s);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn speechlike(n: usize, s: u64) -> Vec<f64> {
        let mut rng = seed::rng(s);
        let mut y = 0.0;
        (0..n)
            .map(|i| {
                y = 0.9 * y + rng.random_range(-0.2..0.2);
                y + 0.3 * (i as f64 * 0.05).sin()
            })
            .collect()
    }

    #[test]
    fn identical_signals_score_ideal() {
        let x = speechlike(16_000, 1);
        assert_eq!(snr(&x, &x).unwrap(), SNR_CAP_DB);
        assert_eq!(si_snr(&x, &x).unwrap(), SNR_CAP_DB);
        assert_eq!(lsd(&x, &x).unwrap(), 0.0);
        let m = mrstft(&x, &x, &DEFAULT_RESOLUTIONS).unwrap();
        assert_eq!(m.total, 0.0);
        assert_eq!(m.resolutions.len(), 3);
    }

    #[test]
    fn snr_of_known_power_ratio() {
        let x = speechlike(8000, 2);
        let n = noise(8000, 3);
        let px: f64 = x.iter().map(|v| v * v).sum();
        let pn: f64 = n.iter().map(|v| v * v).sum();
        let a = (px / pn / 100.0).sqrt();
        let y: Vec<f64> = x.iter().zip(&n).map(|(s, v)| s + a * v).collect();
        assert!((snr(&x, &y).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn silent_reference_is_undefined() {
        let z = vec![0.0; 100];
        let x = noise(100, 4);
        for r in [snr(&z, &x), si_snr(&z, &x), lsd(&z, &x)] {
            assert!(matches!(r, Err(Error::UndefinedMetric(_))));
        }
        assert!(matches!(
            mrstft(&z, &x, &DEFAULT_RESOLUTIONS),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(snr(&x, &x[..50]).is_err());
    }

    #[test]
    fn doubling_gives_closed_form_terms() {
        let x = noise(16_000, 5);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let m = mrstft(&x, &y, &DEFAULT_RESOLUTIONS).unwrap();
        for t in &m.resolutions {
            assert!((t.spectral_convergence - 1.0).abs() < 1e-12);
            assert!((t.log_magnitude - 2f64.ln()).abs() < 1e-12);
        }
        assert!((m.total - (1.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn lsd_of_a_gain() {
        let x = noise(8000, 6);
        for a in [0.5, 2.0, 10.0] {
            let y: Vec<f64> = x.iter().map(|v| a * v).collect();
            assert!((lsd(&x, &y).unwrap() - 20.0 * f64::log10(a).abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn mrstft_falls_as_snr_rises() {
        let x = speechlike(16_000, 7);
        let n = noise(16_000, 8);
        let px: f64 = x.iter().map(|v| v * v).sum();
        let pn: f64 = n.iter().map(|v| v * v).sum();
        let mut last = f64::INFINITY;
        for snr_db in (0..=40).step_by(5) {
            let a = (px / pn / 10f64.powf(snr_db as f64 / 10.0)).sqrt();
            let y: Vec<f64> = x.iter().zip(&n).map(|(s, v)| s + a * v).collect();
            let m = mrstft(&x, &y, &DEFAULT_RESOLUTIONS).unwrap().total;
            assert!(m < last, "{snr_db} dB: {m} !< {last}");
            last = m;
        }
    }

    #[test]
    fn mrstft_is_stable_under_hop_changes() {
        let x = speechlike(16_000, 9);
        let n = noise(16_000, 10);
        let y: Vec<f64> = x.iter().zip(&n).map(|(s, v)| s + 0.1 * v).collect();
        let a = mrstft(&x, &y, &DEFAULT_RESOLUTIONS).unwrap().total;
        let finer: Vec<(usize, usize)> = DEFAULT_RESOLUTIONS
            .iter()
            .map(|(f, h)| (*f, h / 2))
            .collect();
        assert!(finer.iter().all(|(f, h)| StftConfig::new(*f, *h).is_cola()));
        let b = mrstft(&x, &y, &finer).unwrap().total;
        assert!(((a - b) / a).abs() < 0.05, "{a} vs {b}");
    }

    /// Direct DFT of centered, zero-padded, Hann-windowed frames.
    fn brute_lsd(x: &[f64], y: &[f64], frame: usize, hop: usize) -> f64 {
        let w: Vec<f64> = (0..frame)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / frame as f64).cos())
            .collect();
        let power = |s: &[f64], start: i64, k: usize| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, wi) in w.iter().enumerate() {
                let idx = start + i as i64;
                let v = if idx >= 0 && (idx as usize) < s.len() {
                    s[idx as usize]
                } else {
                    0.0
                };
                let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / frame as f64;
                re += v * wi * ang.cos();
                im += v * wi * ang.sin();
            }
            re * re + im * im
        };
        let n_frames = 1 + x.len() / hop;
        let mut total = 0.0;
        for m in 0..n_frames {
            let start = (m * hop) as i64 - (frame / 2) as i64;
            let mut acc = 0.0;
            for k in 0..=frame / 2 {
                let a = 10.0 * power(x, start, k).max(1e-10).log10();
                let b = 10.0 * power(y, start, k).max(1e-10).log10();
                acc += (a - b).powi(2);
            }
            total += acc / (frame / 2 + 1) as f64;
        }
        (total / n_frames as f64).sqrt()
    }

    #[test]
    fn lsd_matches_direct_dft() {
        let white = noise(2048, 11);
        // Pink-ish: leaky integration of white noise.
        let mut acc = 0.0;
        let pink: Vec<f64> = noise(2048, 12)
            .iter()
            .map(|v| {
                acc = 0.97 * acc + v;
                acc * 0.2
            })
            .collect();
        let fast = lsd_with(&white, &pink, StftConfig::new(256, 64)).unwrap();
        let slow = brute_lsd(&white, &pink, 256, 64);
        assert!((fast - slow).abs() < 1e-8 * slow, "{fast} vs {slow}");
    }

    proptest! {
        #[test]
        fn si_snr_ignores_positive_scaling(a in 1e-3f64..1e3, s in 0u64..1000) {
            let x = speechlike(2000, s);
            let n = noise(2000, s + 1);
            let y: Vec<f64> = x.iter().zip(&n).map(|(u, v)| u + 0.3 * v).collect();
            let ya: Vec<f64> = y.iter().map(|v| a * v).collect();
            let (p, q) = (si_snr(&x, &y).unwrap(), si_snr(&x, &ya).unwrap());
            prop_assert!((p - q).abs() < 1e-9, "{} vs {}", p, q);
        }
    }
}
