//! Sample-level alignment by cross-correlation.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Lag `k` maximizing the normalized cross-correlation
/// `sum_n x[n] y[n + k] / (|x| |y|)` over every lag with overlap. Ties (within
/// rounding) go to the smaller `|k|`, then to the non-negative lag. Positive
/// lags mean `y` trails `x`.
pub fn align_offset(x: &[f64], y: &[f64]) -> i64 {
    if x.is_empty() || y.is_empty() {
        return 0;
    }
    let norm = (x.iter().map(|v| v * v).sum::<f64>() * y.iter().map(|v| v * v).sum::<f64>()).sqrt();
    if norm == 0.0 {
        return 0;
    }
    let n = (x.len() + y.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| {
        let mut b: Vec<Complex64> = v.iter().map(|&a| Complex64::new(a, 0.0)).collect();
        b.resize(n, Complex64::new(0.0, 0.0));
        b
    };
    let (mut fx, mut fy) = (pad(x), pad(y));
    fwd.process(&mut fx);
    fwd.process(&mut fy);
    let mut r: Vec<Complex64> = fx.iter().zip(&fy).map(|(a, b)| a.conj() * b).collect();
    inv.process(&mut r);
    // r[k] holds sum_n x[n] y[n + k] for k >= 0 and wraps negative lags.
    let lag_value = |k: i64| {
        let idx = if k >= 0 {
            k as usize
        } else {
            (n as i64 + k) as usize
        };
        r[idx].re / (n as f64 * norm)
    };
    let tol = 1e-12;
    let mut best = (0i64, lag_value(0));
    let max_lag = y.len() as i64 - 1;
    let min_lag = -(x.len() as i64 - 1);
    for mag in 1..=max_lag.max(-min_lag) {
        for k in [mag, -mag] {
            if k < min_lag || k > max_lag {
                continue;
            }
            let v = lag_value(k);
            if v > best.1 + tol {
                best = (k, v);
            }
        }
    }
    best.0
}

/// Trims `x` and `y` to the support where `y[n + offset]` pairs with `x[n]`.
pub fn trim_to_common(x: &[f64], y: &[f64], offset: i64) -> (Vec<f64>, Vec<f64>) {
    let start = (-offset).max(0) as usize;
    let end = (x.len() as i64)
        .min(y.len() as i64 - offset)
        .max(start as i64) as usize;
    let xs = x[start..end].to_vec();
    let ys = (start..end)
        .map(|n| y[(n as i64 + offset) as usize])
        .collect();
    (xs, ys)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::seed;

    fn noise(n: usize) -> Vec<f64> {
        let mut rng = seed::rng(1);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Direct O(n^2) correlation, as an independent check of the FFT route.
    fn brute(x: &[f64], y: &[f64]) -> i64 {
        let mut best = (0i64, f64::NEG_INFINITY);
        for k in -(x.len() as i64 - 1)..(y.len() as i64) {
            let mut s = 0.0;
            for (i, xv) in x.iter().enumerate() {
                let j = i as i64 + k;
                if j >= 0 && (j as usize) < y.len() {
                    s += xv * y[j as usize];
                }
            }
            if s > best.1 + 1e-9 || (s > best.1 - 1e-9 && k.abs() < best.0.abs()) {
                best = (k, s);
            }
        }
        best.0
    }

    #[test]
    fn recovers_positive_and_negative_shifts() {
        let x = noise(3000);
        for shift in [0i64, 1, 37, 500, -1, -250] {
            let y: Vec<f64> = (0..x.len() as i64)
                .map(|n| {
                    let src = n - shift;
                    if src >= 0 && (src as usize) < x.len() {
                        x[src as usize]
                    } else {
                        0.0
                    }
                })
                .collect();
            assert_eq!(align_offset(&x, &y), shift);
            let (a, b) = trim_to_common(&x, &y, shift);
            assert_eq!(a.len(), b.len());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn fft_route_matches_brute_force() {
        let x = noise(257);
        let mut rng = seed::rng(2);
        let y: Vec<f64> = x
            .iter()
            .map(|v| 0.5 * v + rng.random_range(-0.5..0.5))
            .collect();
        let y: Vec<f64> = std::iter::repeat_n(0.0, 13).chain(y).take(300).collect();
        assert_eq!(align_offset(&x, &y), brute(&x, &y));
    }

    #[test]
    fn ties_prefer_the_smaller_lag() {
        // A periodic impulse train correlates equally at +-period.
        let mut x = vec![0.0; 64];
        x[20] = 1.0;
        let mut y = vec![0.0; 64];
        y[10] = 1.0;
        y[30] = 1.0;
        assert_eq!(align_offset(&x, &y), 10);
        assert_eq!(align_offset(&[0.0; 8], &[1.0; 8]), 0);
    }
}
