//! Geometric (variance-exploding) noise schedule and the discretized
//! consistent-annealing constants.
//!
//! The noise level follows `sigma(t) = sigma_min * (sigma_max / sigma_min)^t`
//! for `t` in `[0, 1]`. Sampling discretizes `t` into `N` uniform points
//! `t_n = (n - 1) / (N - 1)`, `n = 1..=N`, so consecutive levels share the
//! constant ratio `gamma = sigma(t_n) / sigma(t_{n+1})`. From `gamma` and the
//! hyper-parameter `epsilon >= 1` the step constants are
//!
//! ```text
//! eta  = 1 - gamma^epsilon
//! beta = sqrt(1 - ((1 - eta) / gamma)^2)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SIGMA_MIN: f64 = 5e-4;
pub const DEFAULT_SIGMA_MAX: f64 = 5.0;
pub const DEFAULT_STEPS: usize = 64;
pub const DEFAULT_EPSILON: f64 = 2.3;

/// Minimum ratio used to interpret "much smaller than" when checking the data
/// variance against the schedule end points. At a ratio of about 7 (the
/// two-mode demo prior under the default schedule) the sampler's `N(0,
/// sigma_max^2)` start is far enough from the perturbed data distribution to
/// shift mixture weights by several binomial standard errors; at 100 the
/// shift is about one.
pub const VARIANCE_MARGIN: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    sigma_min: f64,
    sigma_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            sigma_min: DEFAULT_SIGMA_MIN,
            sigma_max: DEFAULT_SIGMA_MAX,
        }
    }
}

impl NoiseSchedule {
    pub fn new(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        let schedule = Self {
            sigma_min,
            sigma_max,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Checks the invariants; needed after deserialization.
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_min.is_finite()
            && self.sigma_max.is_finite()
            && self.sigma_min > 0.0
            && self.sigma_min < self.sigma_max;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "noise schedule needs 0 < sigma_min < sigma_max, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )))
        }
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    /// Noise level at diffusion time `t`, evaluated in log space.
    ///
    /// The end points are returned exactly.
    pub fn sigma_at(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::domain(format!(
                "diffusion time t={t} outside [0, 1]"
            )));
        }
        Ok(self.sigma_unchecked(t))
    }

    pub(crate) fn sigma_unchecked(&self, t: f64) -> f64 {
        if t == 0.0 {
            return self.sigma_min;
        }
        if t == 1.0 {
            return self.sigma_max;
        }
        let lo = self.sigma_min.ln();
        let hi = self.sigma_max.ln();
        (lo + t * (hi - lo)).exp()
    }

    /// Inverse of [`sigma_at`](Self::sigma_at), clamped to `[0, 1]`.
    pub fn time_of(&self, sigma: f64) -> f64 {
        let lo = self.sigma_min.ln();
        let hi = self.sigma_max.ln();
        ((sigma.ln() - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    /// Compares a data variance with the schedule end points. The schedule
    /// should satisfy `sigma_min^2 << var << sigma_max^2`; a violation is not
    /// an error, only a warning (returned and logged).
    pub fn check_data_variance(&self, variance: f64) -> Option<String> {
        let lo = self.sigma_min * self.sigma_min;
        let hi = self.sigma_max * self.sigma_max;
        let msg = if variance < VARIANCE_MARGIN * lo {
            format!("data variance {variance:e} is not much larger than sigma_min^2 = {lo:e}")
        } else if variance * VARIANCE_MARGIN > hi {
            format!("data variance {variance:e} is not much smaller than sigma_max^2 = {hi:e}")
        } else {
            return None;
        };
        log::warn!("{msg}");
        Some(msg)
    }

    pub fn plan(&self, n_steps: usize, epsilon: f64) -> Result<SamplingPlan> {
        make_plan(self, n_steps, epsilon)
    }
}

/// Discretized sampling schedule with its step constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub n_steps: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub eta: f64,
    pub beta: f64,
    /// `sigmas[n - 1] = sigma(t_n)`: ascending in storage, iterated from the
    /// back by the sampler.
    pub sigmas: Vec<f64>,
}

impl SamplingPlan {
    /// `sigma(t_n)` for 1-based `n`.
    pub fn sigma(&self, n: usize) -> f64 {
        self.sigmas[n - 1]
    }

    /// `t_n` for 1-based `n`.
    pub fn time(&self, n: usize) -> f64 {
        (n - 1) as f64 / (self.n_steps - 1) as f64
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[self.n_steps - 1]
    }
}

/// Degenerate one-level plan: `t_1 = 0`, so sampling reduces to
/// `x = sigma_min * z` followed by the final denoising step. Used where a
/// sweep asks for `N = 1`, which [`make_plan`] rejects.
pub fn single_level_plan(schedule: &NoiseSchedule) -> Result<SamplingPlan> {
    schedule.validate()?;
    Ok(SamplingPlan {
        n_steps: 1,
        epsilon: 1.0,
        gamma: 1.0,
        eta: 0.0,
        beta: 0.0,
        sigmas: vec![schedule.sigma_min],
    })
}

/// [`make_plan`] for `n_steps >= 2`, [`single_level_plan`] for `n_steps == 1`.
pub fn sweep_plan(schedule: &NoiseSchedule, n_steps: usize, epsilon: f64) -> Result<SamplingPlan> {
    if n_steps == 1 {
        if !(epsilon >= 1.0 && epsilon.is_finite()) {
            return Err(Error::config(format!(
                "epsilon must be >= 1, got {epsilon}"
            )));
        }
        let mut plan = single_level_plan(schedule)?;
        plan.epsilon = epsilon;
        return Ok(plan);
    }
    make_plan(schedule, n_steps, epsilon)
}

pub fn make_plan(schedule: &NoiseSchedule, n_steps: usize, epsilon: f64) -> Result<SamplingPlan> {
    schedule.validate()?;
    if n_steps < 2 {
        return Err(Error::config(format!(
            "n_steps must be >= 2, got {n_steps}"
        )));
    }
    if !(epsilon >= 1.0 && epsilon.is_finite()) {
        return Err(Error::config(format!(
            "epsilon must be >= 1, got {epsilon}"
        )));
    }
    let intervals = (n_steps - 1) as f64;
    let log_ratio = (schedule.sigma_min / schedule.sigma_max).ln();
    let gamma = (log_ratio / intervals).exp();
    // (1 - eta) / gamma == gamma^(epsilon - 1); computing it this way keeps
    // beta exactly zero at epsilon = 1.
    let eta = 1.0 - (epsilon * gamma.ln()).exp();
    let carry = ((epsilon - 1.0) * gamma.ln()).exp();
    let beta = (1.0 - carry * carry).max(0.0).sqrt();
    let sigmas = (1..=n_steps)
        .map(|n| schedule.sigma_unchecked((n - 1) as f64 / intervals))
        .collect();
    Ok(SamplingPlan {
        n_steps,
        epsilon,
        gamma,
        eta,
        beta,
        sigmas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> NoiseSchedule {
        NoiseSchedule::new(5e-4, 5.0).unwrap()
    }

    #[test]
    fn sigma_endpoints_and_midpoint() {
        let s = defaults();
        assert_eq!(s.sigma_at(0.0).unwrap(), 5e-4);
        assert_eq!(s.sigma_at(1.0).unwrap(), 5.0);
        let mid = s.sigma_at(0.5).unwrap();
        assert!((mid - 0.05).abs() < 1e-15, "{mid}");
    }

    #[test]
    fn sigma_rejects_out_of_range_time() {
        let s = defaults();
        assert!(matches!(s.sigma_at(-1e-9), Err(Error::Domain(_))));
        assert!(matches!(s.sigma_at(1.0 + 1e-9), Err(Error::Domain(_))));
        assert!(s.sigma_at(f64::NAN).is_err());
    }

    #[test]
    fn invalid_schedules() {
        assert!(NoiseSchedule::new(1.0, 1.0).is_err());
        assert!(NoiseSchedule::new(0.0, 1.0).is_err());
        assert!(NoiseSchedule::new(2.0, 1.0).is_err());
    }

    #[test]
    fn two_step_deterministic_plan() {
        let plan = make_plan(&defaults(), 2, 1.0).unwrap();
        assert!((plan.gamma - 1e-4).abs() < 1e-16);
        assert!((plan.eta - (1.0 - 1e-4)).abs() < 1e-15);
        assert_eq!(plan.beta, 0.0);
        assert_eq!(plan.sigmas, vec![5e-4, 5.0]);
    }

    #[test]
    fn sixty_four_steps_epsilon_2_3() {
        // Direct evaluation: g = 1e-4^(1/63), eta = 1 - g^2.3,
        // beta = sqrt(1 - ((1 - eta)/g)^2).
        let plan = make_plan(&defaults(), 64, 2.3).unwrap();
        assert!((plan.gamma - 0.863_988_449_483_968_6).abs() < 1e-14);
        assert!((plan.eta - 0.285_555_900_224_833_8).abs() < 1e-13);
        assert!((plan.beta - 0.562_328_482_854_898_2).abs() < 1e-13);
    }

    #[test]
    fn plan_errors() {
        assert!(matches!(
            make_plan(&defaults(), 1, 2.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            make_plan(&defaults(), 10, 0.99),
            Err(Error::Config(_))
        ));
        assert!(make_plan(&defaults(), 10, f64::NAN).is_err());
    }

    #[test]
    fn variance_guidance_warns() {
        let s = defaults();
        assert!(s.check_data_variance(0.05).is_none());
        assert!(s.check_data_variance(1e-7).is_some());
        assert!(s.check_data_variance(10.0).is_some());
    }

    #[test]
    fn single_level_plan_starts_at_sigma_min() {
        let plan = sweep_plan(&defaults(), 1, 2.3).unwrap();
        assert_eq!(plan.sigma_max(), 5e-4);
        assert_eq!(plan.n_steps, 1);
        assert_eq!(
            sweep_plan(&defaults(), 8, 2.3).unwrap(),
            make_plan(&defaults(), 8, 2.3).unwrap()
        );
    }

    #[test]
    fn time_of_inverts_sigma_at() {
        let s = defaults();
        for &t in &[0.0, 0.1, 0.37, 0.9, 1.0] {
            let back = s.time_of(s.sigma_at(t).unwrap());
            assert!((back - t).abs() < 1e-12);
        }
    }
}
