//! Small tasks with closed-form scores, used to check that training and
//! sampling actually learn something.
//!
//! * [`score_error`] compares a score estimate against a [`GmmPrior`] oracle.
//! * [`DenoisingTask`] is a conditional problem on short 1-D windows: clean
//!   `x0 ~ N(0, K)` with `K_ij = s^2 rho^|i-j|`, observed as `c = x0 + tau w`.
//!   The posterior `p(x0 | c)` is Gaussian, so the perturbed conditional score
//!   is available exactly and serves as an oracle for the trained network.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::ScoreFunction;
use crate::error::{Error, Result};
use crate::oracle::GmmPrior;
use crate::schedule::NoiseSchedule;
use crate::seed;
use crate::train::TrainingSource;

/// Grid used by [`score_error`].
#[derive(Debug, Clone, Copy)]
pub struct ErrorGrid {
    pub n_times: usize,
    pub n_points: usize,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl Default for ErrorGrid {
    fn default() -> Self {
        Self {
            n_times: 33,
            n_points: 401,
            x_lo: -4.0,
            x_hi: 4.0,
        }
    }
}

/// Density-weighted relative squared score error of a 1-D estimate:
///
/// ```text
/// sum_{t, x} p_sigma(x) sigma^2 (S_hat - S)^2  /  sum_{t, x} p_sigma(x) sigma^2 S^2
/// ```
///
/// with `t` uniform on `[0, 1]` and `x` on a uniform grid. The `sigma^2`
/// factor matches the weighting of the training loss.
pub fn score_error<S: ScoreFunction + ?Sized>(
    estimate: &S,
    prior: &GmmPrior,
    schedule: &NoiseSchedule,
    grid: ErrorGrid,
) -> Result<f64> {
    if prior.dim() != 1 {
        return Err(Error::config("score_error expects a 1-D prior"));
    }
    if grid.n_times < 2 || grid.n_points < 2 {
        return Err(Error::config(
            "score_error grid needs at least 2 points per axis",
        ));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..grid.n_times {
        let sigma = schedule.sigma_at(i as f64 / (grid.n_times - 1) as f64)?;
        for j in 0..grid.n_points {
            let x = [grid.x_lo + (grid.x_hi - grid.x_lo) * j as f64 / (grid.n_points - 1) as f64];
            let w = prior.log_density(&x, sigma)?.exp() * sigma * sigma;
            let truth = prior.perturbed_score(&x, sigma)?[0];
            let est = estimate.score(&x, &[], sigma)?[0];
            num += w * (est - truth).powi(2);
            den += w * truth * truth;
        }
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoisingConfig {
    pub len: usize,
    /// Marginal standard deviation of the clean signal.
    pub scale: f64,
    /// Lag-one correlation of the clean signal.
    pub rho: f64,
    /// Standard deviation of the observation noise.
    pub noise_std: f64,
}

impl Default for DenoisingConfig {
    fn default() -> Self {
        Self {
            len: 8,
            scale: 0.7,
            rho: 0.9,
            noise_std: 0.5,
        }
    }
}

/// Conditional denoising task with a Gaussian posterior.
#[derive(Debug, Clone)]
pub struct DenoisingTask {
    config: DenoisingConfig,
    /// Cholesky factor of the clean covariance, for sampling.
    chol: DMatrix<f64>,
    /// Posterior covariance eigenvectors and eigenvalues.
    post_vecs: DMatrix<f64>,
    post_vals: DVector<f64>,
    /// `Sigma_post / tau^2`, mapping `c` to the posterior mean.
    gain: DMatrix<f64>,
}

impl DenoisingTask {
    pub fn new(config: DenoisingConfig) -> Result<Self> {
        let DenoisingConfig {
            len,
            scale,
            rho,
            noise_std,
        } = config;
        if len == 0 || !(scale > 0.0) || !(rho.abs() < 1.0) || !(noise_std > 0.0) {
            return Err(Error::config(
                "denoising task needs len >= 1, scale > 0, |rho| < 1, noise_std > 0",
            ));
        }
        let prior = DMatrix::from_fn(len, len, |i, j| {
            scale * scale * rho.powi((i as i32 - j as i32).abs())
        });
        let chol = prior
            .clone()
            .cholesky()
            .ok_or_else(|| Error::config("clean covariance is not positive definite"))?
            .l();
        let prior_inv = prior
            .try_inverse()
            .ok_or_else(|| Error::config("clean covariance is singular"))?;
        let precision = prior_inv + DMatrix::identity(len, len) / (noise_std * noise_std);
        let post = precision
            .try_inverse()
            .ok_or_else(|| Error::config("posterior precision is singular"))?;
        let post = (&post + post.transpose()) * 0.5;
        let gain = &post / (noise_std * noise_std);
        let eig = SymmetricEigen::new(post);
        Ok(Self {
            config,
            chol,
            post_vecs: eig.eigenvectors,
            post_vals: eig.eigenvalues,
            gain,
        })
    }

    pub fn config(&self) -> &DenoisingConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.config.len
    }

    /// Clean window and its noisy observation.
    pub fn draw_pair<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let n = self.config.len;
        let w = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let x0 = &self.chol * w;
        let c: Vec<f64> = x0
            .iter()
            .map(|v| {
                let e: f64 = StandardNormal.sample(rng);
                v + self.config.noise_std * e
            })
            .collect();
        (x0.iter().copied().collect(), c)
    }

    /// `E[x0 | c]`, the MMSE estimate.
    pub fn posterior_mean(&self, c: &[f64]) -> Vec<f64> {
        (&self.gain * DVector::from_column_slice(c))
            .iter()
            .copied()
            .collect()
    }

    /// Mean posterior variance per sample, i.e. the MMSE per sample.
    pub fn posterior_variance(&self) -> f64 {
        self.post_vals.mean()
    }

    /// Mean prior variance per sample.
    pub fn signal_variance(&self) -> f64 {
        self.config.scale * self.config.scale
    }

    /// Exact `grad_x log p_sigma(x | c)`.
    pub fn posterior_score(&self, x: &[f64], c: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let n = self.config.len;
        if x.len() != n || c.len() != n {
            return Err(Error::config(format!(
                "denoising task expects windows of length {n}"
            )));
        }
        if !(sigma > 0.0) {
            return Err(Error::domain(format!("sigma must be > 0, got {sigma}")));
        }
        let mean = &self.gain * DVector::from_column_slice(c);
        let diff = DVector::from_column_slice(x) - mean;
        let mut proj = self.post_vecs.transpose() * diff;
        for (p, lam) in proj.iter_mut().zip(self.post_vals.iter()) {
            *p /= lam + sigma * sigma;
        }
        Ok((-(&self.post_vecs * proj)).iter().copied().collect())
    }

    /// The exact score as a [`ScoreFunction`].
    pub fn oracle(&self) -> TaskOracle<'_> {
        TaskOracle(self)
    }

    /// A fixed evaluation set of `(clean, observed)` pairs.
    pub fn eval_set(&self, n: usize, seed_: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut rng = seed::rng(seed_);
        (0..n).map(|_| self.draw_pair(&mut rng)).collect()
    }
}

pub struct TaskOracle<'a>(&'a DenoisingTask);

impl ScoreFunction for TaskOracle<'_> {
    fn score(&self, x: &[f64], cond: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.0.posterior_score(x, cond, sigma)
    }
}

impl TrainingSource for DenoisingTask {
    fn x_dim(&self) -> usize {
        self.config.len
    }

    fn cond_dim(&self) -> usize {
        self.config.len
    }

    fn draw(&self, rng: &mut seed::Rng) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok(self.draw_pair(rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_score_error_is_zero() {
        let prior = GmmPrior::two_mode_demo();
        let e = score_error(
            &prior,
            &prior,
            &NoiseSchedule::default(),
            ErrorGrid::default(),
        )
        .unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn zero_estimate_has_unit_error() {
        let prior = GmmPrior::two_mode_demo();
        let zero = |x: &[f64], _: &[f64], _: f64| vec![0.0; x.len()];
        let e = score_error(
            &zero,
            &prior,
            &NoiseSchedule::default(),
            ErrorGrid::default(),
        )
        .unwrap();
        assert!((e - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scalar_posterior_matches_textbook_formula() {
        // len 1: prior var s^2, noise var tau^2.
        let task = DenoisingTask::new(DenoisingConfig {
            len: 1,
            scale: 1.5,
            rho: 0.0,
            noise_std: 0.5,
        })
        .unwrap();
        let (s2, t2) = (2.25, 0.25);
        let post_var = s2 * t2 / (s2 + t2);
        assert!((task.posterior_variance() - post_var).abs() < 1e-14);
        let c = 1.3;
        let mean = s2 / (s2 + t2) * c;
        assert!((task.posterior_mean(&[c])[0] - mean).abs() < 1e-14);
        let sigma = 0.3;
        let x = 0.2;
        let want = -(x - mean) / (post_var + sigma * sigma);
        assert!((task.posterior_score(&[x], &[c], sigma).unwrap()[0] - want).abs() < 1e-13);
    }

    #[test]
    fn posterior_score_matches_finite_differences() {
        // log p_sigma(x|c) = -1/2 (x-m)^T (P + sigma^2)^-1 (x-m) + const; its
        // gradient is linear, so a central difference of the quadratic form
        // is exact up to rounding.
        let task = DenoisingTask::new(DenoisingConfig::default()).unwrap();
        let mut rng = seed::rng(9);
        let (_, c) = task.draw_pair(&mut rng);
        let sigma = 0.2;
        let n = task.len();
        let m = task.posterior_mean(&c);
        let cov =
            &task.post_vecs * DMatrix::from_diagonal(&task.post_vals) * task.post_vecs.transpose()
                + DMatrix::identity(n, n) * sigma * sigma;
        let prec = cov.try_inverse().unwrap();
        let logp = |x: &[f64]| {
            let d = DVector::from_iterator(n, x.iter().zip(&m).map(|(a, b)| a - b));
            -0.5 * (d.transpose() * &prec * &d)[(0, 0)]
        };
        let x: Vec<f64> = (0..n).map(|i| 0.1 * i as f64 - 0.3).collect();
        let s = task.posterior_score(&x, &c, sigma).unwrap();
        for i in 0..n {
            let h = 1e-5;
            let mut up = x.clone();
            up[i] += h;
            let mut down = x.clone();
            down[i] -= h;
            let fd = (logp(&up) - logp(&down)) / (2.0 * h);
            assert!(
                (fd - s[i]).abs() < 1e-6 * (1.0 + s[i].abs()),
                "{fd} vs {}",
                s[i]
            );
        }
    }

    #[test]
    fn empirical_posterior_mean_error_matches_mmse() {
        let task = DenoisingTask::new(DenoisingConfig::default()).unwrap();
        let pairs = task.eval_set(20_000, 4);
        let mse: f64 = pairs
            .iter()
            .map(|(x0, c)| {
                let m = task.posterior_mean(c);
                x0.iter().zip(&m).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / task.len() as f64
            })
            .sum::<f64>()
            / pairs.len() as f64;
        let want = task.posterior_variance();
        assert!((mse - want).abs() < 0.03 * want, "{mse} vs {want}");
    }
}
