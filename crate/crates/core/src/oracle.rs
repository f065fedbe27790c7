//! Closed-form perturbed scores of diagonal Gaussian mixtures.
//!
//! Convolving a mixture with isotropic noise `N(0, sigma^2 I)` keeps it a
//! mixture: each component variance grows by `sigma^2`. Its score is therefore
//! available in closed form, which makes these priors the ground truth for
//! checking samplers and trained networks.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::ScoreFunction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmPrior {
    weights: Vec<f64>,
    /// Component means, one row of length `dim` per component.
    means: Vec<Vec<f64>>,
    /// Diagonal variances, same layout as `means`.
    variances: Vec<Vec<f64>>,
}

impl GmmPrior {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let prior = Self {
            weights,
            means,
            variances,
        };
        prior.validate()?;
        Ok(prior)
    }

    /// One-dimensional mixture with scalar means and variances.
    pub fn one_dim(weights: &[f64], means: &[f64], variances: &[f64]) -> Result<Self> {
        Self::new(
            weights.to_vec(),
            means.iter().map(|&m| vec![m]).collect(),
            variances.iter().map(|&v| vec![v]).collect(),
        )
    }

    /// The two-mode 1-D task used across tests and the CLI demo:
    /// weights 0.3/0.7, means -2/+2, variances 0.1.
    pub fn two_mode_demo() -> Self {
        Self::one_dim(&[0.3, 0.7], &[-2.0, 2.0], &[0.1, 0.1]).expect("valid demo prior")
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(Error::config("empty mixture"));
        }
        if self.means.len() != k || self.variances.len() != k {
            return Err(Error::config(
                "mixture weights, means and variances differ in length",
            ));
        }
        let dim = self.means[0].len();
        if dim == 0 {
            return Err(Error::config("mixture dimension must be >= 1"));
        }
        for (m, v) in self.means.iter().zip(&self.variances) {
            if m.len() != dim || v.len() != dim {
                return Err(Error::config("mixture components differ in dimension"));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::config("non-finite component mean"));
            }
            if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::config("component variances must be positive"));
            }
        }
        if self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::config("mixture weights must be positive"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// Overall data variance averaged over dimensions.
    pub fn total_variance(&self) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for j in 0..d {
            let mean: f64 = self
                .weights
                .iter()
                .zip(&self.means)
                .map(|(w, m)| w * m[j])
                .sum();
            let second: f64 = self
                .weights
                .iter()
                .zip(self.means.iter().zip(&self.variances))
                .map(|(w, (m, v))| w * (v[j] + m[j] * m[j]))
                .sum();
            acc += second - mean * mean;
        }
        acc / d as f64
    }

    /// Same mixture with every mean shifted by `delta`.
    pub fn translated(&self, delta: &[f64]) -> Result<Self> {
        if delta.len() != self.dim() {
            return Err(Error::config("translation has the wrong dimension"));
        }
        let means = self
            .means
            .iter()
            .map(|m| m.iter().zip(delta).map(|(a, b)| a + b).collect())
            .collect();
        Self::new(self.weights.clone(), means, self.variances.clone())
    }

    fn check(&self, x: &[f64], sigma: f64) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::config(format!(
                "point has dimension {}, mixture has {}",
                x.len(),
                self.dim()
            )));
        }
        if !(sigma >= 0.0) {
            return Err(Error::domain(format!("sigma must be >= 0, got {sigma}")));
        }
        Ok(())
    }

    /// Per-component log joint `ln w_i + ln N(x; m_i, v_i + sigma^2)`.
    fn component_logs(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let s2 = sigma * sigma;
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(w, (m, v))| {
                let mut lp = w.ln();
                for j in 0..x.len() {
                    let var = v[j] + s2;
                    let diff = x[j] - m[j];
                    lp -= 0.5 * (2.0 * PI * var).ln() + 0.5 * diff * diff / var;
                }
                lp
            })
            .collect()
    }

    /// `log p_sigma(x)` of the mixture convolved with `N(0, sigma^2 I)`.
    pub fn log_density(&self, x: &[f64], sigma: f64) -> Result<f64> {
        self.check(x, sigma)?;
        Ok(log_sum_exp(&self.component_logs(x, sigma)))
    }

    /// `grad_x log p_sigma(x)`.
    pub fn perturbed_score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.check(x, sigma)?;
        let logs = self.component_logs(x, sigma);
        let norm = log_sum_exp(&logs);
        let s2 = sigma * sigma;
        let mut score = vec![0.0; x.len()];
        for (i, lp) in logs.iter().enumerate() {
            let resp = (lp - norm).exp();
            if resp == 0.0 {
                continue;
            }
            for j in 0..x.len() {
                score[j] -= resp * (x[j] - self.means[i][j]) / (self.variances[i][j] + s2);
            }
        }
        Ok(score)
    }

    /// Posterior component probabilities of `x` under the perturbed mixture.
    pub fn responsibilities(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.check(x, sigma)?;
        let logs = self.component_logs(x, sigma);
        let norm = log_sum_exp(&logs);
        Ok(logs.iter().map(|lp| (lp - norm).exp()).collect())
    }

    /// Index of the component whose mean is closest to `x` (Euclidean).
    pub fn nearest_component(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, m) in self.means.iter().enumerate() {
            let d: f64 = m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    /// Draws one sample; returns it with the component index.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, usize) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = i;
                break;
            }
        }
        let x = self.means[comp]
            .iter()
            .zip(&self.variances[comp])
            .map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect();
        (x, comp)
    }
}

impl ScoreFunction for GmmPrior {
    fn score(&self, x: &[f64], _cond: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.perturbed_score(x, sigma)
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
