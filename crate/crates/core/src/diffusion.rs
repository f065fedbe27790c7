//! Denoising score matching and consistent annealed Langevin sampling for the
//! variance-exploding diffusion.
//!
//! Training minimizes, for `t ~ U(0, 1)` and `z ~ N(0, I)`,
//!
//! ```text
//! L = 1/2 * || sigma_t * S(x0 + sigma_t * z, c, sigma_t) + z ||^2
//! ```
//!
//! which is the denoising objective weighted by `lambda_t = sigma_t^2`.
//! Sampling starts from `x_N = sigma_N * z`, runs
//!
//! ```text
//! x_{n-1} = x_n + eta * sigma_n^2 * S(x_n, c, sigma_n) + beta * sigma_{n-1} * z
//! ```
//!
//! for `n = N, ..., 2`, and finishes with the empirically denoised sample
//! `x0 + sigma_1^2 * S(x0, c, sigma_1)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::schedule::{NoiseSchedule, SamplingPlan};
use crate::seed;

/// Estimate of `grad_x log p_sigma(x | c)`.
///
/// `cond` is an opaque conditioning vector; an empty slice means
/// "unconditional".
pub trait ScoreFunction {
    fn score(&self, x: &[f64], cond: &[f64], sigma: f64) -> Result<Vec<f64>>;
}

impl<F> ScoreFunction for F
where
    F: Fn(&[f64], &[f64], f64) -> Vec<f64>,
{
    fn score(&self, x: &[f64], cond: &[f64], sigma: f64) -> Result<Vec<f64>> {
        Ok(self(x, cond, sigma))
    }
}

/// Evaluates `score_fn` and enforces the shape and finiteness contract.
pub(crate) fn checked_score<S: ScoreFunction + ?Sized>(
    score_fn: &S,
    x: &[f64],
    cond: &[f64],
    sigma: f64,
    t: f64,
) -> Result<Vec<f64>> {
    let s = score_fn.score(x, cond, sigma)?;
    if s.len() != x.len() {
        return Err(Error::config(format!(
            "score has length {} for input of length {}",
            s.len(),
            x.len()
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "score output".into(),
            sigma,
            t,
        });
    }
    Ok(s)
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Forward perturbation `x_t = x0 + sigma * z`; returns `(x_t, z)`.
pub fn perturb<R: Rng + ?Sized>(
    x0: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(sigma > 0.0) {
        return Err(Error::domain(format!(
            "perturbation sigma must be > 0, got {sigma}"
        )));
    }
    let z = standard_normal(rng, x0.len());
    let xt = x0.iter().zip(&z).map(|(x, n)| x + sigma * n).collect();
    Ok((xt, z))
}

/// Single-sample denoising score matching loss; the caller averages over a
/// batch. `t` and `z` are drawn from `rng` per call.
pub fn dsm_loss<S, R>(
    score_fn: &S,
    x0: &[f64],
    cond: &[f64],
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64>
where
    S: ScoreFunction + ?Sized,
    R: Rng + ?Sized,
{
    let t: f64 = rng.random();
    let sigma = schedule.sigma_at(t)?;
    let (_, z) = perturb(x0, sigma, rng)?;
    dsm_loss_at(score_fn, x0, cond, sigma, &z, t)
}

/// The loss for fixed `sigma` and noise `z`. `t` is only used in diagnostics.
pub fn dsm_loss_at<S: ScoreFunction + ?Sized>(
    score_fn: &S,
    x0: &[f64],
    cond: &[f64],
    sigma: f64,
    z: &[f64],
    t: f64,
) -> Result<f64> {
    let xt: Vec<f64> = x0.iter().zip(z).map(|(x, n)| x + sigma * n).collect();
    let s = checked_score(score_fn, &xt, cond, sigma, t)?;
    let loss = 0.5
        * s.iter()
            .zip(z)
            .map(|(si, zi)| {
                let r = sigma * si + zi;
                r * r
            })
            .sum::<f64>();
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "dsm loss".into(),
            sigma,
            t,
        });
    }
    Ok(loss)
}

/// Tweedie-style final correction `x + sigma0^2 * S(x, c, sigma0)`.
pub fn denoise_final<S: ScoreFunction + ?Sized>(
    score_fn: &S,
    x: &[f64],
    cond: &[f64],
    sigma0: f64,
) -> Result<Vec<f64>> {
    let s = checked_score(score_fn, x, cond, sigma0, 0.0)?;
    Ok(x.iter()
        .zip(&s)
        .map(|(xi, si)| xi + sigma0 * sigma0 * si)
        .collect())
}

/// Iterate of the annealed sampler.
#[derive(Debug, Clone)]
pub struct DiffusionState {
    /// Current iterate `x_{t_n}`.
    pub x: Vec<f64>,
    /// 1-based step index `n`.
    pub step_index: usize,
    pub rng_seed: u64,
    rng: seed::Rng,
}

/// Step-wise driver for consistent annealed sampling.
pub struct LangevinSampler<'a, S: ?Sized> {
    score_fn: &'a S,
    cond: &'a [f64],
    plan: &'a SamplingPlan,
}

impl<'a, S: ScoreFunction + ?Sized> LangevinSampler<'a, S> {
    pub fn new(score_fn: &'a S, cond: &'a [f64], plan: &'a SamplingPlan) -> Self {
        Self {
            score_fn,
            cond,
            plan,
        }
    }

    /// `x_{t_N} = sigma_{t_N} * z`.
    pub fn start(&self, dim: usize, rng_seed: u64) -> DiffusionState {
        let mut rng = seed::rng(rng_seed);
        let sigma = self.plan.sigma_max();
        let x = standard_normal(&mut rng, dim)
            .into_iter()
            .map(|z| sigma * z)
            .collect();
        DiffusionState {
            x,
            step_index: self.plan.n_steps,
            rng_seed,
            rng,
        }
    }

    /// One update `x_{t_n} -> x_{t_{n-1}}`. Requires `step_index >= 2`.
    pub fn step(&self, state: &mut DiffusionState) -> Result<()> {
        let n = state.step_index;
        if n < 2 {
            return Err(Error::Usage("sampler already reached n = 1".into()));
        }
        let plan = self.plan;
        let sigma = plan.sigma(n);
        let sigma_next = plan.sigma(n - 1);
        let s = checked_score(self.score_fn, &state.x, self.cond, sigma, plan.time(n))?;
        let drift = plan.eta * sigma * sigma;
        let noise = plan.beta * sigma_next;
        for (xi, si) in state.x.iter_mut().zip(&s) {
            *xi += drift * si;
        }
        if plan.beta > 0.0 {
            for xi in state.x.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut state.rng);
                *xi += noise * z;
            }
        }
        state.step_index = n - 1;
        if state.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIterate { step: n - 1 });
        }
        Ok(())
    }

    /// Empirical denoising at `n = 1`.
    pub fn finish(&self, state: DiffusionState) -> Result<Vec<f64>> {
        if state.step_index != 1 {
            return Err(Error::Usage(format!(
                "finish called at step {}, expected 1",
                state.step_index
            )));
        }
        let out = denoise_final(self.score_fn, &state.x, self.cond, self.plan.sigma_min())?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIterate { step: 0 });
        }
        Ok(out)
    }
}

/// Full sampling run; a pure function of its arguments and `seed`.
pub fn langevin_sample<S: ScoreFunction + ?Sized>(
    score_fn: &S,
    cond: &[f64],
    plan: &SamplingPlan,
    dim: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let sampler = LangevinSampler::new(score_fn, cond, plan);
    let mut state = sampler.start(dim, seed);
    while state.step_index > 1 {
        sampler.step(&mut state)?;
    }
    sampler.finish(state)
}

/// Seed used for realization `index` of a run seeded with `seed`.
pub fn realization_seed(seed: u64, index: usize) -> u64 {
    seed::derive(seed, index as u64)
}

/// `count` independent samples sharing `cond`, realization `i` seeded with
/// [`realization_seed`]`(seed, i)`. Runs in parallel; output order is fixed.
pub fn sample_many<S: ScoreFunction + Sync + ?Sized>(
    score_fn: &S,
    cond: &[f64],
    plan: &SamplingPlan,
    dim: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    (0..count)
        .into_par_iter()
        .map(|i| langevin_sample(score_fn, cond, plan, dim, realization_seed(seed, i)))
        .collect()
}

/// Mean of `n_realizations` samples drawn with the same conditioning.
pub fn enhance_expectation<S: ScoreFunction + Sync + ?Sized>(
    score_fn: &S,
    cond: &[f64],
    plan: &SamplingPlan,
    dim: usize,
    n_realizations: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_realizations == 0 {
        return Err(Error::config("n_realizations must be >= 1"));
    }
    let samples = sample_many(score_fn, cond, plan, dim, n_realizations, seed)?;
    let mut mean = vec![0.0; dim];
    for s in &samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    let inv = 1.0 / n_realizations as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    Ok(mean)
}
