//! Adam training of a [`ScoreNet`] on the denoising objective.
//!
//! Each iteration draws its whole mini-batch from a stream derived from
//! `(seed, iteration)`, so a run resumed from a checkpoint continues exactly
//! where the uninterrupted run would have been. Per-example gradients are
//! computed in parallel over fixed chunks and summed in chunk order, which
//! keeps results independent of the thread count.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::GmmPrior;
use crate::schedule::NoiseSchedule;
use crate::scorenet::ScoreNet;
use crate::seed;

const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub peak_lr: f64,
    pub start_lr: f64,
    /// Fraction of the run spent in linear warm-up.
    pub warmup_fraction: f64,
    /// Decoupled weight decay, applied to weights only.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            peak_lr: 2e-4,
            start_lr: 1.6e-6,
            warmup_fraction: 0.05,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(finite_nonneg(self.peak_lr)
            && finite_nonneg(self.start_lr)
            && finite_nonneg(self.weight_decay))
        {
            return Err(Error::config(
                "learning rates and weight decay must be finite and >= 0",
            ));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::config("warmup_fraction must lie in [0, 1]"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0)
        {
            return Err(Error::config("Adam needs 0 <= beta < 1 and eps > 0"));
        }
        Ok(())
    }

    pub fn warmup_steps(&self, total_steps: usize) -> usize {
        (self.warmup_fraction * total_steps as f64).round() as usize
    }

    /// Learning rate at 0-based `step`: linear from `start_lr` to `peak_lr`
    /// during warm-up, then cosine decay to zero at `total_steps`.
    pub fn learning_rate(&self, step: usize, total_steps: usize) -> f64 {
        let warm = self.warmup_steps(total_steps);
        if step < warm {
            return self.start_lr + (self.peak_lr - self.start_lr) * step as f64 / warm as f64;
        }
        let span = total_steps.saturating_sub(warm).max(1) as f64;
        let progress = ((step - warm) as f64 / span).min(1.0);
        0.5 * self.peak_lr * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Adam with decoupled, masked weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: OptimizerConfig,
    pub total_steps: usize,
    /// Number of updates applied so far.
    pub step: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(config: OptimizerConfig, total_steps: usize, n_params: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            total_steps,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        })
    }

    /// Applies one update; returns the learning rate used.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], decay_mask: &[bool]) -> f64 {
        let c = &self.config;
        let lr = c.learning_rate(self.step, self.total_steps);
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
            if decay_mask[i] {
                params[i] -= lr * c.weight_decay * params[i];
            }
        }
        lr
    }
}

/// Supplies clean `(x0, c)` training pairs.
pub trait TrainingSource: Sync {
    fn x_dim(&self) -> usize;
    fn cond_dim(&self) -> usize;
    fn draw(&self, rng: &mut seed::Rng) -> Result<(Vec<f64>, Vec<f64>)>;
}

impl TrainingSource for GmmPrior {
    fn x_dim(&self) -> usize {
        self.dim()
    }

    fn cond_dim(&self) -> usize {
        0
    }

    fn draw(&self, rng: &mut seed::Rng) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.sample(rng).0, Vec::new()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        self.optimizer.validate()
    }
}

/// One denoising example with its noise draw.
#[derive(Debug, Clone)]
pub struct Example {
    pub x0: Vec<f64>,
    pub cond: Vec<f64>,
    pub sigma: f64,
    pub z: Vec<f64>,
}

/// Mean loss and mean gradient over `batch`.
pub fn batch_gradient(net: &ScoreNet, batch: &[Example]) -> Result<(f64, Vec<f64>)> {
    let n = net.n_params();
    let partials = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; n];
            let mut loss = 0.0;
            for ex in chunk {
                loss += net.loss_and_grad(&ex.x0, &ex.cond, ex.sigma, &ex.z, &mut grad)?;
            }
            Ok((loss, grad))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = vec![0.0; n];
    let mut loss = 0.0;
    for (l, g) in partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

/// Draws the mini-batch of `iteration`; `t ~ U(0, 1)` independently per
/// example.
pub fn draw_batch<S: TrainingSource + ?Sized>(
    source: &S,
    schedule: &NoiseSchedule,
    batch_size: usize,
    seed: u64,
    iteration: usize,
) -> Result<Vec<Example>> {
    let mut rng = seed::child_rng(seed, iteration as u64);
    (0..batch_size)
        .map(|_| {
            let (x0, cond) = source.draw(&mut rng)?;
            let t: f64 = rng.random();
            let sigma = schedule.sigma_at(t)?;
            let z = (0..x0.len())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            Ok(Example { x0, cond, sigma, z })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: ScoreNet,
    pub optimizer: Adam,
    pub schedule: NoiseSchedule,
    pub config: TrainConfig,
    pub seed: u64,
    decay_mask: Vec<bool>,
}

/// Per-iteration progress passed to the training callback.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
}

impl Trainer {
    pub fn new(
        net: ScoreNet,
        schedule: NoiseSchedule,
        config: TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        schedule.validate()?;
        let optimizer = Adam::new(config.optimizer.clone(), config.iterations, net.n_params())?;
        Ok(Self::with_optimizer(net, optimizer, schedule, config, seed))
    }

    /// Resumes from saved optimizer state.
    pub fn with_optimizer(
        net: ScoreNet,
        optimizer: Adam,
        schedule: NoiseSchedule,
        config: TrainConfig,
        seed: u64,
    ) -> Self {
        let decay_mask = net.decay_mask();
        Self {
            net,
            optimizer,
            schedule,
            config,
            seed,
            decay_mask,
        }
    }

    pub fn iteration(&self) -> usize {
        self.optimizer.step
    }

    pub fn is_done(&self) -> bool {
        self.iteration() >= self.config.iterations
    }

    pub fn step<S: TrainingSource + ?Sized>(&mut self, source: &S) -> Result<StepInfo> {
        if source.x_dim() != self.net.config().x_dim
            || source.cond_dim() != self.net.config().cond_dim
        {
            return Err(Error::config(
                "training source shape does not match the network",
            ));
        }
        let iteration = self.iteration();
        let batch = draw_batch(
            source,
            &self.schedule,
            self.config.batch_size,
            self.seed,
            iteration,
        )?;
        let (loss, grad) = batch_gradient(&self.net, &batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration });
        }
        let lr = self
            .optimizer
            .update(self.net.params_mut(), &grad, &self.decay_mask);
        Ok(StepInfo {
            iteration,
            loss,
            lr,
        })
    }

    /// Trains until `until` iterations have been applied (capped at the
    /// configured total); returns the loss trace of this call.
    pub fn run<S, F>(&mut self, source: &S, until: usize, mut on_step: F) -> Result<Vec<f64>>
    where
        S: TrainingSource + ?Sized,
        F: FnMut(&StepInfo),
    {
        let until = until.min(self.config.iterations);
        let mut trace = Vec::with_capacity(until.saturating_sub(self.iteration()));
        while self.iteration() < until {
            let info = self.step(source)?;
            on_step(&info);
            trace.push(info.loss);
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorenet::NetConfig;

    #[test]
    fn lr_schedule_shape() {
        let c = OptimizerConfig::default();
        let total = 1000;
        assert_eq!(c.warmup_steps(total), 50);
        assert_eq!(c.learning_rate(0, total), 1.6e-6);
        assert!((c.learning_rate(50, total) - 2e-4).abs() < 1e-18);
        assert!((c.learning_rate(25, total) - (1.6e-6 + 0.5 * (2e-4 - 1.6e-6))).abs() < 1e-18);
        assert!(c.learning_rate(999, total) < 1e-8);
        let mid = c.learning_rate(50 + 475, total);
        assert!((mid - 1e-4).abs() < 1e-12);
        for s in 50..999 {
            assert!(c.learning_rate(s + 1, total) <= c.learning_rate(s, total));
        }
    }

    #[test]
    fn million_step_run_warms_up_for_fifty_thousand_steps() {
        assert_eq!(OptimizerConfig::default().warmup_steps(1_000_000), 50_000);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let config = OptimizerConfig {
            warmup_fraction: 0.0,
            peak_lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut adam = Adam::new(config, 10, 2).unwrap();
        let mut p = vec![1.0, -1.0];
        adam.update(&mut p, &[3.0, -0.5], &[true, true]);
        // Bias-corrected first step is lr * sign(g) up to eps.
        assert!((p[0] - 0.9).abs() < 1e-8);
        assert!((p[1] + 0.9).abs() < 1e-8);
    }

    #[test]
    fn decay_only_touches_masked_params() {
        let config = OptimizerConfig {
            warmup_fraction: 0.0,
            peak_lr: 0.5,
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut adam = Adam::new(config, 1_000_000, 2).unwrap();
        let mut p = vec![2.0, 2.0];
        adam.update(&mut p, &[0.0, 0.0], &[true, false]);
        assert!((p[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-9);
        assert_eq!(p[1], 2.0);
    }

    #[test]
    fn batch_gradient_is_thread_count_independent() {
        let mut rng = seed::rng(3);
        let net = ScoreNet::new(
            NetConfig {
                hidden: vec![8, 8],
                embed_dim: 4,
                n_pairs: 4,
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap();
        let prior = GmmPrior::two_mode_demo();
        let batch = draw_batch(&prior, &NoiseSchedule::default(), 37, 5, 0).unwrap();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| batch_gradient(&net, &batch).unwrap());
        let b = four.install(|| batch_gradient(&net, &batch).unwrap());
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert!(a
            .1
            .iter()
            .zip(&b.1)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
