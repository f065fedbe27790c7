//! Mixture density network heads.
//!
//! A head predicts, per frame, a `k`-component diagonal Gaussian mixture over
//! a `d`-dimensional target: mixing logits, means and log-scales. The
//! negative log-likelihood is evaluated in log space,
//!
//! ```text
//! -log sum_i alpha_i N(y; m_i, diag(s_i^2)),   alpha = softmax(logits), s = exp(log_scale)
//! ```
//!
//! and its gradient w.r.t. all three parameter sets is exact.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::oracle::log_sum_exp;
use crate::train::{Adam, OptimizerConfig};

pub const DEFAULT_COMPONENTS: usize = 3;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Mixture parameters for one frame. Means and log-scales are stored
/// component-major: entry `(i, j)` lives at `i * d + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MdnParams {
    k: usize,
    d: usize,
    pub logits: Vec<f64>,
    pub means: Vec<f64>,
    pub log_scales: Vec<f64>,
}

/// Gradient of the NLL, shaped like [`MdnParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MdnGrad {
    pub logits: Vec<f64>,
    pub means: Vec<f64>,
    pub log_scales: Vec<f64>,
}

impl MdnParams {
    pub fn new(
        k: usize,
        d: usize,
        logits: Vec<f64>,
        means: Vec<f64>,
        log_scales: Vec<f64>,
    ) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(Error::config("MDN needs k >= 1 and d >= 1"));
        }
        if logits.len() != k || means.len() != k * d || log_scales.len() != k * d {
            return Err(Error::config(format!(
                "MDN with k={k}, d={d} expects {k} logits and {} means/log-scales",
                k * d
            )));
        }
        Ok(Self {
            k,
            d,
            logits,
            means,
            log_scales,
        })
    }

    /// Splits a raw head output `[logits | means | log_scales]`.
    pub fn from_flat(k: usize, d: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != k + 2 * k * d {
            return Err(Error::config(format!(
                "flat MDN output must have length {}",
                k + 2 * k * d
            )));
        }
        Self::new(
            k,
            d,
            flat[..k].to_vec(),
            flat[k..k + k * d].to_vec(),
            flat[k + k * d..].to_vec(),
        )
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Mixing weights `softmax(logits)`.
    pub fn weights(&self) -> Vec<f64> {
        let lse = log_sum_exp(&self.logits);
        self.logits.iter().map(|l| (l - lse).exp()).collect()
    }

    pub fn scales(&self) -> Vec<f64> {
        self.log_scales.iter().map(|v| v.exp()).collect()
    }

    fn check_target(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.d {
            return Err(Error::config(format!(
                "target has dim {}, MDN has d={}",
                y.len(),
                self.d
            )));
        }
        Ok(())
    }

    /// `log alpha_i + log N(y; m_i, s_i)` for each component.
    fn joint_log(&self, y: &[f64]) -> Vec<f64> {
        let lse = log_sum_exp(&self.logits);
        (0..self.k)
            .map(|i| {
                let mut acc = self.logits[i] - lse;
                for j in 0..self.d {
                    let ls = self.log_scales[i * self.d + j];
                    let u = (y[j] - self.means[i * self.d + j]) * (-ls).exp();
                    acc -= HALF_LN_2PI + ls + 0.5 * u * u;
                }
                acc
            })
            .collect()
    }
}

pub fn nll(params: &MdnParams, y: &[f64]) -> Result<f64> {
    params.check_target(y)?;
    Ok(-log_sum_exp(&params.joint_log(y)))
}

pub fn nll_grad(params: &MdnParams, y: &[f64]) -> Result<(f64, MdnGrad)> {
    params.check_target(y)?;
    let (k, d) = (params.k, params.d);
    let joint = params.joint_log(y);
    let lse = log_sum_exp(&joint);
    let alpha = params.weights();
    let mut g = MdnGrad {
        logits: vec![0.0; k],
        means: vec![0.0; k * d],
        log_scales: vec![0.0; k * d],
    };
    for i in 0..k {
        let r = (joint[i] - lse).exp();
        g.logits[i] = alpha[i] - r;
        for j in 0..d {
            let idx = i * d + j;
            let inv_s = (-params.log_scales[idx]).exp();
            let u = (y[j] - params.means[idx]) * inv_s;
            g.means[idx] = -r * u * inv_s;
            g.log_scales[idx] = r * (1.0 - u * u);
        }
    }
    Ok((-lse, g))
}

/// Mixture mean `sum_i alpha_i m_i`.
pub fn mean(params: &MdnParams) -> Vec<f64> {
    let alpha = params.weights();
    (0..params.d)
        .map(|j| {
            (0..params.k)
                .map(|i| alpha[i] * params.means[i * params.d + j])
                .sum()
        })
        .collect()
}

/// Categorical draw over the weights, then a diagonal Gaussian draw.
pub fn sample<R: Rng + ?Sized>(params: &MdnParams, rng: &mut R) -> Vec<f64> {
    let alpha = params.weights();
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut comp = params.k - 1;
    for (i, a) in alpha.iter().enumerate() {
        acc += a;
        if u < acc {
            comp = i;
            break;
        }
    }
    (0..params.d)
        .map(|j| {
            let idx = comp * params.d + j;
            let z: f64 = StandardNormal.sample(rng);
            params.means[idx] + params.log_scales[idx].exp() * z
        })
        .collect()
}

/// First-order frame differences with edge replication: `delta_0 = 0`,
/// `delta_t = y_t - y_{t-1}`.
pub fn deltas(frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
    frames
        .iter()
        .enumerate()
        .map(|(t, y)| {
            let prev = &frames[t.saturating_sub(1)];
            y.iter().zip(prev).map(|(a, b)| a - b).collect()
        })
        .collect()
}

/// Appends the deltas of each frame to the frame itself.
pub fn with_deltas(frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
    frames
        .iter()
        .zip(deltas(frames))
        .map(|(y, dy)| y.iter().copied().chain(dy).collect())
        .collect()
}

/// One target type (e.g. mel+deltas) with per-frame mixture predictions.
#[derive(Debug, Clone)]
pub struct TargetGroup {
    pub name: String,
    pub targets: Vec<Vec<f64>>,
    pub params: Vec<MdnParams>,
}

/// Mean per-frame NLL of a group.
pub fn group_loss(group: &TargetGroup) -> Result<f64> {
    if group.targets.len() != group.params.len() {
        return Err(Error::config(format!(
            "group {} has {} target frames but {} parameter frames",
            group.name,
            group.targets.len(),
            group.params.len()
        )));
    }
    if group.targets.is_empty() {
        return Err(Error::config(format!("group {} is empty", group.name)));
    }
    let mut total = 0.0;
    for (p, y) in group.params.iter().zip(&group.targets) {
        total += nll(p, y)?;
    }
    Ok(total / group.targets.len() as f64)
}

/// Sum of the feature-group losses plus the waveform-group loss.
pub fn auxiliary_loss(
    feature_groups: &[TargetGroup],
    waveform: Option<&TargetGroup>,
) -> Result<f64> {
    let mut total = 0.0;
    for g in feature_groups.iter().chain(waveform) {
        total += group_loss(g)?;
    }
    Ok(total)
}

/// Waveform samples as a per-sample `d = 1` target sequence.
pub fn waveform_targets(samples: &[f64]) -> Vec<Vec<f64>> {
    samples.iter().map(|&v| vec![v]).collect()
}

/// Linear MDN head: `flat = W h + b`, split as `[logits | means | log_scales]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MdnHead {
    pub k: usize,
    pub d: usize,
    pub n_in: usize,
    /// Row-major `(k + 2kd) x n_in`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl MdnHead {
    pub fn n_out(k: usize, d: usize) -> usize {
        k + 2 * k * d
    }

    /// Small random weights; bias initialized from the targets so that the
    /// component means sit at spread-out quantiles and the scales match the
    /// per-dimension spread.
    pub fn init<R: Rng + ?Sized>(
        k: usize,
        d: usize,
        n_in: usize,
        targets: &[Vec<f64>],
        rng: &mut R,
    ) -> Result<Self> {
        if targets.is_empty() || targets.iter().any(|t| t.len() != d) {
            return Err(Error::config(
                "MDN init needs non-empty targets of dimension d",
            ));
        }
        let n_out = Self::n_out(k, d);
        let bound = if n_in > 0 {
            0.1 / (n_in as f64).sqrt()
        } else {
            0.0
        };
        let weight = (0..n_out * n_in)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let mut bias = vec![0.0; n_out];
        for j in 0..d {
            let mut col: Vec<f64> = targets.iter().map(|t| t[j]).collect();
            col.sort_by(f64::total_cmp);
            let n = col.len() as f64;
            let mu = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            let log_s = (var.sqrt().max(1e-3) / k as f64).ln();
            for i in 0..k {
                let q = (i as f64 + 0.5) / k as f64;
                let idx = ((q * n) as usize).min(col.len() - 1);
                bias[k + i * d + j] = col[idx];
                bias[k + k * d + i * d + j] = log_s;
            }
        }
        Ok(Self {
            k,
            d,
            n_in,
            weight,
            bias,
        })
    }

    pub fn forward(&self, h: &[f64]) -> Result<MdnParams> {
        if h.len() != self.n_in {
            return Err(Error::config(format!(
                "MDN head expects {} features, got {}",
                self.n_in,
                h.len()
            )));
        }
        let flat: Vec<f64> = self
            .bias
            .iter()
            .enumerate()
            .map(|(o, b)| {
                b + (0..self.n_in)
                    .map(|i| self.weight[o * self.n_in + i] * h[i])
                    .sum::<f64>()
            })
            .collect();
        MdnParams::from_flat(self.k, self.d, &flat)
    }

    /// NLL of `y` given features `h`, accumulating `(dW, db)` and returning
    /// the loss and `dL/dh`.
    pub fn loss_and_grad(
        &self,
        h: &[f64],
        y: &[f64],
        grad_w: &mut [f64],
        grad_b: &mut [f64],
    ) -> Result<(f64, Vec<f64>)> {
        let params = self.forward(h)?;
        let (loss, g) = nll_grad(&params, y)?;
        let flat: Vec<f64> = g
            .logits
            .into_iter()
            .chain(g.means)
            .chain(g.log_scales)
            .collect();
        let mut d_h = vec![0.0; self.n_in];
        for (o, &go) in flat.iter().enumerate() {
            grad_b[o] += go;
            for i in 0..self.n_in {
                grad_w[o * self.n_in + i] += go * h[i];
                d_h[i] += go * self.weight[o * self.n_in + i];
            }
        }
        Ok((loss, d_h))
    }

    /// Full-batch Adam on the mean NLL of `(features, target)` pairs.
    /// Returns the final mean NLL.
    pub fn fit(
        &mut self,
        data: &[(Vec<f64>, Vec<f64>)],
        iterations: usize,
        config: OptimizerConfig,
    ) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::config("MDN fit needs data"));
        }
        let n_w = self.weight.len();
        let mut adam = Adam::new(config, iterations, n_w + self.bias.len())?;
        let mask = vec![false; n_w + self.bias.len()];
        let mut loss = f64::NAN;
        for it in 0..iterations {
            let mut gw = vec![0.0; n_w];
            let mut gb = vec![0.0; self.bias.len()];
            let mut total = 0.0;
            for (h, y) in data {
                total += self.loss_and_grad(h, y, &mut gw, &mut gb)?.0;
            }
            let inv = 1.0 / data.len() as f64;
            loss = total * inv;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { iteration: it });
            }
            let mut params: Vec<f64> = self.weight.iter().chain(&self.bias).copied().collect();
            let grad: Vec<f64> = gw.iter().chain(&gb).map(|g| g * inv).collect();
            adam.update(&mut params, &grad, &mask);
            self.weight.copy_from_slice(&params[..n_w]);
            self.bias.copy_from_slice(&params[n_w..]);
        }
        Ok(loss)
    }
}
