use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use scorewave::distort::ChainConfig;
use scorewave::metrics::DEFAULT_RESOLUTIONS;
use scorewave::oracle::GmmPrior;
use scorewave::schedule::{NoiseSchedule, DEFAULT_EPSILON, DEFAULT_STEPS};
use scorewave::scorenet::NetConfig;
use scorewave::signal::DEFAULT_SAMPLE_RATE;
use scorewave::toy::DenoisingConfig;
use scorewave::train::OptimizerConfig;

/// Everything a run depends on. Parsed from TOML; every key is optional and
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolkitConfig {
    pub seed: u64,
    pub sample_rate: u32,
    pub schedule: NoiseSchedule,
    pub sampling: SamplingConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub train: TrainSection,
    pub gmm: GmmConfig,
    pub denoise: DenoisingConfig,
    pub distortion: ChainConfig,
    pub metrics: MetricsConfig,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            schedule: NoiseSchedule::default(),
            sampling: SamplingConfig::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            train: TrainSection::default(),
            gmm: GmmConfig::default(),
            denoise: DenoisingConfig::default(),
            distortion: ChainConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub steps: usize,
    pub epsilon: f64,
    pub realizations: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            epsilon: DEFAULT_EPSILON,
            realizations: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub n_pairs: usize,
    pub data_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let n = NetConfig::default();
        Self {
            hidden: n.hidden,
            embed_dim: n.embed_dim,
            n_pairs: n.n_pairs,
            data_std: n.data_std,
        }
    }
}

impl ModelConfig {
    pub fn net(&self, x_dim: usize, cond_dim: usize) -> NetConfig {
        NetConfig {
            x_dim,
            cond_dim,
            hidden: self.hidden.clone(),
            embed_dim: self.embed_dim,
            n_pairs: self.n_pairs,
            data_std: self.data_std,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Unconditional 1-D Gaussian mixture prior.
    Gmm,
    /// Conditional denoising of short correlated windows.
    Denoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub task: Task,
    pub iterations: usize,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            task: Task::Gmm,
            iterations: 20_000,
            batch_size: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmConfig {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            weights: vec![0.3, 0.7],
            means: vec![-2.0, 2.0],
            variances: vec![0.1, 0.1],
        }
    }
}

impl GmmConfig {
    pub fn prior(&self) -> scorewave::Result<GmmPrior> {
        GmmPrior::one_dim(&self.weights, &self.means, &self.variances)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub resolutions: Vec<(usize, usize)>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            resolutions: DEFAULT_RESOLUTIONS.to_vec(),
        }
    }
}

impl ToolkitConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.optimizer.validate()?;
        self.distortion.validate()?;
        self.gmm.prior()?;
        scorewave::toy::DenoisingTask::new(self.denoise)?;
        self.model.net(1, 0).validate()?;
        if self.sample_rate == 0 {
            return Err(ConfigError("sample_rate must be positive".into()).into());
        }
        if self.sampling.realizations == 0 || self.train.batch_size == 0 {
            return Err(ConfigError("realizations and batch_size must be >= 1".into()).into());
        }
        if self.metrics.resolutions.is_empty() {
            return Err(ConfigError("at least one metric resolution is required".into()).into());
        }
        for &(frame, hop) in &self.metrics.resolutions {
            scorewave::signal::StftConfig::new(frame, hop).validate()?;
        }
        Ok(())
    }
}

/// Configuration problem detected outside the core library.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}
