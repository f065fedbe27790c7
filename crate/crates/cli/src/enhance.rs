use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use rayon::prelude::*;
use serde::Serialize;

use scorewave::checkpoint::Checkpoint;
use scorewave::diffusion::{enhance_expectation, sample_many, ScoreFunction};
use scorewave::metrics::{evaluate_with, si_snr, snr};
use scorewave::schedule::{sweep_plan, NoiseSchedule, SamplingPlan};
use scorewave::seed;
use scorewave::signal::{read_wav, write_wav, Signal, WavEncoding};
use scorewave::toy::DenoisingTask;

use crate::config::{ConfigError, Task, ToolkitConfig};
use crate::io::JsonLog;
use crate::train::{suffixed, TrainedOn};

#[derive(Debug, clap::Args, Serialize)]
pub struct ModelArgs {
    /// Trained checkpoint.
    #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Use the closed-form score of the configured task instead.
    #[arg(long)]
    oracle: bool,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct SamplingArgs {
    /// Diffusion steps N (default `sampling.steps`).
    #[arg(long)]
    steps: Option<usize>,
    /// Step-size exponent epsilon (default `sampling.epsilon`).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Realizations averaged per output (default `sampling.realizations`).
    #[arg(long)]
    realizations: Option<usize>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct EnhanceArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Clean reference; enables metrics for input and output.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Metrics log (default `<output>.jsonl`).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 8, 16, 32, 64])]
    steps: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1.5, 2.3, 3.0])]
    epsilon: Vec<f64>,
    /// Evaluation windows drawn from the denoising task.
    #[arg(long, default_value_t = 300)]
    pairs: usize,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long, default_value = "sweep.jsonl")]
    log: PathBuf,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct SampleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    /// Samples as JSON lines.
    #[arg(long, default_value = "samples.jsonl")]
    out: PathBuf,
}

/// A score source: a checkpoint or the closed-form oracle of a task.
struct Model {
    net: Option<Checkpoint>,
    on: TrainedOn,
    schedule: NoiseSchedule,
}

impl Model {
    fn load(cfg: &ToolkitConfig, args: &ModelArgs, task: Task) -> Result<Self> {
        let Some(path) = &args.checkpoint else {
            return Ok(Self {
                net: None,
                on: TrainedOn {
                    task,
                    gmm: cfg.gmm.clone(),
                    denoise: cfg.denoise,
                },
                schedule: cfg.schedule,
            });
        };
        let ck = Checkpoint::load(path)?;
        let on = TrainedOn::from_checkpoint(&ck)?;
        if on.task != task {
            return Err(ConfigError(format!(
                "{} was trained on the {:?} task; this command needs {task:?}",
                path.display(),
                on.task
            ))
            .into());
        }
        Ok(Self {
            schedule: ck.meta.schedule,
            net: Some(ck),
            on,
        })
    }

    fn with_score<T>(&self, f: impl FnOnce(&(dyn ScoreFunction + Sync)) -> Result<T>) -> Result<T> {
        match (&self.net, self.on.task) {
            (Some(ck), _) => f(&ck.net),
            (None, Task::Gmm) => f(&self.on.gmm.prior()?),
            (None, Task::Denoise) => f(&DenoisingTask::new(self.on.denoise)?.oracle()),
        }
    }

    fn plan(&self, steps: usize, epsilon: f64) -> Result<SamplingPlan> {
        Ok(sweep_plan(&self.schedule, steps, epsilon)?)
    }
}

fn sampling(cfg: &ToolkitConfig, a: &SamplingArgs) -> (usize, f64, usize) {
    (
        a.steps.unwrap_or(cfg.sampling.steps),
        a.epsilon.unwrap_or(cfg.sampling.epsilon),
        a.realizations.unwrap_or(cfg.sampling.realizations),
    )
}

fn read_at_rate(path: &Path, rate: u32) -> Result<Signal> {
    let s = read_wav(path, true)?;
    if s.sample_rate != rate {
        return Err(ConfigError(format!(
            "{} is sampled at {} Hz; expected {rate} Hz",
            path.display(),
            s.sample_rate
        ))
        .into());
    }
    Ok(s)
}

pub fn enhance(cfg: &ToolkitConfig, args: EnhanceArgs) -> Result<()> {
    let model = Model::load(cfg, &args.model, Task::Denoise)?;
    let (steps, epsilon, realizations) = sampling(cfg, &args.sampling);
    let plan = model.plan(steps, epsilon)?;
    let len = model.on.denoise.len;
    if let Some(ck) = &model.net {
        let c = ck.net.config();
        if c.x_dim != len || c.cond_dim != len {
            return Err(ConfigError(format!(
                "checkpoint dimensions {}/{} do not match window length {len}",
                c.x_dim, c.cond_dim
            ))
            .into());
        }
    }
    let noisy = read_at_rate(&args.input, cfg.sample_rate)?;
    if noisy.is_empty() {
        return Err(ConfigError(format!("{} is empty", args.input.display())).into());
    }

    let t0 = Instant::now();
    let windows: Vec<Vec<f64>> = noisy
        .samples
        .chunks(len)
        .map(|c| {
            let mut w = c.to_vec();
            w.resize(len, 0.0);
            w
        })
        .collect();
    let out = model.with_score(|score| {
        let parts = windows
            .par_iter()
            .enumerate()
            .map(|(i, w)| {
                enhance_expectation(
                    score,
                    w,
                    &plan,
                    len,
                    realizations,
                    seed::derive(cfg.seed, i as u64),
                )
            })
            .collect::<scorewave::Result<Vec<_>>>()?;
        Ok(parts.concat())
    })?;
    let elapsed = t0.elapsed().as_secs_f64();
    let enhanced = noisy.with_samples(out[..noisy.len()].to_vec());
    write_wav(&args.output, &enhanced, WavEncoding::Float32)?;
    let rtf = elapsed / noisy.duration();
    log::info!("wrote {} (RTF {rtf:.3})", args.output.display());

    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| suffixed(&args.output, ".jsonl"));
    let mut log = JsonLog::create(&log_path, "enhance", cfg, &args)?;
    let mut record = serde_json::json!({ "steps": steps, "epsilon": epsilon, "realizations": realizations, "rtf": rtf });
    if let Some(r) = &args.reference {
        let reference = read_at_rate(r, cfg.sample_rate)?;
        let before = evaluate_with(&reference, &noisy, &cfg.metrics.resolutions)?;
        let after = evaluate_with(&reference, &enhanced, &cfg.metrics.resolutions)?;
        println!(
            "{:<8} {:>9} {:>9} {:>9} {:>9}",
            "", "snr", "si_snr", "lsd", "mrstft"
        );
        for (name, m) in [("input", &before), ("output", &after)] {
            println!(
                "{name:<8} {:>9.3} {:>9.3} {:>9.3} {:>9.4}",
                m.snr, m.si_snr, m.lsd, m.mrstft.total
            );
        }
        record["input_metrics"] = serde_json::to_value(&before)?;
        record["output_metrics"] = serde_json::to_value(&after)?;
        record["snr_improvement_db"] = (after.snr - before.snr).into();
    }
    log.write(&record)?;
    log.finish()
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub steps: usize,
    pub epsilon: f64,
    pub seconds: f64,
    pub rtf: f64,
    pub input_snr_db: f64,
    pub snr_db: f64,
    pub si_snr_db: f64,
}

pub fn sweep(cfg: &ToolkitConfig, args: SweepArgs) -> Result<()> {
    if args.steps.is_empty() || args.epsilon.is_empty() || args.pairs == 0 {
        return Err(ConfigError(
            "sweep needs at least one step count, one epsilon and one pair".into(),
        )
        .into());
    }
    let model = Model::load(cfg, &args.model, Task::Denoise)?;
    let task = DenoisingTask::new(model.on.denoise)?;
    let len = task.len();
    let realizations = args.realizations.unwrap_or(cfg.sampling.realizations);
    let pairs = task.eval_set(args.pairs, seed::derive(cfg.seed, 2));
    let clean: Vec<f64> = pairs.iter().flat_map(|(x, _)| x.iter().copied()).collect();
    let noisy: Vec<f64> = pairs.iter().flat_map(|(_, c)| c.iter().copied()).collect();
    let input_snr_db = snr(&clean, &noisy)?;
    let audio_seconds = clean.len() as f64 / cfg.sample_rate as f64;

    let run_cell = |plan: &SamplingPlan| {
        model.with_score(|score| {
            let parts = pairs
                .par_iter()
                .enumerate()
                .map(|(i, (_, c))| {
                    enhance_expectation(
                        score,
                        c,
                        plan,
                        len,
                        realizations,
                        seed::derive(cfg.seed, i as u64),
                    )
                })
                .collect::<scorewave::Result<Vec<_>>>()?;
            Ok(parts.concat())
        })
    };
    // Untimed pass so thread start-up and cold caches do not land in the
    // first row.
    run_cell(&model.plan(args.steps[0], args.epsilon[0])?)?;

    let mut log = JsonLog::create(&args.log, "sweep", cfg, &args)?;
    println!(
        "{:>6} {:>7} {:>10} {:>9} {:>9}",
        "N", "eps", "RTF", "snr", "si_snr"
    );
    for &epsilon in &args.epsilon {
        for &steps in &args.steps {
            let plan = model.plan(steps, epsilon)?;
            let t0 = Instant::now();
            let est = run_cell(&plan)?;
            let seconds = t0.elapsed().as_secs_f64();
            let row = SweepRow {
                steps,
                epsilon,
                seconds,
                rtf: seconds / audio_seconds,
                input_snr_db,
                snr_db: snr(&clean, &est)?,
                si_snr_db: si_snr(&clean, &est)?,
            };
            println!(
                "{:>6} {:>7.2} {:>10.4} {:>9.3} {:>9.3}",
                row.steps, row.epsilon, row.rtf, row.snr_db, row.si_snr_db
            );
            log.write(&row)?;
        }
    }
    log.finish()
}

pub fn sample_prior(cfg: &ToolkitConfig, args: SampleArgs) -> Result<()> {
    if args.count == 0 {
        return Err(ConfigError("--count must be >= 1".into()).into());
    }
    let model = Model::load(cfg, &args.model, Task::Gmm)?;
    let prior = model.on.gmm.prior()?;
    if let Some(msg) = model.schedule.check_data_variance(prior.total_variance()) {
        log::warn!("{msg}");
    }
    let (steps, epsilon, _) = sampling(cfg, &args.sampling);
    let plan = model.plan(steps, epsilon)?;
    let samples = model.with_score(|score| {
        Ok(sample_many(
            score,
            &[],
            &plan,
            prior.dim(),
            args.count,
            seed::derive(cfg.seed, 3),
        )?)
    })?;

    let mut log = JsonLog::create(&args.out, "sample-prior", cfg, &args)?;
    let mut counts = vec![0usize; prior.n_components()];
    for s in &samples {
        let k = prior.nearest_component(s);
        counts[k] += 1;
        log.write(&serde_json::json!({ "sample": s, "component": k }))?;
    }
    log.finish()?;
    let n = args.count as f64;
    println!(
        "{:>9} {:>9} {:>9} {:>7}",
        "component", "weight", "observed", "z"
    );
    for (k, (&c, &w)) in counts.iter().zip(prior.weights()).enumerate() {
        let f = c as f64 / n;
        let z = (f - w) / (w * (1.0 - w) / n).sqrt();
        println!("{k:>9} {w:>9.4} {f:>9.4} {z:>7.2}");
    }
    Ok(())
}
