use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use scorewave::checkpoint::Checkpoint;
use scorewave::scorenet::ScoreNet;
use scorewave::seed;
use scorewave::toy::{DenoisingConfig, DenoisingTask};
use scorewave::train::{TrainConfig, Trainer, TrainingSource};

use crate::config::{ConfigError, GmmConfig, Task, ToolkitConfig};
use crate::io::JsonLog;

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// Training data; overrides `train.task`.
    #[arg(long, value_enum)]
    task: Option<Task>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `train.iterations`.
    #[arg(long)]
    iterations: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Loss trace (default `<out>.trace.jsonl`).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Also rewrite the checkpoint every this many iterations.
    #[arg(long)]
    save_every: Option<usize>,
    /// Stop after this many iterations without changing the learning-rate
    /// schedule; continue later with `--resume`.
    #[arg(long)]
    until: Option<usize>,
}

/// Stored in the checkpoint so later commands know what the model learned.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedOn {
    pub task: Task,
    pub gmm: GmmConfig,
    pub denoise: DenoisingConfig,
}

impl TrainedOn {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        serde_json::from_value(ck.meta.extra["trained_on"].clone())
            .map_err(|e| ConfigError(format!("checkpoint lacks task metadata: {e}")).into())
    }
}

pub enum Source {
    Gmm(scorewave::oracle::GmmPrior),
    Denoise(DenoisingTask),
}

impl Source {
    pub fn new(on: &TrainedOn) -> Result<Self> {
        Ok(match on.task {
            Task::Gmm => Source::Gmm(on.gmm.prior()?),
            Task::Denoise => Source::Denoise(DenoisingTask::new(on.denoise)?),
        })
    }

    fn as_dyn(&self) -> &dyn TrainingSource {
        match self {
            Source::Gmm(p) => p,
            Source::Denoise(t) => t,
        }
    }

    fn variance(&self) -> f64 {
        match self {
            Source::Gmm(p) => p.total_variance(),
            Source::Denoise(t) => t.posterior_variance(),
        }
    }
}

pub fn run(cfg: &ToolkitConfig, args: Args) -> Result<()> {
    let (mut trainer, on, extra) = match &args.resume {
        Some(path) => resume(path, &args)?,
        None => fresh(cfg, &args)?,
    };
    let source = Source::new(&on)?;
    if let Some(msg) = trainer.schedule.check_data_variance(source.variance()) {
        log::warn!("{msg}");
    }
    let trace_path = args
        .trace
        .clone()
        .unwrap_or_else(|| suffixed(&args.out, ".trace.jsonl"));
    let mut trace = JsonLog::create(&trace_path, "train", cfg, &args)?;

    let total = trainer.config.iterations;
    let stop = args.until.map_or(total, |u| u.min(total));
    let report_every = (total / 10).max(1);
    let save_every = args.save_every.unwrap_or(usize::MAX).max(1);
    log::info!(
        "training {} parameters on {:?} from iteration {} to {stop} of {total}",
        trainer.net.n_params(),
        on.task,
        trainer.iteration()
    );
    let mut window = 0.0;
    while trainer.iteration() < stop {
        let until = (trainer.iteration() / save_every + 1)
            .saturating_mul(save_every)
            .min(stop);
        let mut write_err = None;
        let outcome = trainer.run(source.as_dyn(), until, |s| {
            if let Err(e) = trace
                .write(&serde_json::json!({ "iteration": s.iteration, "loss": s.loss, "lr": s.lr }))
            {
                write_err.get_or_insert(e);
            }
            window += s.loss;
            if (s.iteration + 1) % report_every == 0 {
                log::info!(
                    "iteration {:>8}  loss {:.5}  lr {:.3e}",
                    s.iteration + 1,
                    window / report_every as f64,
                    s.lr
                );
                window = 0.0;
            }
        });
        if let Err(e) = outcome {
            trace.finish()?;
            return Err(e)
                .with_context(|| format!("training aborted; trace in {}", trace_path.display()));
        }
        if let Some(e) = write_err {
            return Err(e);
        }
        Checkpoint::from_trainer(&trainer, extra.clone()).save(&args.out)?;
    }
    trace.finish()?;
    Checkpoint::from_trainer(&trainer, extra).save(&args.out)?;
    log::info!("checkpoint written to {}", args.out.display());
    Ok(())
}

type Start = (Trainer, TrainedOn, serde_json::Value);

fn fresh(cfg: &ToolkitConfig, args: &Args) -> Result<Start> {
    let on = TrainedOn {
        task: args.task.unwrap_or(cfg.train.task),
        gmm: cfg.gmm.clone(),
        denoise: cfg.denoise,
    };
    let (x_dim, cond_dim) = match on.task {
        Task::Gmm => (1, 0),
        Task::Denoise => (cfg.denoise.len, cfg.denoise.len),
    };
    let net = ScoreNet::new(
        cfg.model.net(x_dim, cond_dim),
        &mut seed::child_rng(cfg.seed, 0),
    )?;
    let train = TrainConfig {
        iterations: args.iterations.unwrap_or(cfg.train.iterations),
        batch_size: cfg.train.batch_size,
        optimizer: cfg.optimizer.clone(),
    };
    let trainer = Trainer::new(net, cfg.schedule, train, seed::derive(cfg.seed, 1))?;
    let extra = serde_json::json!({ "trained_on": on, "config": cfg });
    Ok((trainer, on, extra))
}

/// Training continues with the configuration stored in the checkpoint.
fn resume(path: &Path, args: &Args) -> Result<Start> {
    let ck = Checkpoint::load(path)?;
    let on = TrainedOn::from_checkpoint(&ck)?;
    if args.task.is_some_and(|t| t != on.task) {
        return Err(ConfigError("--task differs from the resumed checkpoint".into()).into());
    }
    if args
        .iterations
        .is_some_and(|n| n != ck.meta.train.iterations)
    {
        return Err(ConfigError(format!(
            "the learning-rate schedule was fixed for {} iterations; --iterations cannot change it on resume",
            ck.meta.train.iterations
        ))
        .into());
    }
    log::info!(
        "resuming {} at iteration {}",
        path.display(),
        ck.meta.iteration
    );
    let extra = ck.meta.extra.clone();
    Ok((ck.into_trainer(), on, extra))
}

pub fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
