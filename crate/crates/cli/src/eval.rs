use std::path::PathBuf;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use scorewave::metrics::{evaluate_with, MetricReport};

use crate::config::{ConfigError, ToolkitConfig};
use crate::io::{load_audio, read_manifest, JsonLog};

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// Tab-separated `reference<TAB>estimate` lines.
    #[arg(long, conflicts_with_all = ["reference", "estimate"])]
    manifest: Option<PathBuf>,
    #[arg(long, requires = "estimate")]
    reference: Option<PathBuf>,
    #[arg(long, requires = "reference")]
    estimate: Option<PathBuf>,
    #[arg(long, default_value = "eval.jsonl")]
    log: PathBuf,
}

#[derive(Debug, Serialize)]
struct Row<'a> {
    reference: String,
    estimate: String,
    #[serde(flatten)]
    metrics: &'a MetricReport,
}

pub fn run(cfg: &ToolkitConfig, args: Args) -> Result<()> {
    let pairs: Vec<(PathBuf, PathBuf)> = match (&args.manifest, &args.reference, &args.estimate) {
        (Some(m), _, _) => read_manifest(m)?
            .into_iter()
            .map(|cols| match <[PathBuf; 2]>::try_from(cols) {
                Ok([r, e]) => Ok((r, e)),
                Err(cols) => Err(ConfigError(format!(
                    "manifest line needs 2 columns, got {}",
                    cols.len()
                ))),
            })
            .collect::<Result<_, _>>()?,
        (None, Some(r), Some(e)) => vec![(r.clone(), e.clone())],
        _ => {
            return Err(ConfigError("give --manifest or --reference with --estimate".into()).into())
        }
    };
    let reports: Vec<Result<MetricReport>> = pairs
        .par_iter()
        .map(|(r, e)| {
            let reference = load_audio(r, cfg.sample_rate)?;
            let estimate = load_audio(e, cfg.sample_rate)?;
            evaluate_with(&reference, &estimate, &cfg.metrics.resolutions)
                .with_context(|| format!("scoring {} against {}", e.display(), r.display()))
        })
        .collect();

    let mut log = JsonLog::create(&args.log, "eval", cfg, &args)?;
    println!(
        "{:>9} {:>9} {:>9} {:>9}  estimate",
        "snr", "si_snr", "lsd", "mrstft"
    );
    let mut first_err = None;
    for ((r, e), rep) in pairs.iter().zip(reports) {
        match rep {
            Ok(m) => {
                println!(
                    "{:>9.3} {:>9.3} {:>9.3} {:>9.4}  {}",
                    m.snr,
                    m.si_snr,
                    m.lsd,
                    m.mrstft.total,
                    e.display()
                );
                log.write(&Row {
                    reference: r.display().to_string(),
                    estimate: e.display().to_string(),
                    metrics: &m,
                })?;
            }
            Err(err) => {
                log::error!("{err:#}");
                first_err.get_or_insert(err);
            }
        }
    }
    log.finish()?;
    first_err.map_or(Ok(()), Err)
}
