use std::path::PathBuf;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use scorewave::distort::{distort_file, ChainRecord, DistortionKind, Pools};
use scorewave::signal::{write_wav, WavEncoding};

use crate::config::ToolkitConfig;
use crate::io::{load_audio, load_pool, read_file_list, JsonLog};

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// Text file listing clean WAV files, one per line.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory; receives `clean/`, `distorted/` and the chain log.
    #[arg(long)]
    out: PathBuf,
    /// Manifest of noise recordings for additive noise; without it that
    /// type is disabled.
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Manifest of measured room impulse responses; without it reverberation
    /// uses synthetic responses.
    #[arg(long)]
    rir: Option<PathBuf>,
    /// Chain log path (default `<out>/chains.jsonl`).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "float32")]
    encoding: Encoding,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Encoding {
    Pcm16,
    Float32,
}

impl From<Encoding> for WavEncoding {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::Pcm16 => WavEncoding::Pcm16,
            Encoding::Float32 => WavEncoding::Float32,
        }
    }
}

pub fn run(cfg: &ToolkitConfig, args: Args) -> Result<()> {
    let files = read_file_list(&args.manifest)?;
    let rate = cfg.sample_rate;
    let pools = Pools {
        noise: load_pool(args.noise.as_deref(), rate)?,
        rir: load_pool(args.rir.as_deref(), rate)?,
    };
    let mut chain_cfg = cfg.distortion.clone();
    if pools.noise.is_empty()
        && chain_cfg
            .weights
            .contains_key(&DistortionKind::AdditiveNoise)
    {
        log::warn!("no noise pool given; additive noise disabled");
        chain_cfg.disable(DistortionKind::AdditiveNoise);
    }
    chain_cfg.validate()?;
    for dir in ["clean", "distorted"] {
        std::fs::create_dir_all(args.out.join(dir))?;
    }
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| args.out.join("chains.jsonl"));
    let mut log = JsonLog::create(&log_path, "distort", cfg, &args)?;

    let encoding = WavEncoding::from(args.encoding);
    let results: Vec<Result<ChainRecord>> = files
        .par_iter()
        .enumerate()
        .map(|(index, input)| {
            let name = format!(
                "{index:06}_{}.wav",
                input
                    .file_stem()
                    .map(|s| s.to_string_lossy())
                    .unwrap_or_default()
            );
            let clean_path = args.out.join("clean").join(&name);
            let distorted_path = args.out.join("distorted").join(&name);
            // Replay starts from `input` loaded the same way; the stored clean
            // file is the aligned (possibly trimmed) partner of the output.
            let clean = load_audio(input, rate)?;
            let pair = distort_file(&clean, &chain_cfg, &pools, cfg.seed, index as u64)
                .with_context(|| format!("distorting {}", input.display()))?;
            write_wav(&clean_path, &pair.clean, encoding)?;
            write_wav(&distorted_path, &pair.distorted, encoding)?;
            if pair.guarded {
                log::warn!("{}: output exceeded the clipping guard", input.display());
            }
            Ok(ChainRecord {
                input: input.display().to_string(),
                clean_output: clean_path.display().to_string(),
                distorted_output: distorted_path.display().to_string(),
                seed: scorewave::seed::derive(cfg.seed, index as u64),
                chain: pair.chain,
                offset: pair.offset,
                guarded: pair.guarded,
            })
        })
        .collect();

    let mut first_err = None;
    let mut ok = 0usize;
    for (input, r) in files.iter().zip(results) {
        match r {
            Ok(record) => {
                log.write(&record)?;
                ok += 1;
            }
            Err(e) => {
                log::error!("{}: {e:#}", input.display());
                first_err.get_or_insert(e);
            }
        }
    }
    log.finish()?;
    log::info!(
        "{ok}/{} files distorted; log at {}",
        files.len(),
        log_path.display()
    );
    match first_err {
        Some(e) => Err(e.context(format!(
            "{} of {} files failed",
            files.len() - ok,
            files.len()
        ))),
        None => Ok(()),
    }
}
