use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use scorewave::signal::{read_wav, resample, Signal};

use crate::config::ToolkitConfig;

/// Lists the non-empty, non-comment lines of a manifest. Relative paths are
/// resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<Vec<PathBuf>>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split('\t').map(|f| base.join(f.trim())).collect())
        .collect())
}

/// Single-column manifest.
pub fn read_file_list(path: &Path) -> Result<Vec<PathBuf>> {
    Ok(read_manifest(path)?
        .into_iter()
        .map(|mut cols| cols.swap_remove(0))
        .collect())
}

/// Reads a WAV, downmixes it and brings it to `rate`.
pub fn load_audio(path: &Path, rate: u32) -> Result<Signal> {
    let s = read_wav(path, true).with_context(|| format!("reading {}", path.display()))?;
    if s.sample_rate == rate {
        return Ok(s);
    }
    log::info!(
        "{}: resampling {} Hz -> {rate} Hz",
        path.display(),
        s.sample_rate
    );
    Ok(resample(&s, rate)?)
}

pub fn load_pool(manifest: Option<&Path>, rate: u32) -> Result<Vec<Signal>> {
    let Some(m) = manifest else {
        return Ok(Vec::new());
    };
    read_file_list(m)?
        .iter()
        .map(|p| load_audio(p, rate))
        .collect()
}

/// JSON-lines log whose first line echoes the command, seed and resolved
/// configuration.
pub struct JsonLog {
    out: BufWriter<File>,
}

#[derive(Serialize)]
struct Header<'a, E: Serialize> {
    command: &'a str,
    seed: u64,
    config: &'a ToolkitConfig,
    args: E,
}

impl JsonLog {
    pub fn create<E: Serialize>(
        path: &Path,
        command: &str,
        config: &ToolkitConfig,
        args: E,
    ) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut log = Self {
            out: BufWriter::new(file),
        };
        log.write(&Header {
            command,
            seed: config.seed,
            config,
            args,
        })?;
        Ok(log)
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
