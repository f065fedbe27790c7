//! Binary checkpoints for score networks and their optimizer state.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field        | type                   |
//! |--------------|------------------------|
//! | magic        | `b"SWCK"`              |
//! | version      | `u32` (currently 1)    |
//! | meta length  | `u64`                  |
//! | meta         | UTF-8 JSON, [`Meta`]   |
//! | frequencies  | `f64 x n_pairs`        |
//! | parameters   | `f64 x n_params`       |
//! | Adam m       | `f64 x n_params`       |
//! | Adam v       | `f64 x n_params`       |
//!
//! Floats are stored bit-exactly, so a reloaded network reproduces forward
//! passes and resumed training exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::scorenet::{NetConfig, ScoreNet};
use crate::train::{Adam, TrainConfig, Trainer};

pub const MAGIC: &[u8; 4] = b"SWCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub net: NetConfig,
    pub schedule: NoiseSchedule,
    pub train: TrainConfig,
    pub seed: u64,
    /// Optimizer updates applied so far.
    pub iteration: usize,
    pub n_params: usize,
    /// Free-form echo of whatever produced the checkpoint.
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: Meta,
    pub net: ScoreNet,
    pub optimizer: Adam,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer, extra: serde_json::Value) -> Self {
        Self {
            meta: Meta {
                net: trainer.net.config().clone(),
                schedule: trainer.schedule,
                train: trainer.config.clone(),
                seed: trainer.seed,
                iteration: trainer.optimizer.step,
                n_params: trainer.net.n_params(),
                extra,
            },
            net: trainer.net.clone(),
            optimizer: trainer.optimizer.clone(),
        }
    }

    pub fn into_trainer(self) -> Trainer {
        Trainer::with_optimizer(
            self.net,
            self.optimizer,
            self.meta.schedule,
            self.meta.train,
            self.meta.seed,
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let n = self.net.n_params();
        let mut out = Vec::with_capacity(16 + meta.len() + 8 * (self.net.config().n_pairs + 3 * n));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for block in [
            self.net.embedding().frequencies(),
            self.net.params(),
            &self.optimizer.m,
            &self.optimizer.v,
        ] {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint; `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok_or_else(|| bad("truncated header".into()))? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.array().ok_or_else(|| bad("truncated header".into()))?);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let meta_len = u64::from_le_bytes(r.array().ok_or_else(|| bad("truncated header".into()))?);
        let meta_bytes = usize::try_from(meta_len)
            .ok()
            .and_then(|n| r.take(n))
            .ok_or_else(|| bad("truncated metadata".into()))?;
        let meta: Meta =
            serde_json::from_slice(meta_bytes).map_err(|e| bad(format!("metadata: {e}")))?;
        let n = meta.n_params;
        if n != meta.net.param_count() {
            return Err(bad(format!(
                "{} parameters recorded, config implies {}",
                n,
                meta.net.param_count()
            )));
        }
        let mut floats = |count: usize, what: &str| {
            r.f64s(count)
                .ok_or_else(|| bad(format!("truncated {what}")))
        };
        let frequencies = floats(meta.net.n_pairs, "frequencies")?;
        let params = floats(n, "parameters")?;
        let m = floats(n, "first moments")?;
        let v = floats(n, "second moments")?;
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let net = ScoreNet::from_parts(meta.net.clone(), frequencies, params)?;
        let optimizer = Adam {
            config: meta.train.optimizer.clone(),
            total_steps: meta.train.iterations,
            step: meta.iteration,
            m,
            v,
        };
        Ok(Self {
            meta,
            net,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path)?, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N)?.try_into().ok()
    }

    fn f64s(&mut self, count: usize) -> Option<Vec<f64>> {
        let raw = self.take(count.checked_mul(8)?)?;
        Some(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::GmmPrior;
    use crate::seed;

    fn trainer(iterations: usize) -> Trainer {
        let cfg = NetConfig {
            hidden: vec![8, 8],
            embed_dim: 4,
            n_pairs: 3,
            ..Default::default()
        };
        let net = ScoreNet::new(cfg, &mut seed::rng(3)).unwrap();
        let train = TrainConfig {
            iterations,
            batch_size: 16,
            ..Default::default()
        };
        Trainer::new(net, NoiseSchedule::default(), train, 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut t = trainer(20);
        t.run(&GmmPrior::two_mode_demo(), 7, |_| {}).unwrap();
        let ck = Checkpoint::from_trainer(&t, serde_json::json!({"task": "gmm"}));
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.meta, ck.meta);
        assert_eq!(back.net.params(), t.net.params());
        assert_eq!(
            back.net.embedding().frequencies(),
            t.net.embedding().frequencies()
        );
        assert_eq!(back.optimizer, t.optimizer);
        for sigma in [1e-3, 0.1, 2.0] {
            let a = t.net.forward(&[0.3], &[], sigma, false).unwrap().score;
            let b = back.net.forward(&[0.3], &[], sigma, false).unwrap().score;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let prior = GmmPrior::two_mode_demo();
        let mut full = trainer(30);
        full.run(&prior, 30, |_| {}).unwrap();

        let mut first = trainer(30);
        first.run(&prior, 12, |_| {}).unwrap();
        let bytes = Checkpoint::from_trainer(&first, serde_json::Value::Null)
            .to_bytes()
            .unwrap();
        let mut resumed = Checkpoint::from_bytes(&bytes, Path::new("mem"))
            .unwrap()
            .into_trainer();
        resumed.run(&prior, 30, |_| {}).unwrap();
        assert_eq!(resumed.net.params(), full.net.params());
        assert_eq!(resumed.optimizer, full.optimizer);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let t = trainer(5);
        let bytes = Checkpoint::from_trainer(&t, serde_json::Value::Null)
            .to_bytes()
            .unwrap();
        let p = Path::new("x.swck");
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        let mut trailing = bytes.clone();
        trailing.push(0);
        for b in [
            &wrong_magic[..],
            &wrong_version[..],
            &bytes[..bytes.len() - 1],
            &trailing[..],
            &bytes[..10],
        ] {
            assert!(matches!(
                Checkpoint::from_bytes(b, p),
                Err(Error::Format { .. })
            ));
        }
    }
}
