use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cascade_search::pool::{load_pool, split_pool, PoolManifest};
use cascade_search::{ModelPool, ThresholdGrid};
use chrono::{DateTime, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Bad invocation; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

/// Writes through a sibling temp file and a rename so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .with_context(|| format!("{} has no file name", path.display()))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path)
        .with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))
}

pub fn write_json_atomic(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// `front.json` -> `front.<suffix>.json`
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}.json"))
}

/// A plain step count (`50` gives 0, 0.02, ..., 1) or comma-separated values.
pub fn parse_grid(text: &str) -> Result<ThresholdGrid> {
    if let Ok(steps) = text.trim().parse::<usize>() {
        return Ok(ThresholdGrid::uniform(steps)?);
    }
    let values = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| UsageError(format!("cannot parse threshold grid {text:?}")))?;
    Ok(ThresholdGrid::new(values)?)
}

/// Which part of a pool a command looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    All,
    Val,
    Test,
}

/// Loads a pool and optionally cuts it into validation and test parts.
pub struct SplitSource {
    pub pool: ModelPool,
    pub split: Option<(f64, u64)>,
}

impl SplitSource {
    pub fn load(
        manifest: &Path,
        val_fraction: Option<f64>,
        split_seed: Option<u64>,
    ) -> Result<Self> {
        let split = match (val_fraction, split_seed) {
            (Some(f), Some(s)) => Some((f, s)),
            (None, None) => None,
            (Some(_), None) => return usage("--val-fraction needs an explicit --split-seed"),
            (None, Some(_)) => return usage("--split-seed is only meaningful with --val-fraction"),
        };
        let pool = load_pool(manifest)?;
        Ok(Self { pool, split })
    }

    pub fn part(&self, part: Part) -> Result<ModelPool> {
        match (part, self.split) {
            (Part::All, _) | (Part::Val, None) => Ok(self.pool.clone()),
            (Part::Test, None) => usage("a test split needs --val-fraction and --split-seed"),
            (p, Some((f, seed))) => {
                let (val, test) = split_pool(&self.pool, f, seed)?;
                Ok(if p == Part::Val { val } else { test })
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// Reproducibility record written next to every output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub seed: Option<u64>,
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
}

pub struct Run {
    started: DateTime<Utc>,
    inputs: Vec<InputHash>,
}

impl Run {
    pub fn start() -> Self {
        Self {
            started: Utc::now(),
            inputs: Vec::new(),
        }
    }

    pub fn hash_file(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(InputHash {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    /// Hashes a pool manifest and every file it references.
    pub fn hash_pool(&mut self, manifest: &Path) -> Result<()> {
        self.hash_file(manifest)?;
        let text = fs::read_to_string(manifest)?;
        let parsed: PoolManifest = serde_json::from_str(&text)?;
        let base = manifest.parent().unwrap_or_else(|| Path::new("."));
        self.hash_file(&base.join(&parsed.labels_file))?;
        for m in &parsed.models {
            self.hash_file(&base.join(&m.pred_file))?;
        }
        Ok(())
    }

    pub fn finish(self, path: &Path, config: serde_json::Value, seed: Option<u64>) -> Result<()> {
        let manifest = RunManifest {
            command: std::env::args().collect(),
            config,
            inputs: self.inputs,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: self.started.to_rfc3339(),
            finished_at: Utc::now().to_rfc3339(),
        };
        write_json_atomic(path, &manifest)
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("50").unwrap().len(), 51);
        assert_eq!(parse_grid("0.5, 1.0").unwrap().values(), &[0.5, 1.0]);
        assert!(parse_grid("0.5,x").is_err());
    }

    #[test]
    fn sibling_names() {
        assert_eq!(
            sibling(Path::new("out/front.json"), "runlog"),
            PathBuf::from("out/front.runlog.json")
        );
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
