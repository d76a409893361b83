//! Output directory, artifact bookkeeping and the run manifest.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.toml";

#[derive(Clone, Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Complete,
    /// The command stopped early; the artifacts hold what finished.
    Partial,
    Failed,
}

#[derive(Debug, Serialize)]
struct Timing {
    wall_time_secs: f64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    artifacts: &'a [Artifact],
    /// The only field that differs between identical runs.
    timing: Timing,
}

/// Collects the files a command writes and finishes with a manifest.
pub struct Output {
    dir: PathBuf,
    command: String,
    started: Instant,
    artifacts: Vec<Artifact>,
}

impl Output {
    pub fn create(config: &ExperimentConfig, command: &str) -> anyhow::Result<Self> {
        let dir = config.out.clone();
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("cannot create {}", dir.display()))?;
        std::fs::write(dir.join(CONFIG_COPY), config.to_toml())?;
        Ok(Self {
            dir,
            command: command.to_owned(),
            started: Instant::now(),
            artifacts: Vec::new(),
        })
    }

    /// Writes `bytes` to `rel` under the output directory.
    pub fn write(&mut self, rel: &str, bytes: Vec<u8>) -> anyhow::Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, &bytes)
            .with_context(|| format!("cannot write {}", path.display()))?;
        self.artifacts.push(Artifact {
            path: rel.to_owned(),
            bytes: bytes.len(),
            sha256: format!("{:x}", Sha256::digest(&bytes)),
        });
        Ok(())
    }

    /// Writes through a closure that fills a buffer.
    pub fn write_with<F>(&mut self, rel: &str, fill: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> anyhow::Result<()>,
    {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write(rel, buf)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> anyhow::Result<()> {
        let mut buf = serde_json::to_vec_pretty(value)?;
        buf.push(b'\n');
        self.write(rel, buf)
    }

    /// Writes the manifest. `error` is the error that stopped the command, if any.
    pub fn finish(
        self,
        config: &ExperimentConfig,
        error: Option<&anyhow::Error>,
    ) -> anyhow::Result<()> {
        let status = match error {
            None => Status::Complete,
            Some(_) if self.artifacts.is_empty() => Status::Failed,
            Some(_) => Status::Partial,
        };
        let error = error.map(|e| format!("{e:#}"));
        let manifest = Manifest {
            command: &self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: config.seed,
            config_sha256: config.hash(),
            status,
            error,
            artifacts: &self.artifacts,
            timing: Timing {
                wall_time_secs: self.started.elapsed().as_secs_f64(),
            },
        };
        let mut buf = serde_json::to_vec_pretty(&manifest)?;
        buf.push(b'\n');
        std::fs::write(self.dir.join(MANIFEST), buf)?;
        Ok(())
    }
}

/// Directory name of one grid cell.
pub fn cell_dir(tau: f64, n: usize) -> String {
    format!("cells/tau={tau}_n={n}")
}
