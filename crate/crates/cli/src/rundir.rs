//! Run directory layout:
//!
//! ```text
//! <run>/config.toml    resolved configuration
//! <run>/run.json       command, seed, start time, version
//! <run>/checkpoints/
//! <run>/logs/
//! <run>/reports/
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::config::RunConfig;

pub struct RunDir {
    pub root: PathBuf,
}

#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    seed: u64,
    started: String,
    version: &'a str,
}

impl RunDir {
    /// Creates `explicit`, or `<output_dir>/<command>-<timestamp>` with a
    /// numeric suffix if that already exists, and writes the snapshot.
    pub fn create(config: &RunConfig, command: &str, explicit: Option<&Path>) -> anyhow::Result<Self> {
        let now = chrono::Local::now();
        let root = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let base = config.output_dir.join(format!("{command}-{}", now.format("%Y%m%d-%H%M%S")));
                let mut root = base.clone();
                let mut i = 1;
                while root.exists() {
                    root = PathBuf::from(format!("{}-{i}", base.display()));
                    i += 1;
                }
                root
            }
        };
        for sub in ["checkpoints", "logs", "reports"] {
            fs::create_dir_all(root.join(sub)).with_context(|| format!("creating {}", root.join(sub).display()))?;
        }
        let dir = Self { root };
        dir.write_text("config.toml", &config.to_toml()?)?;
        dir.write_json(
            "run.json",
            &RunInfo {
                command,
                seed: config.seed,
                started: now.to_rfc3339(),
                version: env!("CARGO_PKG_VERSION"),
            },
        )?;
        log::info!("run directory {}", dir.root.display());
        Ok(dir)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write_text(&self, rel: &str, text: &str) -> anyhow::Result<PathBuf> {
        let p = self.path(rel);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, rel: &str, value: &T) -> anyhow::Result<PathBuf> {
        self.write_text(rel, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    /// Appends one JSON line to `rel`.
    pub fn append_jsonl<T: Serialize + ?Sized>(&self, rel: &str, value: &T) -> anyhow::Result<()> {
        let p = self.path(rel);
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&p)
            .with_context(|| format!("opening {}", p.display()))?;
        writeln!(f, "{}", serde_json::to_string(value)?)?;
        Ok(())
    }
}
