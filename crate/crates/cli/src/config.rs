//! Run configuration: one TOML file plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use lungssl::augment::AugmentationPolicy;
use lungssl::data::{SplitSpec, SyntheticConfig};
use lungssl::eval::Projection;
use lungssl::exec::Execution;
use lungssl::inference::{BenchmarkConfig, TreeSpec};
use lungssl::nnet::ArchitectureConfig;
use lungssl::ssl::SslConfig;
use lungssl::supervised::{ProtocolConfig, SweepGrid};
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the seed of every block below.
    pub seed: u64,
    pub execution: Execution,
    /// Parent of the timestamped run directories.
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub augmentation: AugmentationPolicy,
    pub architecture: ArchitectureConfig,
    pub ssl: SslConfig,
    pub train: ProtocolConfig,
    pub sweep: SweepGrid,
    pub bench: BenchConfig,
    pub tree: TreeSpec,
    pub model: ModelConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            execution: Execution::default(),
            output_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            augmentation: AugmentationPolicy::default(),
            architecture: ArchitectureConfig::default(),
            ssl: SslConfig::default(),
            train: ProtocolConfig::default(),
            sweep: SweepGrid::default(),
            bench: BenchConfig::default(),
            tree: TreeSpec::default(),
            model: ModelConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Exactly one of `manifest` or `synthetic`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
    /// Train / validation / test patient ratios.
    pub split: Option<[f64; 3]>,
    /// Name of the data source in reports.
    pub name: Option<String>,
}

impl DataConfig {
    pub fn split_spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            ratios: self.split.unwrap_or(SplitSpec::default().ratios),
            seed,
        }
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| "local".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    SerialCnns,
    SharedBackbone,
    #[default]
    Both,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    #[serde(flatten)]
    pub run: BenchmarkConfig,
    pub mode: BenchMode,
}

/// Input checkpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Bundle used by train, sweep, shared-mode inference and eval.
    pub checkpoint: Option<PathBuf>,
    /// Further bundles to evaluate alongside `checkpoint`.
    pub extra: Vec<PathBuf>,
    /// Per-task bundles for serial-mode inference; missing entries fall back
    /// to `checkpoint`.
    pub serial: SerialModels,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SerialModels {
    pub view: Option<PathBuf>,
    pub ab: Option<PathBuf>,
    pub pe: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Build the report from a per-cell CSV instead of checkpoints.
    pub cells: Option<PathBuf>,
    /// Also write the test-set feature table.
    pub export_features: bool,
    /// Also write a 2-D projection of the test-set features.
    pub projection: Option<Projection>,
}

impl RunConfig {
    /// Reads `path` (if any) and applies the overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .map_err(|e| UsageError(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let mut config: RunConfig = Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| UsageError(format!("config: {e}")))?;
        config.propagate();
        Ok(config)
    }

    /// Copies the global seed and execution mode into every block.
    fn propagate(&mut self) {
        let seed = self.seed;
        if let Some(s) = &mut self.data.synthetic {
            s.seed = seed;
        }
        self.ssl.seed = seed;
        self.ssl.execution = self.execution;
        self.train.seed = seed;
        self.train.execution = self.execution;
    }

    /// The snapshot written into every run directory.
    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Checks that exactly one data source is set and that every referenced
    /// path exists.
    pub fn validate_data(&self) -> anyhow::Result<()> {
        match (&self.data.manifest, &self.data.synthetic) {
            (Some(_), Some(_)) | (None, None) => {
                bail!(UsageError("data: set exactly one of data.manifest or data.synthetic".into()))
            }
            (Some(p), None) if !p.exists() => bail!(UsageError(format!("data.manifest: {} does not exist", p.display()))),
            _ => {}
        }
        if let Some(s) = &self.data.synthetic {
            s.validate()?;
        }
        self.data.split_spec(self.seed).validate()?;
        Ok(())
    }

    pub fn validate_paths(&self) -> anyhow::Result<()> {
        let m = &self.model;
        let named = [("model.checkpoint", &m.checkpoint), ("model.serial.view", &m.serial.view), ("model.serial.ab", &m.serial.ab), ("model.serial.pe", &m.serial.pe), ("eval.cells", &self.eval.cells)];
        for (field, p) in named {
            if let Some(p) = p {
                if !p.exists() {
                    bail!(UsageError(format!("{field}: {} does not exist", p.display())));
                }
            }
        }
        for p in &m.extra {
            if !p.exists() {
                bail!(UsageError(format!("model.extra: {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

/// `a.b.c=value`, where `value` is parsed as a TOML literal and taken as a
/// plain string when that fails.
fn apply_override(root: &mut toml::Table, spec: &str) -> anyhow::Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| UsageError(format!("--set {spec:?}: expected key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        bail!(UsageError(format!("--set {spec:?}: bad key")));
    }
    let value = parse_literal(raw.trim());
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().unwrap();
    let mut table = root;
    for p in parts {
        let entry = table.entry(p).or_insert_with(|| Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| UsageError(format!("--set {spec:?}: {p} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
