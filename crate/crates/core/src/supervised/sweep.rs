use serde::{Deserialize, Serialize};

use super::{test_auc, train_protocol, Protocol, ProtocolConfig, TrainRun};
use crate::data::{Dataset, Task};
use crate::nnet::ModelBundle;
use crate::{Error, Result};

/// A named starting point for the sweep, e.g. `pretrained` or `scratch`.
#[derive(Debug, Clone)]
pub struct BundleSource {
    pub name: String,
    pub bundle: ModelBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub fractions: Vec<f64>,
    pub tasks: Vec<Task>,
    pub protocols: Vec<Protocol>,
    pub seeds: Vec<u64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            fractions: vec![0.01, 0.1, 0.5, 1.0],
            tasks: Task::ALL.to_vec(),
            protocols: vec![Protocol::Ft, Protocol::Nc],
            seeds: vec![0],
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() || self.tasks.is_empty() || self.protocols.is_empty() || self.seeds.is_empty() {
            return Err(Error::config("sweep", "fractions, tasks, protocols and seeds must be non-empty"));
        }
        if self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::config("sweep.fractions", "every fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// One (source, protocol, task, fraction) cell, aggregated over seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub source: String,
    pub protocol: Protocol,
    pub task: Task,
    pub fraction: f64,
    pub seeds: Vec<u64>,
    /// Test AUC per seed.
    pub aucs: Vec<f64>,
    pub mean_auc: f64,
    pub selected_epochs: Vec<usize>,
    pub train_sizes: Vec<usize>,
    #[serde(skip)]
    pub runs: Vec<TrainRun>,
}

/// Runs the Cartesian product of `sources × protocols × tasks × fractions`,
/// each over every seed, and scores every run on `test`.
///
/// `base` supplies learning rates, epochs and batch size; protocol, task,
/// fraction and seed come from the grid. `on_cell` sees each finished cell.
#[allow(clippy::too_many_arguments)]
pub fn run_label_efficiency_sweep(
    sources: &[BundleSource],
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    grid: &SweepGrid,
    base: &ProtocolConfig,
    mut on_cell: impl FnMut(&SweepCell),
) -> Result<Vec<SweepCell>> {
    grid.validate()?;
    let mut cells = Vec::new();
    for source in sources {
        for &protocol in &grid.protocols {
            for &task in &grid.tasks {
                for &fraction in &grid.fractions {
                    let mut cell = SweepCell {
                        source: source.name.clone(),
                        protocol,
                        task,
                        fraction,
                        seeds: grid.seeds.clone(),
                        aucs: Vec::new(),
                        mean_auc: 0.0,
                        selected_epochs: Vec::new(),
                        train_sizes: Vec::new(),
                        runs: Vec::new(),
                    };
                    for &seed in &grid.seeds {
                        let config = ProtocolConfig {
                            protocol,
                            task,
                            label_fraction: fraction,
                            seed,
                            ..base.clone()
                        };
                        let run = train_protocol(&source.bundle, train, val, &config)?;
                        cell.aucs.push(test_auc(&run.bundle, task, test, config.execution)?);
                        cell.selected_epochs.push(run.selected_epoch);
                        cell.train_sizes.push(run.train_size);
                        cell.runs.push(run);
                    }
                    cell.mean_auc = cell.aucs.iter().sum::<f64>() / cell.aucs.len() as f64;
                    on_cell(&cell);
                    cells.push(cell);
                }
            }
        }
    }
    Ok(cells)
}
