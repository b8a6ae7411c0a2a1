use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{auc, format_metric, geometric_mean, threshold_metrics};
use crate::data::{Dataset, Task};
use crate::exec::Execution;
use crate::nnet::ModelBundle;
use crate::supervised::{score_task, Protocol};
use crate::{Error, Result};

/// Operating point for the threshold metrics.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// One (task, pretraining, protocol, test set) result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub task: Task,
    /// Pretraining method, or `none` for random initialization.
    pub pretraining: String,
    pub protocol: Protocol,
    /// Test set identity, e.g. `local` or `external`.
    pub dataset: String,
    pub auc: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
}

/// Geometric mean over tasks for one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCell {
    pub pretraining: String,
    pub protocol: Protocol,
    pub dataset: String,
    pub auc: f64,
}

/// Which rows and columns a report must contain, in display order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportLayout {
    pub tasks: Vec<Task>,
    pub pretrainings: Vec<String>,
    pub protocols: Vec<Protocol>,
    pub datasets: Vec<String>,
}

fn push_unique<T: PartialEq + Clone>(v: &mut Vec<T>, item: &T) {
    if !v.contains(item) {
        v.push(item.clone());
    }
}

impl ReportLayout {
    /// Every value that occurs in `cells`, in first-seen order (tasks and
    /// protocols in their canonical order).
    pub fn from_cells(cells: &[ReportCell]) -> Self {
        let mut layout = ReportLayout {
            tasks: Vec::new(),
            pretrainings: Vec::new(),
            protocols: Vec::new(),
            datasets: Vec::new(),
        };
        for c in cells {
            push_unique(&mut layout.tasks, &c.task);
            push_unique(&mut layout.pretrainings, &c.pretraining);
            push_unique(&mut layout.protocols, &c.protocol);
            push_unique(&mut layout.datasets, &c.dataset);
        }
        layout.tasks.sort();
        layout.protocols.sort();
        layout
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub layout: ReportLayout,
    pub cells: Vec<ReportCell>,
    pub means: Vec<MeanCell>,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

type Key<'a> = (Task, &'a str, Protocol, &'a str);

/// Assembles a report covering exactly `layout`. A cell the layout requires
/// but `cells` lacks is an error, as is a duplicate.
pub fn build_report(cells: Vec<ReportCell>, layout: &ReportLayout) -> Result<EvalReport> {
    let mut index: BTreeMap<Key<'_>, &ReportCell> = BTreeMap::new();
    for c in &cells {
        for (name, v) in [
            ("auc", Some(c.auc)),
            ("precision", c.precision),
            ("recall", c.recall),
            ("specificity", c.specificity),
        ] {
            if let Some(v) = v.filter(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Corrupt(format!(
                    "{name} {v} outside [0, 1] for {} {} {} {}",
                    c.task, c.pretraining, c.protocol, c.dataset
                )));
            }
        }
        let key = (c.task, c.pretraining.as_str(), c.protocol, c.dataset.as_str());
        if index.insert(key, c).is_some() {
            return Err(Error::Corrupt(format!(
                "duplicate cell task={} pretraining={} protocol={} dataset={}",
                c.task, c.pretraining, c.protocol, c.dataset
            )));
        }
    }

    let mut ordered = Vec::new();
    let mut means = Vec::new();
    for dataset in &layout.datasets {
        for pretraining in &layout.pretrainings {
            for &protocol in &layout.protocols {
                let mut aucs = Vec::with_capacity(layout.tasks.len());
                for &task in &layout.tasks {
                    let cell = index
                        .get(&(task, pretraining.as_str(), protocol, dataset.as_str()))
                        .ok_or_else(|| {
                            Error::MissingCell(format!(
                                "task={task} pretraining={pretraining} protocol={protocol} dataset={dataset}"
                            ))
                        })?;
                    aucs.push(cell.auc);
                    ordered.push((*cell).clone());
                }
                means.push(MeanCell {
                    pretraining: pretraining.clone(),
                    protocol,
                    dataset: dataset.clone(),
                    auc: geometric_mean(&aucs)?,
                });
            }
        }
    }
    Ok(EvalReport {
        layout: layout.clone(),
        cells: ordered,
        means,
        provenance: BTreeMap::new(),
    })
}

impl EvalReport {
    pub fn cell(&self, task: Task, pretraining: &str, protocol: Protocol, dataset: &str) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.task == task && c.pretraining == pretraining && c.protocol == protocol && c.dataset == dataset)
    }

    pub fn mean(&self, pretraining: &str, protocol: Protocol, dataset: &str) -> Option<f64> {
        self.means
            .iter()
            .find(|m| m.pretraining == pretraining && m.protocol == protocol && m.dataset == dataset)
            .map(|m| m.auc)
    }

    /// AUC table with one row per (task, pretraining), a geometric-mean
    /// block at the bottom and one column per (test set, protocol). When any
    /// cell carries threshold metrics a second table lists them.
    pub fn render_text(&self) -> String {
        let l = &self.layout;
        let pw = l.pretrainings.iter().map(|p| p.len()).max().unwrap_or(0).max("Pretraining".len());
        let mut out = String::new();
        let _ = write!(out, "{:<6} {:<pw$}", "Task", "Pretraining");
        for d in &l.datasets {
            for p in &l.protocols {
                let _ = write!(out, " {:>12}", format!("{d}/{p}"));
            }
        }
        out.push('\n');
        let width = out.trim_end().chars().count();
        let rule = "-".repeat(width);
        let _ = writeln!(out, "{rule}");

        let row = |out: &mut String, label: &str, pre: &str, value: &dyn Fn(&str, Protocol) -> Option<f64>| {
            let _ = write!(out, "{label:<6} {pre:<pw$}");
            for d in &l.datasets {
                for &p in &l.protocols {
                    let _ = write!(out, " {:>12}", format_metric(value(d, p)));
                }
            }
            out.push('\n');
        };
        for &task in &l.tasks {
            for (i, pre) in l.pretrainings.iter().enumerate() {
                let label = if i == 0 { task.as_str() } else { "" };
                row(&mut out, label, pre, &|d, p| self.cell(task, pre, p, d).map(|c| c.auc));
            }
            let _ = writeln!(out, "{rule}");
        }
        for (i, pre) in l.pretrainings.iter().enumerate() {
            let label = if i == 0 { "mean" } else { "" };
            row(&mut out, label, pre, &|d, p| self.mean(pre, p, d));
        }

        if self
            .cells
            .iter()
            .any(|c| c.precision.is_some() || c.recall.is_some() || c.specificity.is_some())
        {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "{:<10} {:<6} {:<pw$} {:<4} {:>9} {:>9} {:>11}",
                "Dataset", "Task", "Pretraining", "", "Precision", "Recall", "Specificity"
            );
            for c in &self.cells {
                let _ = writeln!(
                    out,
                    "{:<10} {:<6} {:<pw$} {:<4} {:>9} {:>9} {:>11}",
                    c.dataset,
                    c.task.as_str(),
                    c.pretraining,
                    c.protocol.to_string(),
                    format_metric(c.precision),
                    format_metric(c.recall),
                    format_metric(c.specificity)
                );
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Scores `bundle`'s head for `task` on `test` and fills every metric.
pub fn evaluate_cell(
    bundle: &ModelBundle,
    task: Task,
    test: &Dataset,
    pretraining: &str,
    protocol: Protocol,
    dataset: &str,
    exec: Execution,
) -> Result<ReportCell> {
    let (scores, labels) = score_task(bundle, task, test, exec)?;
    let m = threshold_metrics(&scores, &labels, DEFAULT_THRESHOLD)?;
    Ok(ReportCell {
        task,
        pretraining: pretraining.to_string(),
        protocol,
        dataset: dataset.to_string(),
        auc: auc(&scores, &labels)?,
        precision: m.precision,
        recall: m.recall,
        specificity: m.specificity,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CellRow {
    task: String,
    pretraining: String,
    protocol: String,
    dataset: String,
    auc: f64,
    #[serde(default)]
    precision: Option<f64>,
    #[serde(default)]
    recall: Option<f64>,
    #[serde(default)]
    specificity: Option<f64>,
}

/// Reads cells from a CSV with header
/// `task,pretraining,protocol,dataset,auc[,precision,recall,specificity]`.
pub fn load_cells_csv(path: impl AsRef<Path>) -> Result<Vec<ReportCell>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Serialization(format!("{}: {other:?}", path.display())),
    })?;
    let mut cells = Vec::new();
    for (i, row) in reader.deserialize::<CellRow>().enumerate() {
        let row = row.map_err(|e| Error::Manifest {
            row: i + 1,
            message: e.to_string(),
        })?;
        let context = |e: Error| Error::Manifest {
            row: i + 1,
            message: e.to_string(),
        };
        cells.push(ReportCell {
            task: row.task.parse().map_err(context)?,
            pretraining: row.pretraining,
            protocol: row.protocol.parse().map_err(context)?,
            dataset: row.dataset,
            auc: row.auc,
            precision: row.precision,
            recall: row.recall,
            specificity: row.specificity,
        });
    }
    Ok(cells)
}

pub fn write_cells_csv(cells: &[ReportCell], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))?;
    for c in cells {
        w.serialize(CellRow {
            task: c.task.to_string(),
            pretraining: c.pretraining.clone(),
            protocol: c.protocol.as_str().to_string(),
            dataset: c.dataset.clone(),
            auc: c.auc,
            precision: c.precision,
            recall: c.recall,
            specificity: c.specificity,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(task: Task, pre: &str, protocol: Protocol, auc: f64) -> ReportCell {
        ReportCell {
            task,
            pretraining: pre.into(),
            protocol,
            dataset: "local".into(),
            auc,
            precision: None,
            recall: None,
            specificity: None,
        }
    }

    #[test]
    fn single_task_mean_is_identity() {
        let cells = vec![cell(Task::Pe, "simclr", Protocol::Lc, 0.83)];
        let r = build_report(cells.clone(), &ReportLayout::from_cells(&cells)).unwrap();
        assert!((r.mean("simclr", Protocol::Lc, "local").unwrap() - 0.83).abs() < 1e-15);
    }

    #[test]
    fn missing_cell_is_named() {
        let cells = vec![
            cell(Task::View, "simclr", Protocol::Lc, 0.9),
            cell(Task::Ab, "simclr", Protocol::Lc, 0.9),
            cell(Task::View, "none", Protocol::Lc, 0.9),
        ];
        let layout = ReportLayout::from_cells(&cells);
        match build_report(cells, &layout) {
            Err(Error::MissingCell(msg)) => assert!(msg.contains("task=ab") && msg.contains("pretraining=none")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut cells = vec![
            cell(Task::View, "simclr", Protocol::Ft, 0.982),
            cell(Task::Ab, "simclr", Protocol::Ft, 0.976),
            cell(Task::Pe, "simclr", Protocol::Ft, 0.925),
        ];
        cells[0].precision = Some(0.5);
        let layout = ReportLayout::from_cells(&cells);
        let a = build_report(cells.clone(), &layout).unwrap();
        let b = build_report(cells, &layout).unwrap();
        assert_eq!(a.render_text(), b.render_text());
        assert!(a.render_text().contains("0.961"));
        assert!(a.render_text().contains("n/a"));
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }
}
