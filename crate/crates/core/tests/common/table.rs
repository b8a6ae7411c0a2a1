//! The published per-task AUC table and its mean rows, as fixtures.

use std::path::PathBuf;

use lungssl::eval::{build_report, load_cells_csv, ReportLayout};
use lungssl::supervised::Protocol;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[derive(Debug, serde::Deserialize)]
pub struct MeanRow {
    pub pretraining: String,
    pub protocol: String,
    pub dataset: String,
    pub mean_auc: f64,
}

pub fn published_means() -> Vec<MeanRow> {
    let mut r = csv::Reader::from_path(fixture("reference_auc_means.csv")).unwrap();
    r.deserialize().map(|row| row.unwrap()).collect()
}

/// Rebuilds every mean row from the per-task fixture and returns
/// `(rows compared, worst absolute deviation)`.
pub fn mean_row_deviation() -> (usize, f64) {
    let cells = load_cells_csv(fixture("reference_auc_table.csv")).unwrap();
    let layout = ReportLayout::from_cells(&cells);
    let report = build_report(cells, &layout).unwrap();
    let mut worst: f64 = 0.0;
    let rows = published_means();
    for row in &rows {
        let protocol: Protocol = row.protocol.parse().unwrap();
        let got = report
            .mean(&row.pretraining, protocol, &row.dataset)
            .unwrap_or_else(|| panic!("no mean for {row:?}"));
        worst = worst.max((got - row.mean_auc).abs());
    }
    (rows.len(), worst)
}
