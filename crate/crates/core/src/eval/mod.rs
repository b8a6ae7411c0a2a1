//! Metrics, Table-style reports, feature export and 2-D projections.

mod features;
mod metrics;
mod projection;
mod report;

pub use features::export_features;
pub use metrics::{auc, format_metric, geometric_mean, threshold_metrics, ThresholdMetrics};
pub use projection::{pca_2d, project_2d, tsne_2d, Projection, TsneConfig};
pub use report::{
    build_report, evaluate_cell, load_cells_csv, write_cells_csv, EvalReport, MeanCell, ReportCell, ReportLayout,
    DEFAULT_THRESHOLD,
};
