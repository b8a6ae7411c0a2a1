use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{Dataset, Task};
use crate::exec::Execution;
use crate::nnet::FeatureExtractor;
use crate::{Error, Result};

/// Writes one CSV row per record, in dataset order:
/// `image_id,view_label,ab_label,pe_label,f0..f{D-1}`. Absent labels are
/// empty cells.
pub fn export_features(
    extractor: &FeatureExtractor<f32>,
    dataset: &Dataset,
    path: impl AsRef<Path>,
    exec: Execution,
) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let images: Vec<_> = dataset.records().iter().map(|r| r.pixels.as_ref()).collect();
    let features = extractor.features(&images, exec)?;

    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut header = vec!["image_id".to_string()];
    header.extend(Task::ALL.iter().map(|t| format!("{t}_label")));
    header.extend((0..extractor.feature_dim()).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for (i, r) in dataset.records().iter().enumerate() {
        let mut row = vec![r.image_id.clone()];
        row.extend(Task::ALL.iter().map(|&t| r.label(t).map_or(String::new(), |l| l.to_string())));
        row.extend(features.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}
