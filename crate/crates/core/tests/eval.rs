mod common;

use common::invariants::{arch_with_heads, tiny_dataset};
use lungssl::data::Task;
use lungssl::eval::{evaluate_cell, export_features, project_2d, Projection};
use lungssl::exec::Execution;
use lungssl::nnet::{init_bundle, Matrix};
use lungssl::supervised::Protocol;

#[test]
fn exported_features_match_the_extractor() {
    let data = tiny_dataset(3, 0.3, 1);
    let b = init_bundle(&arch_with_heads(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out/features.csv");
    export_features(&b.extractor, &data, &path, Execution::Parallel).unwrap();

    let mut reader = csv::Reader::from_path(&path).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(&header[0], "image_id");
    assert_eq!(&header[1], "view_label");
    assert_eq!(header.len(), 4 + b.feature_dim());
    let images: Vec<_> = data.records().iter().map(|r| r.pixels.as_ref()).collect();
    let features = b.extractor.features(&images, Execution::Sequential).unwrap();
    let rows: Vec<_> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), data.len());
    for (i, (row, r)) in rows.iter().zip(data.records()).enumerate() {
        assert_eq!(&row[0], r.image_id);
        assert_eq!(row[1].is_empty(), r.label(Task::View).is_none());
        for (j, v) in features.row(i).iter().enumerate() {
            assert_eq!(row[4 + j].parse::<f32>().unwrap(), *v);
        }
    }
}

#[test]
fn projections_of_features_are_n_by_2() {
    let data = tiny_dataset(3, 0.0, 2);
    let b = init_bundle(&arch_with_heads(), 2).unwrap();
    let images: Vec<_> = data.records().iter().map(|r| r.pixels.as_ref()).collect();
    let f = b.extractor.features(&images, Execution::Parallel).unwrap();
    let f = Matrix::from_vec(f.rows, f.cols, f.data.iter().map(|&v| v as f64).collect());
    for method in [Projection::Pca, Projection::Tsne] {
        let p = project_2d(&f, method).unwrap();
        assert_eq!((p.rows, p.cols), (data.len(), 2));
        assert!(p.data.iter().all(|v| v.is_finite()));
        assert_eq!(project_2d(&f, method).unwrap().data, p.data);
    }
}

#[test]
fn untrained_head_cell_has_chance_auc() {
    // A zero-initialized output layer scores every frame 0.5.
    let data = tiny_dataset(4, 0.0, 3);
    let b = init_bundle(&arch_with_heads(), 3).unwrap();
    let cell = evaluate_cell(&b, Task::View, &data, "none", Protocol::Lc, "local", Execution::Parallel).unwrap();
    assert_eq!(cell.auc, 0.5);
    assert_eq!(cell.pretraining, "none");
}
