use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, ImageRecord, Task};
use crate::{rng, Error, Result};

const STREAM_SPLIT: u64 = 0x5011;
const STREAM_SUBSAMPLE: u64 = 0x50b5;

/// Train / validation / test patient ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: [0.70, 0.15, 0.15],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3], seed: u64) -> Result<Self> {
        let spec = Self { ratios, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(Error::config("split.ratios", "each ratio must lie in (0, 1)"));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "split.ratios",
                format!("ratios must sum to 1, got {sum}"),
            ));
        }
        Ok(())
    }

    /// Patient counts per split for `n` patients: floor at the train and
    /// train+val boundaries, remainder to test.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        // Guard against 0.7 * 10 landing a hair below 7.
        let cut = |frac: f64| ((frac * n as f64) + 1e-9).floor() as usize;
        let train = cut(self.ratios[0]).min(n);
        let train_val = cut(self.ratios[0] + self.ratios[1]).clamp(train, n);
        [train, train_val - train, n - train_val]
    }
}

/// Splits into `(labelled, unlabelled)` where unlabelled frames carry no
/// label for any task.
pub fn partition_labelled(dataset: &Dataset) -> (Dataset, Dataset) {
    let (lab, unlab): (Vec<_>, Vec<_>) = dataset
        .records()
        .iter()
        .cloned()
        .partition(|r| !r.labels.is_empty());
    (
        Dataset::from_validated(format!("{}-labelled", dataset.name), lab),
        Dataset::from_validated(format!("{}-unlabelled", dataset.name), unlab),
    )
}

/// Shuffles patient ids with the split seed and cuts at the cumulative
/// ratio boundaries. Record order inside each split follows the input.
pub fn split_by_patient(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let mut patients: Vec<&str> = dataset.patients().into_iter().collect();
    if patients.len() < 3 {
        return Err(Error::TooFewPatients(patients.len()));
    }
    let mut rng = rng::stream(spec.seed, &[STREAM_SPLIT]);
    patients.shuffle(&mut rng);
    let [n_train, n_val, _] = spec.counts(patients.len());

    let assignment: BTreeMap<&str, usize> = patients
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let part = if i < n_train {
                0
            } else if i < n_train + n_val {
                1
            } else {
                2
            };
            (*p, part)
        })
        .collect();

    let mut parts: [Vec<ImageRecord>; 3] = Default::default();
    for r in dataset.records() {
        parts[assignment[r.patient_id.as_str()]].push(r.clone());
    }
    let [train, val, test] = parts;
    Ok((
        Dataset::from_validated(format!("{}-train", dataset.name), train),
        Dataset::from_validated(format!("{}-val", dataset.name), val),
        Dataset::from_validated(format!("{}-test", dataset.name), test),
    ))
}

/// Keeps whole videos until the labelled-frame count for `task` first
/// reaches `fraction × total`.
///
/// Videos are ordered by a seeded, class-stratified shuffle keyed on each
/// video's majority label: the first two videos come from different classes
/// (when both exist) and the rest interleave proportionally. When the target
/// is at least two frames the prefix is extended until both classes appear.
/// The output holds only frames labelled for `task`, in input order.
pub fn subsample_labels(train: &Dataset, fraction: f64, task: Task, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config("label_fraction", "must lie in (0, 1]"));
    }
    let order = video_selection_order(train, task, seed);
    if order.is_empty() {
        return Err(Error::NoLabels(task.to_string()));
    }
    let total: usize = order.iter().map(|v| v.frames).sum();
    let target = fraction * total as f64;

    let mut chosen = BTreeSet::new();
    let mut count = 0usize;
    let mut classes = [false; 2];
    for v in &order {
        let need_more = (count as f64) < target || (target >= 2.0 && !(classes[0] && classes[1]));
        if !need_more {
            break;
        }
        chosen.insert(v.video_id);
        count += v.frames;
        classes[v.majority as usize] = true;
    }

    let records = train
        .records()
        .iter()
        .filter(|r| r.label(task).is_some() && chosen.contains(r.video_id.as_str()))
        .cloned()
        .collect();
    Ok(Dataset::from_validated(
        format!("{}-{task}-{fraction}", train.name),
        records,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct VideoEntry<'a> {
    pub video_id: &'a str,
    pub frames: usize,
    pub majority: u8,
}

/// The seeded video order used by [`subsample_labels`].
pub(crate) fn video_selection_order(train: &Dataset, task: Task, seed: u64) -> Vec<VideoEntry<'_>> {
    let mut by_class: [Vec<VideoEntry>; 2] = Default::default();
    for (video_id, frames) in train.videos() {
        let labels: Vec<u8> = frames.iter().filter_map(|r| r.label(task)).collect();
        if labels.is_empty() {
            continue;
        }
        let positives = labels.iter().filter(|&&l| l == 1).count();
        let majority = u8::from(2 * positives > labels.len());
        by_class[majority as usize].push(VideoEntry {
            video_id,
            frames: labels.len(),
            majority,
        });
    }

    let mut rng = rng::stream(seed, &[STREAM_SUBSAMPLE, task as u64]);
    for class in &mut by_class {
        class.shuffle(&mut rng);
    }
    let first_class = usize::from(rng.random_bool(0.5));
    let mut order = Vec::new();
    let mut rest: Vec<(f64, usize, VideoEntry)> = Vec::new();
    for c in [first_class, 1 - first_class] {
        let n = by_class[c].len();
        for (i, v) in by_class[c].iter().enumerate() {
            if i == 0 {
                order.push(*v);
            } else {
                rest.push(((i as f64 + 0.5) / n as f64, usize::from(c != first_class), *v));
            }
        }
    }
    rest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.extend(rest.into_iter().map(|(_, _, v)| v));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Image, Labels};

    fn dataset(patients: usize, videos: usize, frames: usize) -> Dataset {
        let mut records = Vec::new();
        for p in 0..patients {
            for v in 0..videos {
                let pleural = (p + v) % 3 == 0;
                let labels = if pleural {
                    Labels {
                        view: Some(1),
                        ab: None,
                        pe: Some(((p * 7 + v) % 2) as u8),
                    }
                } else {
                    Labels {
                        view: Some(0),
                        ab: Some(((p + v * 5) % 2) as u8),
                        pe: None,
                    }
                };
                for f in 0..frames {
                    records.push(
                        ImageRecord::new(
                            format!("p{p}v{v}f{f}"),
                            format!("p{p}"),
                            format!("p{p}v{v}"),
                            f as u32,
                            Image::filled(128, 128, 0.0),
                            labels,
                        )
                        .unwrap(),
                    );
                }
            }
        }
        Dataset::new("t", records).unwrap()
    }

    #[test]
    fn counts_follow_floor_rule() {
        let s = SplitSpec::new([0.7, 0.15, 0.15], 0).unwrap();
        assert_eq!(s.counts(10), [7, 1, 2]);
        let s = SplitSpec::new([0.34, 0.33, 0.33], 0).unwrap();
        assert_eq!(s.counts(3), [1, 1, 1]);
    }

    #[test]
    fn split_patient_counts_and_determinism() {
        let ds = dataset(10, 2, 3);
        let spec = SplitSpec::new([0.7, 0.15, 0.15], 11).unwrap();
        let (a, b, c) = split_by_patient(&ds, &spec).unwrap();
        assert_eq!(
            [a.patients().len(), b.patients().len(), c.patients().len()],
            [7, 1, 2]
        );
        let (a2, _, _) = split_by_patient(&ds, &spec).unwrap();
        let ids = |d: &Dataset| d.records().iter().map(|r| r.image_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&a2));
    }

    #[test]
    fn split_needs_three_patients() {
        let ds = dataset(2, 1, 1);
        assert!(matches!(
            split_by_patient(&ds, &SplitSpec::default()),
            Err(Error::TooFewPatients(2))
        ));
    }

    #[test]
    fn invalid_ratios() {
        assert!(SplitSpec::new([0.5, 0.5, 0.0], 0).is_err());
        assert!(SplitSpec::new([0.5, 0.3, 0.3], 0).is_err());
    }

    #[test]
    fn full_fraction_is_identity() {
        let ds = dataset(6, 3, 4);
        let sub = subsample_labels(&ds, 1.0, Task::Ab, 3).unwrap();
        let expected: BTreeSet<_> = ds.labelled(Task::Ab).iter().map(|r| r.image_id.clone()).collect();
        let got: BTreeSet<_> = sub.records().iter().map(|r| r.image_id.clone()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn minimal_prefix_just_above_one_video() {
        let ds = dataset(8, 3, 5);
        let task = Task::Ab;
        let total = ds.labelled(task).len();
        let fraction = (5.0 + 0.5) / total as f64;
        let sub = subsample_labels(&ds, fraction, task, 9).unwrap();

        // brute force: the shortest prefix of the seeded order whose frame
        // count reaches the target
        let order = video_selection_order(&ds, task, 9);
        let target = fraction * total as f64;
        let mut best = None;
        for k in 1..=order.len() {
            let n: usize = order[..k].iter().map(|v| v.frames).sum();
            if n as f64 >= target {
                best = Some(k);
                break;
            }
        }
        let k = best.unwrap();
        assert_eq!(k, 2);
        let expected: BTreeSet<&str> = order[..k].iter().map(|v| v.video_id).collect();
        let got: BTreeSet<&str> = sub.records().iter().map(|r| r.video_id.as_str()).collect();
        assert_eq!(got, expected);
        assert_eq!(sub.len(), 10);
    }

    #[test]
    fn both_classes_when_target_allows() {
        let ds = dataset(12, 3, 10);
        let total = ds.labelled(Task::Ab).len();
        // target of 2 frames, far below one video
        let sub = subsample_labels(&ds, 2.0 / total as f64, Task::Ab, 1).unwrap();
        assert_eq!(sub.class_counts(Task::Ab).iter().filter(|&&c| c > 0).count(), 2);
    }

    #[test]
    fn no_labels_error() {
        let ds = dataset(3, 1, 1);
        let none = Dataset::from_validated(
            "x",
            ds.records()
                .iter()
                .filter(|r| r.label(Task::Pe).is_none())
                .cloned()
                .collect(),
        );
        assert!(matches!(
            subsample_labels(&none, 0.5, Task::Pe, 0),
            Err(Error::NoLabels(_))
        ));
    }
}
