//! Frame records, datasets and everything that produces or partitions them.

mod manifest;
mod preprocess;
mod split;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, FRAME_PIXELS, FRAME_SIZE};

pub use manifest::{export_manifest, load_manifest, MANIFEST_HEADER};
pub use preprocess::{preprocess, resize_bilinear};
pub use split::{partition_labelled, split_by_patient, subsample_labels, SplitSpec};
pub use synth::{generate_synthetic, generate_synthetic_with_scenes, Scene, SyntheticConfig};

/// The three binary tasks, in tree order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Parenchymal (0) versus pleural (1) view.
    View,
    /// A-lines (0) versus B-lines (1); parenchymal views only.
    Ab,
    /// No effusion (0) versus effusion (1); pleural views only.
    Pe,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::View, Task::Ab, Task::Pe];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::View => "view",
            Task::Ab => "ab",
            Task::Pe => "pe",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "view" => Ok(Task::View),
            "ab" | "a/b" => Ok(Task::Ab),
            "pe" => Ok(Task::Pe),
            other => Err(Error::config("task", format!("unknown task `{other}`"))),
        }
    }
}

pub const PARENCHYMAL: u8 = 0;
pub const PLEURAL: u8 = 1;

/// Row-major grayscale image with `f32` intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn is_frame(&self) -> bool {
        self.width == FRAME_SIZE && self.height == FRAME_SIZE
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Per-task labels using the 0/1 class encodings of [`Task`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub view: Option<u8>,
    pub ab: Option<u8>,
    pub pe: Option<u8>,
}

impl Labels {
    pub fn get(&self, task: Task) -> Option<u8> {
        match task {
            Task::View => self.view,
            Task::Ab => self.ab,
            Task::Pe => self.pe,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.view.is_none() && self.ab.is_none() && self.pe.is_none()
    }

    /// Checks the 0/1 encodings and that each leaf label sits under the
    /// matching view.
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (task, v) in [
            (Task::View, self.view),
            (Task::Ab, self.ab),
            (Task::Pe, self.pe),
        ] {
            if let Some(v) = v {
                if v > 1 {
                    return Err(format!("{task} label must be 0 or 1, got {v}"));
                }
            }
        }
        if self.ab.is_some() && self.view != Some(PARENCHYMAL) {
            return Err("ab label requires view_label = parenchymal (0)".into());
        }
        if self.pe.is_some() && self.view != Some(PLEURAL) {
            return Err("pe label requires view_label = pleural (1)".into());
        }
        Ok(())
    }
}

/// One preprocessed frame and its identity.
#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub image_id: String,
    pub patient_id: String,
    pub video_id: String,
    pub frame_index: u32,
    pub pixels: Arc<Image>,
    pub labels: Labels,
}

impl ImageRecord {
    pub fn new(
        image_id: impl Into<String>,
        patient_id: impl Into<String>,
        video_id: impl Into<String>,
        frame_index: u32,
        pixels: Image,
        labels: Labels,
    ) -> Result<Self> {
        let image_id = image_id.into();
        if !pixels.is_frame() {
            return Err(Error::Shape(format!(
                "record {image_id}: pixels must be {FRAME_SIZE}x{FRAME_SIZE}, got {}x{}",
                pixels.width, pixels.height
            )));
        }
        if !pixels.in_unit_range() {
            return Err(Error::Applicability {
                image_id,
                message: "pixel values must lie in [0, 1]".into(),
            });
        }
        labels.validate().map_err(|message| Error::Applicability {
            image_id: image_id.clone(),
            message,
        })?;
        Ok(Self {
            image_id,
            patient_id: patient_id.into(),
            video_id: video_id.into(),
            frame_index,
            pixels: Arc::new(pixels),
            labels,
        })
    }

    pub fn label(&self, task: Task) -> Option<u8> {
        self.labels.get(task)
    }
}

/// An ordered, immutable collection of frames.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub name: String,
    records: Vec<ImageRecord>,
}

impl Dataset {
    /// Builds a dataset, enforcing frame-key uniqueness and the one-patient-
    /// per-video rule.
    pub fn new(name: impl Into<String>, records: Vec<ImageRecord>) -> Result<Self> {
        let name = name.into();
        let mut owner: HashMap<&str, &str> = HashMap::new();
        let mut keys = BTreeSet::new();
        for r in &records {
            if let Some(prev) = owner.insert(&r.video_id, &r.patient_id) {
                if prev != r.patient_id {
                    return Err(Error::Applicability {
                        image_id: r.image_id.clone(),
                        message: format!(
                            "video {} belongs to both patient {prev} and {}",
                            r.video_id, r.patient_id
                        ),
                    });
                }
            }
            if !keys.insert((&r.patient_id, &r.video_id, r.frame_index)) {
                return Err(Error::Applicability {
                    image_id: r.image_id.clone(),
                    message: format!(
                        "duplicate frame ({}, {}, {})",
                        r.patient_id, r.video_id, r.frame_index
                    ),
                });
            }
        }
        Ok(Self { name, records })
    }

    /// For subsets of an already-validated dataset.
    pub(crate) fn from_validated(name: impl Into<String>, records: Vec<ImageRecord>) -> Self {
        Self {
            name: name.into(),
            records,
        }
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn patients(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.patient_id.as_str()).collect()
    }

    /// Records carrying a label for `task`.
    pub fn labelled(&self, task: Task) -> Vec<&ImageRecord> {
        self.records
            .iter()
            .filter(|r| r.label(task).is_some())
            .collect()
    }

    /// Per-class counts `[negatives, positives]` for `task`.
    pub fn class_counts(&self, task: Task) -> [usize; 2] {
        let mut counts = [0; 2];
        for r in &self.records {
            if let Some(l) = r.label(task) {
                counts[l as usize] += 1;
            }
        }
        counts
    }

    /// Concatenates datasets (used for the pretraining union).
    pub fn union(name: impl Into<String>, parts: &[&Dataset]) -> Result<Dataset> {
        let records = parts.iter().flat_map(|d| d.records.iter().cloned()).collect();
        Dataset::new(name, records)
    }

    /// Frame pixels stacked into one contiguous `len × 128·128` buffer.
    pub fn stack_pixels(records: &[&ImageRecord]) -> Vec<f32> {
        let mut out = Vec::with_capacity(records.len() * FRAME_PIXELS);
        for r in records {
            out.extend_from_slice(&r.pixels.data);
        }
        out
    }

    pub(crate) fn videos(&self) -> BTreeMap<&str, Vec<&ImageRecord>> {
        let mut map: BTreeMap<&str, Vec<&ImageRecord>> = BTreeMap::new();
        for r in &self.records {
            map.entry(r.video_id.as_str()).or_default().push(r);
        }
        map
    }
}
