//! Decision-tree inference: the view classifier routes each frame to the
//! A/B-lines or the effusion classifier.
//!
//! Two execution modes:
//!
//! * **serial CNNs** – every stage is a complete network, so a prediction
//!   runs two full feature extractors;
//! * **shared backbone** – one extractor runs once and all heads read its
//!   features.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Image, Task};
use crate::exec::Execution;
use crate::nnet::{count_flops, FeatureExtractor, FlopCount, Head, ModelBundle};
use crate::supervised::sigmoid;
use crate::{Error, Result};

/// Feature extractor as seen by the tree.
pub trait Backbone: Send + Sync {
    fn features(&self, image: &Image) -> Result<Vec<f32>>;
    fn flops(&self) -> FlopCount;
}

/// Task head as seen by the tree.
pub trait LogitHead: Send + Sync {
    fn logit(&self, features: &[f32]) -> Result<f32>;
    fn flops(&self) -> FlopCount;
}

impl Backbone for FeatureExtractor<f32> {
    fn features(&self, image: &Image) -> Result<Vec<f32>> {
        if image.width != self.input_size || image.height != self.input_size {
            return Err(Error::Shape(format!(
                "extractor expects {s}x{s} frames, got {}x{}",
                image.width,
                image.height,
                s = self.input_size
            )));
        }
        Ok(self.forward_sample(&image.data))
    }

    fn flops(&self) -> FlopCount {
        count_flops(self)
    }
}

impl LogitHead for Head<f32> {
    fn logit(&self, features: &[f32]) -> Result<f32> {
        Head::logit(self, features)
    }

    fn flops(&self) -> FlopCount {
        count_flops(self)
    }
}

/// An end-to-end network: its own backbone plus one head.
pub struct Cnn {
    pub backbone: Box<dyn Backbone>,
    pub head: Box<dyn LogitHead>,
}

impl Cnn {
    /// The bundle's extractor and its head for `task`.
    pub fn from_bundle(bundle: &ModelBundle, task: Task) -> Result<Self> {
        Ok(Self {
            backbone: Box::new(bundle.extractor.clone()),
            head: Box::new(bundle.head(task)?.clone()),
        })
    }

    fn logit(&self, image: &Image) -> Result<f32> {
        self.head.logit(&self.backbone.features(image)?)
    }

    fn flops(&self) -> FlopCount {
        self.backbone.flops() + self.head.flops()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    SerialCnns,
    SharedBackbone,
}

impl InferenceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InferenceMode::SerialCnns => "serial_cnns",
            InferenceMode::SharedBackbone => "shared_backbone",
        }
    }
}

impl fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "serial_cnns" | "serial" => Ok(InferenceMode::SerialCnns),
            "shared_backbone" | "shared" => Ok(InferenceMode::SharedBackbone),
            _ => Err(Error::config(
                "mode",
                format!("unknown mode {s:?} (expected serial_cnns or shared_backbone)"),
            )),
        }
    }
}

/// Models for every node of the tree. Leaf models are optional; routing to
/// a missing one is an error.
pub enum TreeModels {
    Serial {
        view: Cnn,
        ab: Option<Cnn>,
        pe: Option<Cnn>,
    },
    Shared {
        backbone: Box<dyn Backbone>,
        view: Box<dyn LogitHead>,
        ab: Option<Box<dyn LogitHead>>,
        pe: Option<Box<dyn LogitHead>>,
    },
}

impl TreeModels {
    /// Three end-to-end networks, one per task; each bundle must hold the
    /// head for its task.
    pub fn serial(view: &ModelBundle, ab: &ModelBundle, pe: &ModelBundle) -> Result<Self> {
        Ok(TreeModels::Serial {
            view: Cnn::from_bundle(view, Task::View)?,
            ab: Some(Cnn::from_bundle(ab, Task::Ab)?),
            pe: Some(Cnn::from_bundle(pe, Task::Pe)?),
        })
    }

    /// One extractor and the bundle's view, A/B and effusion heads.
    pub fn shared(bundle: &ModelBundle) -> Result<Self> {
        let head = |t: Task| -> Option<Box<dyn LogitHead>> {
            bundle.heads.get(&t).map(|h| Box::new(h.clone()) as Box<dyn LogitHead>)
        };
        Ok(TreeModels::Shared {
            backbone: Box::new(bundle.extractor.clone()),
            view: Box::new(bundle.head(Task::View)?.clone()),
            ab: head(Task::Ab),
            pe: head(Task::Pe),
        })
    }

    pub fn mode(&self) -> InferenceMode {
        match self {
            TreeModels::Serial { .. } => InferenceMode::SerialCnns,
            TreeModels::Shared { .. } => InferenceMode::SharedBackbone,
        }
    }

    /// Operations for one prediction: the root stage plus the more expensive
    /// of the two leaves.
    pub fn flops_per_prediction(&self) -> FlopCount {
        fn costlier(a: Option<FlopCount>, b: Option<FlopCount>) -> FlopCount {
            match (a, b) {
                (Some(a), Some(b)) => {
                    if b.total > a.total {
                        b
                    } else {
                        a
                    }
                }
                (a, b) => a.or(b).unwrap_or_default(),
            }
        }
        match self {
            TreeModels::Serial { view, ab, pe } => {
                view.flops() + costlier(ab.as_ref().map(Cnn::flops), pe.as_ref().map(Cnn::flops))
            }
            TreeModels::Shared { backbone, view, ab, pe } => {
                backbone.flops()
                    + view.flops()
                    + costlier(ab.as_ref().map(|h| h.flops()), pe.as_ref().map(|h| h.flops()))
            }
        }
    }
}

/// Routing rule: the root is the view task; frames with view probability
/// below `threshold` (parenchymal) go to A/B, the rest to effusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeSpec {
    pub threshold: f64,
}

impl Default for TreeSpec {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

impl TreeSpec {
    pub fn route(&self, view_probability: f64) -> Task {
        if view_probability < self.threshold {
            Task::Ab
        } else {
            Task::Pe
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub view_s: f64,
    pub leaf_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeOutcome {
    pub view_probability: f64,
    pub routed_task: Task,
    pub leaf_probability: f64,
    pub mode: InferenceMode,
    pub timings: StageTimings,
}

/// Timings are measurements, not results, so equality ignores them.
impl PartialEq for TreeOutcome {
    fn eq(&self, other: &Self) -> bool {
        self.view_probability.to_bits() == other.view_probability.to_bits()
            && self.routed_task == other.routed_task
            && self.leaf_probability.to_bits() == other.leaf_probability.to_bits()
            && self.mode == other.mode
    }
}

fn missing(task: Task) -> Error {
    Error::MissingModel(format!("no model for routed task {task}"))
}

/// Runs the tree on one preprocessed frame.
pub fn infer_tree(image: &Image, models: &TreeModels, spec: &TreeSpec) -> Result<TreeOutcome> {
    let start = Instant::now();
    let (view_probability, routed_task, leaf_logit, split) = match models {
        TreeModels::Serial { view, ab, pe } => {
            let p = sigmoid(view.logit(image)? as f64);
            let split = start.elapsed();
            let task = spec.route(p);
            let leaf = if task == Task::Ab { ab } else { pe };
            let leaf = leaf.as_ref().ok_or_else(|| missing(task))?;
            (p, task, leaf.logit(image)?, split)
        }
        TreeModels::Shared { backbone, view, ab, pe } => {
            let features = backbone.features(image)?;
            let p = sigmoid(view.logit(&features)? as f64);
            let split = start.elapsed();
            let task = spec.route(p);
            let leaf = if task == Task::Ab { ab } else { pe };
            let leaf = leaf.as_ref().ok_or_else(|| missing(task))?;
            (p, task, leaf.logit(&features)?, split)
        }
    };
    let total = start.elapsed();
    Ok(TreeOutcome {
        view_probability,
        routed_task,
        leaf_probability: sigmoid(leaf_logit as f64),
        mode: models.mode(),
        timings: StageTimings {
            view_s: split.as_secs_f64(),
            leaf_s: (total - split).as_secs_f64(),
        },
    })
}

/// Tree outcomes for a dataset plus per-task `(scores, labels)` lists.
///
/// The view list covers every view-labelled frame. A leaf list covers the
/// frames routed to that leaf that carry its label, since the tree never
/// scores the other leaf.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub outcomes: Vec<TreeOutcome>,
    pub scores: BTreeMap<Task, (Vec<f64>, Vec<u8>)>,
}

pub fn infer_batch(dataset: &Dataset, models: &TreeModels, spec: &TreeSpec, exec: Execution) -> Result<BatchOutcome> {
    let outcomes = exec
        .map(dataset.records(), |r| infer_tree(&r.pixels, models, spec))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut scores: BTreeMap<Task, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    for (r, o) in dataset.records().iter().zip(&outcomes) {
        if let Some(l) = r.label(Task::View) {
            let e = scores.entry(Task::View).or_default();
            e.0.push(o.view_probability);
            e.1.push(l);
        }
        if let Some(l) = r.label(o.routed_task) {
            let e = scores.entry(o.routed_task).or_default();
            e.0.push(o.leaf_probability);
            e.1.push(l);
        }
    }
    Ok(BatchOutcome { outcomes, scores })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub n: usize,
    /// Untimed predictions before the timed loop.
    pub warmup: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { n: 1000, warmup: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub mode: InferenceMode,
    pub n: usize,
    pub mean_s: f64,
    /// Sample standard deviation; 0 when `n` is 1.
    pub sd_s: f64,
    pub flops_per_prediction: u64,
}

/// Times `config.n` serial predictions on the calling thread, cycling
/// through `images`.
pub fn benchmark(models: &TreeModels, images: &[&Image], spec: &TreeSpec, config: &BenchmarkConfig) -> Result<BenchmarkResult> {
    if config.n < 1 {
        return Err(Error::config("bench.n", "need at least one prediction"));
    }
    if images.is_empty() {
        return Err(Error::config("bench.images", "need at least one image"));
    }
    for i in 0..config.warmup {
        infer_tree(images[i % images.len()], models, spec)?;
    }
    let mut times = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let img = images[i % images.len()];
        let start = Instant::now();
        let out = infer_tree(img, models, spec)?;
        times.push(start.elapsed().as_secs_f64());
        std::hint::black_box(out);
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let sd = if times.len() > 1 {
        (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(BenchmarkResult {
        mode: models.mode(),
        n: config.n,
        mean_s: mean,
        sd_s: sd,
        flops_per_prediction: models.flops_per_prediction().total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routing_threshold() {
        let spec = TreeSpec::default();
        assert_eq!(spec.route(0.2), Task::Ab);
        assert_eq!(spec.route(0.5), Task::Pe);
        assert_eq!(spec.route(0.9), Task::Pe);
    }

    #[test]
    fn mode_names() {
        assert_eq!("shared".parse::<InferenceMode>().unwrap(), InferenceMode::SharedBackbone);
        assert_eq!("serial-cnns".parse::<InferenceMode>().unwrap(), InferenceMode::SerialCnns);
        assert!("both".parse::<InferenceMode>().is_err());
    }
}
