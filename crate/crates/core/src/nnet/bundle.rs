use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::mlp::{Head, HeadKind, Projector};
use super::params::{Parameters, TensorView};
use super::FeatureExtractor;
use crate::data::Task;
use crate::{rng, Error, Result, FRAME_SIZE};

/// Shape of every component in a [`ModelBundle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureConfig {
    /// Output channels of each conv block; the last is the feature width.
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub norm_eps: f64,
    pub projector_hidden: usize,
    pub embedding_dim: usize,
    pub with_projector: bool,
    pub heads: BTreeMap<Task, HeadKind>,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 64, 128],
            kernel: 3,
            stride: 2,
            norm_eps: 1e-5,
            projector_hidden: 128,
            embedding_dim: 64,
            with_projector: true,
            heads: BTreeMap::new(),
        }
    }
}

impl ArchitectureConfig {
    pub fn feature_dim(&self) -> usize {
        self.widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::config("architecture.widths", "need at least one positive width"));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::config("architecture.kernel", "kernel must be odd"));
        }
        if self.stride == 0 {
            return Err(Error::config("architecture.stride", "stride must be positive"));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::config("architecture.norm_eps", "must be positive"));
        }
        if self.with_projector && (self.projector_hidden == 0 || self.embedding_dim == 0) {
            return Err(Error::config("architecture.embedding_dim", "projector widths must be positive"));
        }
        let mut side = FRAME_SIZE;
        for _ in &self.widths {
            side = (side + 2 * (self.kernel / 2) - self.kernel) / self.stride + 1;
        }
        if side == 0 {
            return Err(Error::config("architecture.widths", "too many blocks for 128x128 input"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    /// Pretraining method that produced the extractor, or `None` for random init.
    pub method: Option<String>,
    pub seed: u64,
    /// Pretraining epoch the extractor weights come from.
    pub epoch: Option<usize>,
    pub protocol: Option<String>,
    pub label_fraction: Option<f64>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

/// Extractor, optional projector and per-task heads, all `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub architecture: ArchitectureConfig,
    pub extractor: FeatureExtractor<f32>,
    pub projector: Option<Projector<f32>>,
    pub heads: BTreeMap<Task, Head<f32>>,
    pub metadata: BundleMetadata,
}

// Component stream ids for weight initialization.
const STREAM_EXTRACTOR: u64 = 1;
const STREAM_PROJECTOR: u64 = 2;
const STREAM_HEAD: u64 = 3;

/// Seeded initialization. Each component draws from its own stream, so the
/// extractor weights for a seed do not depend on which heads are requested.
pub fn init_bundle(architecture: &ArchitectureConfig, seed: u64) -> Result<ModelBundle> {
    architecture.validate()?;
    let mut r = rng::stream(seed, &[STREAM_EXTRACTOR]);
    let extractor = FeatureExtractor::init(
        FRAME_SIZE,
        &architecture.widths,
        architecture.kernel,
        architecture.stride,
        architecture.norm_eps,
        &mut r,
    );
    let d = extractor.feature_dim();
    let projector = architecture.with_projector.then(|| {
        let mut r = rng::stream(seed, &[STREAM_PROJECTOR]);
        Projector::init(d, architecture.projector_hidden, architecture.embedding_dim, &mut r)
    });
    let mut bundle = ModelBundle {
        architecture: architecture.clone(),
        extractor,
        projector,
        heads: BTreeMap::new(),
        metadata: BundleMetadata {
            seed,
            ..Default::default()
        },
    };
    for (&task, &kind) in &architecture.heads {
        bundle.insert_head(task, new_head(kind, d, seed, task))?;
    }
    Ok(bundle)
}

/// A freshly initialized head for `task`.
pub fn new_head(kind: HeadKind, feature_dim: usize, seed: u64, task: Task) -> Head<f32> {
    let mut r = rng::stream(seed, &[STREAM_HEAD, task as u64]);
    Head::init(kind, feature_dim, &mut r)
}

impl ModelBundle {
    pub fn feature_dim(&self) -> usize {
        self.extractor.feature_dim()
    }

    /// Adds or replaces the head for `task`, keeping `architecture.heads`
    /// in sync.
    pub fn insert_head(&mut self, task: Task, head: Head<f32>) -> Result<()> {
        if head.input_dim() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "head for {task} takes {} inputs but the extractor emits {}",
                head.input_dim(),
                self.feature_dim()
            )));
        }
        self.architecture.heads.insert(task, head.kind);
        self.heads.insert(task, head);
        Ok(())
    }

    pub fn head(&self, task: Task) -> Result<&Head<f32>> {
        self.heads
            .get(&task)
            .ok_or_else(|| Error::MissingModel(task.to_string()))
    }

    /// Drops the projector, e.g. after pretraining.
    pub fn without_projector(mut self) -> Self {
        self.projector = None;
        self.architecture.with_projector = false;
        self
    }

    /// Every weight tensor with its qualified name, in a stable order.
    pub fn named_tensors(&self) -> Vec<TensorView<'_, f32>> {
        let mut out = Vec::new();
        self.extractor.collect_tensors("extractor", &mut out);
        if let Some(p) = &self.projector {
            p.collect_tensors("projector", &mut out);
        }
        for (task, head) in &self.heads {
            head.collect_tensors(&format!("head.{task}"), &mut out);
        }
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = Vec::new();
        self.extractor.collect_tensors_mut(&mut out);
        if let Some(p) = &mut self.projector {
            p.collect_tensors_mut(&mut out);
        }
        for head in self.heads.values_mut() {
            head.collect_tensors_mut(&mut out);
        }
        out
    }
}
