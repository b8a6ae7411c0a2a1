//! Joint-embedding self-supervised pretraining for lung ultrasound frames,
//! with linear / fine-tuned / nonlinear probes on three hierarchically
//! arranged binary tasks and a decision-tree inference pipeline that can
//! reuse a single frozen backbone.
//!
//! Module map:
//!
//! * [`data`] – records, manifests, preprocessing, patient splits, label
//!   subsampling and the procedural frame generator.
//! * [`augment`] – stochastic transform family and positive pairs.
//! * [`nnet`] – CNN feature extractor, projector, heads, checkpoints, FLOPs.
//! * [`ssl`] – NT-Xent, Barlow Twins, VICReg and the pretraining loop.
//! * [`supervised`] – LC / FT / NC protocols and the label-efficiency sweep.
//! * [`eval`] – AUC and threshold metrics, reports, feature export, 2-D maps.
//! * [`inference`] – tree routing in serial and shared-backbone modes, latency
//!   benchmark.

pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod inference;
pub mod nnet;
pub mod rng;
pub mod ssl;
pub mod supervised;

pub use error::{Error, Result};

/// Side length of every preprocessed frame.
pub const FRAME_SIZE: usize = 128;
/// Pixel count of a preprocessed frame.
pub const FRAME_PIXELS: usize = FRAME_SIZE * FRAME_SIZE;
