//! Model components: feature extractor, projector, task heads, checkpoint
//! container and FLOP accounting.
//!
//! Layers are generic over [`Real`] so that gradient checks can run in `f64`;
//! training and inference use `f32`.

mod bundle;
mod checkpoint;
mod extractor;
mod flops;
pub mod layers;
mod matrix;
mod mlp;
mod params;
mod real;

pub use bundle::{init_bundle, new_head, ArchitectureConfig, BundleMetadata, ModelBundle};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_expecting, save_checkpoint, FORMAT_VERSION,
    MAGIC,
};
pub use extractor::{ConvBlock, FeatureExtractor, Tape};
pub use flops::{count_flops, CountFlops, FlopCount};
pub use matrix::Matrix;
pub use mlp::{Head, HeadKind, Mlp, MlpCache, Projector, MLP_HIDDEN};
pub use params::{Adam, Parameters, TensorView};
pub use real::{gemm, Real};
