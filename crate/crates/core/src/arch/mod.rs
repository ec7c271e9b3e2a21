//! Network graphs, the six benchmark builders and the executor.

pub mod builders;
pub mod checkpoint;
pub mod model;
pub mod spec;

pub use builders::{
    build_allconv, build_densenet, build_fractalnet, build_named, build_nin, build_resnet, build_vgg16_reduced,
    dense_block_spec, AllConvConfig, DenseNetConfig, FractalConfig, NinConfig, ResNetConfig, VggConfig,
    ARCHITECTURES,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use model::{spec_fingerprint, Gradients, Model, NodeParams, OutputGrad};
pub use spec::{ArchitectureSpec, FeatureShape, NodeKind, NodeSpec, INPUT_ID};
