//! Convolutional networks for 32×32 character images.
//!
//! * [`tensor`] — `f64` tensors and matrix kernels
//! * [`layers`] — differentiable layer primitives
//! * [`arch`] — network graphs, the benchmark builders and the executor
//! * [`paramcount`] — static parameter/connection analysis
//! * [`data`] — image loading, splitting and synthetic glyphs
//! * [`train`] — SGD training, evaluation and run artifacts

pub mod arch;
pub mod data;
pub mod error;
pub mod layers;
pub mod paramcount;
pub mod tensor;
pub mod train;

pub use arch::{ArchitectureSpec, Model, NodeKind};
pub use data::Dataset;
pub use error::{Error, Result};
pub use layers::Mode;
pub use paramcount::Summary;
pub use tensor::{Shape4, Tensor};
pub use train::{TrainConfig, TrainReport};
