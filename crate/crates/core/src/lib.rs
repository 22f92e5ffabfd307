//! Recurrent fully convolutional networks for online binary video
//! segmentation: a small reverse-mode tensor engine, recurrent cells,
//! the network presets, training, data synthesis and evaluation metrics.

mod error;

pub mod data;
pub mod fd;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod recurrent;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{Activation, Gradients, Graph, Var};
pub use data::FrameSequence;
pub use kernels::Padding;
pub use metrics::MetricsReport;
pub use model::{build_preset, infer_shapes, parse_architecture, ArchitectureSpec, LayerKind, LayerSpec, Model};
pub use tensor::{Scalar, Tensor};
