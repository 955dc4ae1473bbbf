//! Multi-grained trajectory graph convolutional network for 3D human motion prediction.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for the common cases. Training and verification
//! use `f64` throughout.

pub mod augment;
pub mod checkpoint;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod graph_conv;
pub mod loss;
pub mod network;
pub mod optim;
pub mod scalar;
pub mod seqfile;
pub mod skeleton;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use network::{Mode, ModelConfig};
pub use scalar::Scalar;
pub use skeleton::SkeletonSpec;
pub use training::TrainConfig;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Model64 = network::Model<f64>;
pub type Model32 = network::Model<f32>;
pub type Graph64 = tape::Graph<f64>;
pub type MotionSequence64 = skeleton::MotionSequence<f64>;
pub type Sample64 = training::Sample<f64>;
pub type EvalReport64 = evaluation::EvalReport<f64>;
