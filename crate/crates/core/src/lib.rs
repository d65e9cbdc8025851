//! Binary-weight neural networks: training with deterministic or stochastic
//! weight binarization, and bit-packed inference kernels.
//!
//! Real-valued weights are kept for the optimizer. Each minibatch binarizes
//! them, runs forward and backward passes with the binary copies, applies
//! the gradient to the real weights and clips them back to `[-1, 1]`.

pub mod binarize;
pub mod data;
pub mod error;
pub mod fastpath;
pub mod layers;
pub mod network;
pub mod packed;
pub mod presets;
pub mod rng;
pub mod tensor;
pub mod training;

pub use binarize::Regularizer;
pub use data::{Dataset, Split};
pub use error::{Error, Result};
pub use fastpath::{InferenceMode, InferenceModel};
pub use network::{Grad, Layer, Network, ParamKind};
pub use packed::PackedBinaryMatrix;
pub use presets::Preset;
pub use rng::Rng;
pub use tensor::Tensor;
pub use training::{MetricsRecord, OptState, TrainConfig};
