//! Inference with bit-packed binary weights, where every multiply-accumulate
//! against a `±1` weight becomes an add or a subtract.

pub mod bench;
mod conv;
mod dense;
mod model;

pub use bench::{run_benchmark, BenchResult, Kernel, MIN_REPS};
pub use conv::{binary_conv_forward, PackedConv};
pub use dense::{binary_dense_forward, PackedDense};
pub use model::{InferenceMode, InferenceModel};
