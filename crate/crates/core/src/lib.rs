//! Hierarchical multi-spectral human activity recognition for
//! memory-constrained targets.
//!
//! The pipeline turns six-axis IMU windows into FFT, Haar-wavelet and Gabor
//! pseudo-images, classifies them with a small coarse model, and only then
//! activates a fine-grained model for the detected state. Alongside inference
//! the crate provides training with analytic gradients, int8 weight
//! quantization, a MACC/RAM/ROM cost model, the runtime residency simulation
//! and post-hoc attribution.

pub mod autodiff;
pub mod error;
pub mod explain;
pub mod frontend;
pub mod graph;
pub mod kernels;
pub mod labels;
pub mod modelio;
pub mod quant;
pub mod resources;
pub mod runtime;
pub mod synth;
pub mod tasks;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
pub use labels::{CoarseLabel, FineLabel};
pub use tensor::Tensor;
