//! Training and inference for binarized / quantized neural networks:
//! sign and stochastic binarization with straight-through-estimator
//! backpropagation, shift-based Batch Normalization and AdaMax, bit-packed
//! XNOR-popcount matrix kernels, multi-bit linear/log quantization, and the
//! supporting dataset, checkpoint and analysis machinery.
//!
//! All numeric code is generic over the scalar type via [`scalar::Real`];
//! `f32` is the working precision used by the CLI and the concrete aliases
//! below.

pub mod analysis;
pub mod bitkernel;
pub mod data_io;
pub mod error;
pub mod layers;
pub mod optim;
pub mod quantize;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::Rng;

/// Single-precision tensor, the default working type.
pub type Tensor32 = tensor::Tensor<f32>;
/// Double-precision tensor, used by oracles and tests.
pub type Tensor64 = tensor::Tensor<f64>;
pub type QnnModel32 = trainer::QnnModel<f32>;
pub type QnnModel64 = trainer::QnnModel<f64>;
