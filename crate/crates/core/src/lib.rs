//! Adversarial video distillation at desk scale.
//!
//! A video clip [3,32,H,W] is compressed by a 3D-convolutional encoder into a
//! single RGB image, trained jointly with a transposed-convolutional decoder
//! (reconstruction) and an adversarial teacher that compares distilled images
//! against real video frames. Everything runs on a small reverse-mode
//! autodiff engine built in this crate — no external ML dependencies.
//!
//! The numeric core is generic over the scalar type via [`scalar::Scalar`];
//! f32 is the working precision, f64 exists for tightened verification.

pub mod binfmt;
pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod kernels;
pub mod model;
pub mod ppm;
pub mod runconfig;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod textfmt;
pub mod training;

pub use kernels::reduce::ReduceOp;
pub use scalar::Scalar;
pub use tape::{Tape, ValueId};
pub use tensor::{Tensor, TensorError};

/// Working-precision tensor (training, inference, serialization).
pub type Tensor32 = Tensor<f32>;
/// Verification-precision tensor (tight gradient checks).
pub type Tensor64 = Tensor<f64>;
