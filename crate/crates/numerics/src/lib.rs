//! Minimal dense-tensor toolkit for the gait-phase models.
//!
//! Only a fixed catalog of layers is differentiable: each op has a forward
//! function and a hand-written backward. There is no general autodiff tape.
//! Everything is generic over [`Scalar`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference gradient checks.

pub mod error;
pub mod gemm;
pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod tensor;

pub use error::{NumericsError, Result};
pub use layers::{Conv1d, LayerNorm, Linear, Module, MultiHeadAttention, Parameter};
pub use optim::{Adam, AdamConfig};
pub use rng::RngStream;
pub use scalar::Scalar;
pub use schedule::{lr_factor, LrSchedule, ScheduleConfig};
pub use tensor::Tensor;
