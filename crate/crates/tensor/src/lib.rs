//! Dense row-major tensors with tape-based reverse-mode automatic
//! differentiation.
//!
//! Values are recorded on a [`Tape`] as operations run; [`Tape::backward`]
//! replays the recorded nodes in reverse and returns [`Gradients`] keyed by
//! the identity of every leaf tensor that requires grad. All kernels are
//! generic over [`Scalar`], so the same graph can be evaluated in `f32` for
//! training and in `f64` for finite-difference checks.

pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use ops::conv::ConvGeometry;
pub use ops::nn::BatchStats;
pub use scalar::Scalar;
pub use tape::{BackwardCtx, Gradients, Tape, Var};
pub use tensor::{Tensor, TensorId};
