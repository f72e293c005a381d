//! Minimal CPU tensor library with reverse-mode autodiff, sized for
//! fully-convolutional image-to-image networks.
//!
//! All kernels are single-threaded with a fixed summation order, so a
//! computation repeated on the same inputs is bit-identical.

mod conv;
mod error;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use conv::{conv_out_len, conv_transpose_out_len, ConvGeometry};
pub use error::TensorError;
pub use params::{Bound, ParamSet};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{numel, Shape, Tensor};
