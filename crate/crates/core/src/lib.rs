//! Image-restoration training kit: tensors with reverse-mode autodiff,
//! wavelet-domain convolution blocks, a selective-state-space channel
//! attention module, a multiscale restoration network, its composite loss,
//! synthetic degradation data, and a deterministic training loop.

pub mod config;
pub mod data;
pub mod error;
pub mod init;
pub mod loss;
pub mod net;
pub mod ssm;
pub mod tensor;
pub mod testutil;
pub mod train;
pub mod wavelet;
pub mod wtconv;

pub use error::{Error, Result};
pub use tensor::{tape::GradMap, tape::Tape, Tensor};

/// Visitor used to walk every parameter tensor of a module in a fixed,
/// documented order. Returns the (possibly replaced) tensor; read-only walks
/// return a clone.
pub type ParamFn<'a> = dyn FnMut(&str, &Tensor) -> Tensor + 'a;
