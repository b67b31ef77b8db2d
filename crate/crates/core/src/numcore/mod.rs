//! Minimal differentiable numeric core.
//!
//! There is no autodiff graph: each network type caches what its backward
//! pass needs and propagates gradients by hand. Parameters live in
//! [`ParamTensor`]s, which accumulate gradients until an optimizer step.

mod adam;
pub mod checkpoint;
pub(crate) mod matrix;
mod mlp;
mod rng;
mod scalar;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, TensorRecord};
pub use matrix::Matrix;
pub use mlp::{Activation, Mlp, MlpCache, MlpSpec};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::{l2_penalty, zero_grads, ParamTensor, Parameterized};
