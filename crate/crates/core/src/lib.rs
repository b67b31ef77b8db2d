//! Recommendation models whose user embeddings are adversarially filtered so
//! that they carry no information about user-selected sensitive features.
//!
//! The crate is organised bottom-up:
//!
//! - [`numcore`]: parameter tensors, dense networks with hand-written
//!   backpropagation, Adam, deterministic random streams and checkpoints.
//! - [`data`]: MovieLens / tabular ingestion, splitting, negative and mask
//!   sampling, and a synthetic generator with planted feature dependence.
//! - [`recmodels`]: PMF, BiasedMF, DeepModel and DMF trained with BPR.
//! - [`fairness`]: filter banks (separate and combination methods),
//!   discriminators and the alternating adversarial trainer.
//! - [`eval`]: sampled top-N ranking metrics, leakage attackers, AUC and
//!   report assembly.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the 64-bit precision used by the command-line tools.

pub mod data;
pub mod error;
pub mod eval;
pub mod fairness;
pub mod numcore;
pub mod recmodels;

pub use error::{Error, Result};
pub use numcore::{Matrix, Scalar};

/// 64-bit parameter tensor.
pub type ParamTensor64 = numcore::ParamTensor<f64>;
/// 64-bit multilayer perceptron.
pub type Mlp64 = numcore::Mlp<f64>;
/// 64-bit Adam optimizer.
pub type Adam64 = numcore::Adam<f64>;
/// 64-bit dense matrix.
pub type Matrix64 = numcore::Matrix<f64>;
/// 64-bit recommender.
pub type RecModel64 = recmodels::RecModel<f64>;
/// 64-bit filter bank.
pub type FilterBank64 = fairness::FilterBank<f64>;
/// 64-bit discriminator.
pub type Discriminator64 = fairness::Discriminator<f64>;
/// 64-bit recommender with filters and discriminators.
pub type FairModel64 = fairness::FairModel<f64>;
