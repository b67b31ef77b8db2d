//! Baseline recommenders sharing one contract: a `d`-dimensional user
//! representation and a score for `(representation, item)` pairs.

mod bpr;
mod model;
pub(crate) mod train;

pub use bpr::{bpr_loss, sigmoid, softplus};
pub use model::{ModelKind, RecModel, ScoreCache, Scorer, UserCache};
pub use train::{
    evaluate_plain, fit_plain, train_epoch_plain, BatchPlan, EpochLog, FitOutcome, TrainConfig, TrainRngs, Triple,
};
