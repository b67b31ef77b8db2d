//! Sensitive-feature filters and their adversarial training.

mod adversarial;
mod discriminator;
mod filters;

pub use adversarial::{adversarial_objective, AdversarialTrainer, AdversaryConfig, BatchLog, FairModel};
pub use discriminator::{classifier_spec, cross_entropy, softmax, Discriminator, CLASSIFIER_DROPOUT, CLASSIFIER_LAYERS};
pub use filters::{count_filters, filter_spec, FilterBank, FilterCache, FilterMethod};
