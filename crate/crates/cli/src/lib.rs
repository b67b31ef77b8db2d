//! Configuration and pipeline stages behind the `fairrec` binary.

pub mod config;
pub mod pipeline;

pub use config::{Config, Experiment, Method, Source};
