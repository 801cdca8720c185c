//! Configuration-driven pipeline over the `groupcl` library: corpus
//! preparation, retrieval indexing, group sampling, MLE pretraining,
//! contrastive fine-tuning, generation, evaluation and ablation.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{schema, Overrides, RunConfig};
pub use error::{CliError, Result};
pub use pipeline::{Pipeline, Stage};
