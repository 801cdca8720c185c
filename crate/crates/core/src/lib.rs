//! Group-wise contrastive learning for neural dialogue generation.
//!
//! The crate is organised along the training pipeline:
//!
//! * [`corpus`] loads and encodes context/response datasets.
//! * [`matcher`] scores context/response compatibility.
//! * [`bm25`] and [`sampler`] mine groups of matched and mismatched pairs.
//! * [`models`] holds the dialogue models, MLE training and decoding.
//! * [`contrastive`] implements the contrastive objectives and fine-tuning loop.
//! * [`eval`] computes the automatic metric battery.
//! * [`synth`] generates synthetic multi-mapping corpora.

pub mod autograd;
pub mod bm25;
pub mod contrastive;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod io;
pub mod matcher;
pub mod models;
pub mod optim;
pub mod parallel;
pub mod sampler;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
