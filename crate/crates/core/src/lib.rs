//! Dual-view co-training for sectioned text reports.
//!
//! Two softmax classifiers, one reading the Findings section and one reading
//! the Impression section, pseudo-label an unlabeled pool for each other and
//! are averaged at inference time.

pub mod cli;
pub mod corpus;
pub mod ensemble_eval;
pub mod error;
pub mod featurizer;
pub mod linear_classifier;
pub mod section_parser;
pub mod seed;
pub mod semisup_engine;
pub mod synth_gen;

pub use error::{Error, Result};
