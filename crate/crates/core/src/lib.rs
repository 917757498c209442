//! Core of the feature-level debugging workbench: data loading, the CNN and
//! BiLSTM classifiers, relevance propagation, feature profiling, feedback
//! aggregation and evaluation.

pub mod api;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod feedback;
pub mod lrp;
pub mod model;
pub mod snapshot;
pub mod synth;

pub use error::{Error, Result};
