//! Diversified text-dataset generation with a language model, plus the
//! curation tools that repair what generation gets wrong.
//!
//! * [`sampling`] holds the decoding transforms and the logit-suppression rule.
//! * [`backend`] talks to a completion endpoint or runs the offline mock model.
//! * [`pipeline`] drives iterative, class-balanced generation.
//! * [`metrics`] and [`embedding`] measure diversity and label accuracy.
//! * [`curation`] replaces misaligned labels and filters out-of-scope texts.

pub mod backend;
pub mod curation;
pub mod embedding;
pub mod error;
pub mod metrics;
pub mod mock_lm;
pub mod pipeline;
pub mod sampling;
pub mod student;

pub use error::{Error, Result};
