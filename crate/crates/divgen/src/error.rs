use std::io;

use thiserror::Error;

/// Errors produced anywhere in the generation and curation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("top_p must be in (0, 1], got {0}")]
    InvalidTopP(f64),
    #[error("distribution has no probability mass")]
    DegenerateDistribution,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("need at least {needed} items, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("training data contains a single class")]
    SingleClass,
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("backend unreachable after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("generation stalled: {0}")]
    Stalled(String),
    #[error("malformed data: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
