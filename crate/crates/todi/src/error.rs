//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by distribution construction, divergence kernels,
/// gradient checks, and the training harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: non-finite values, shape mismatches, out-of-range indices.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A hyperparameter outside its legal range (lambda, beta, mix ratio, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A statistic that is undefined on the given data (e.g. Pearson with zero variance).
    #[error("degenerate statistic: {0}")]
    DegenerateStatistic(String),

    /// A toy scenario without both p>q and q>p regions; nothing to analyze.
    #[error("degenerate scenario: {0}")]
    DegenerateScenario(String),

    /// The finite-difference oracle hit a non-finite loss evaluation.
    #[error("oracle failure: {0}")]
    OracleFailure(String),

    /// Unsupported divergence kind in a config or CLI argument.
    #[error("unsupported kind {given:?}; supported kinds: {supported}")]
    UnsupportedKind { given: String, supported: String },

    /// Unknown key in a key=value config file.
    #[error("unknown config key {key:?}; accepted keys: {accepted}")]
    UnknownConfigKey { key: String, accepted: String },

    /// Malformed config file contents.
    #[error("config parse error: {0}")]
    ConfigParse(String),

    /// A training run hit a non-finite loss. Carries every epoch record that
    /// completed with finite metrics before the abort.
    #[error("training aborted at epoch {epoch}, step {step}: non-finite loss")]
    TrainingAborted {
        epoch: usize,
        step: usize,
        finite_trace: Vec<crate::harness::EpochRecord>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
