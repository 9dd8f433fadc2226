//! Token-wise knowledge-distillation divergences with analytic gradients.
//!
//! The crate provides:
//!
//! * validated probability containers and log-space numerics ([`dist`]),
//! * the sigmoid-of-log-ratio token weighting with its stop-gradient
//!   contract ([`weighting`]),
//! * forward/reverse KL, their skewed and mixed relatives, and the
//!   adaptively token-weighted blend of both ([`divergence`]),
//! * closed-form gradients for all of them, a softmax chain rule, and a
//!   finite-difference oracle that certifies the whole stack
//!   ([`gradients`]),
//! * a gradient-magnitude toy analysis ([`toy`]),
//! * a desk-scale distillation harness with tabular Markov teachers and
//!   students ([`harness`]), and
//! * a CLI over all of it with reproducible, manifest-stamped artifacts
//!   ([`cli`]).

pub mod cli;
pub mod dist;
pub mod divergence;
pub mod error;
pub mod gradients;
pub mod harness;
pub mod manifest;
pub mod toy;
pub mod weighting;

pub use error::{Error, Result};
