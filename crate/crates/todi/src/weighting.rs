//! Token-adaptive interpolation weights.
//!
//! The adaptive divergence blends forward and reverse KL per token with a
//! weight `alpha = sigmoid(beta * ln(p/q))`: positions where the teacher
//! out-weighs the student lean toward forward KL, positions where the
//! student over-commits lean toward reverse KL. The sharpness `beta`
//! controls how quickly the blend saturates; `beta = 0` degenerates to a
//! fixed 50/50 mix and the limit `beta -> inf` is a hard step on the sign
//! of the log-ratio.
//!
//! Weights are always treated as constants when differentiating: a weight
//! matrix is materialized from the *current* pair of distributions and the
//! gradient of the blended loss is taken with the matrix held fixed. The
//! [`TokenWeightMatrix::grad_constant`] flag documents this contract to
//! downstream code.

use crate::dist::DistSeq;
use crate::error::{Error, Result};

/// Sharpness parameter for the token weight, including the hard-step limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beta {
    Finite(f64),
    /// The `beta -> inf` limit: an indicator on the sign of `ln(p/q)`.
    Inf,
}

impl Beta {
    /// Parse `"inf"`/`"+inf"`/`"infinity"` (any case) or a finite float.
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        match t.to_ascii_lowercase().as_str() {
            "inf" | "+inf" | "infinity" => return Ok(Beta::Inf),
            _ => {}
        }
        let x: f64 = t
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("cannot parse beta from {t:?}")))?;
        if !x.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "beta must be finite or the literal \"inf\", got {x}"
            )));
        }
        Ok(Beta::Finite(x))
    }
}

impl std::fmt::Display for Beta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Beta::Finite(x) => write!(f, "{x}"),
            Beta::Inf => write!(f, "inf"),
        }
    }
}

/// Logistic function evaluated without overflow on either tail.
///
/// For `z >= 0` uses `1 / (1 + e^{-z})`; for `z < 0` uses
/// `e^z / (1 + e^z)`. Both branches keep the argument of `exp`
/// non-positive so no intermediate can overflow.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Scalar token weight `alpha = sigmoid(beta * log_r)`.
///
/// `beta` must be finite here; use [`step_weight`] for the hard-step limit.
pub fn alpha(log_r: f64, beta: f64) -> Result<f64> {
    if !beta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "alpha requires finite beta, got {beta}; use step_weight for the limit"
        )));
    }
    if !log_r.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "alpha requires a finite log-ratio, got {log_r}"
        )));
    }
    Ok(sigmoid(beta * log_r))
}

/// The `beta -> inf` limit of [`alpha`]: 1 when the teacher dominates
/// (`log_r > 0`), 0 when the student dominates (`log_r < 0`), and 1/2 on an
/// exact tie, matching `sigmoid(0)`.
pub fn step_weight(log_r: f64) -> f64 {
    if log_r > 0.0 {
        1.0
    } else if log_r < 0.0 {
        0.0
    } else {
        0.5
    }
}

/// A `T x V` matrix of per-token weights, materialized once per
/// distribution pair and then treated as constant data.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenWeightMatrix {
    /// `alpha[t][i]` for every position/token; masked rows hold 0.5.
    pub alpha: Vec<Vec<f64>>,
    /// Sharpness the matrix was built with.
    pub beta: Beta,
    /// Always true: the weights carry no gradient. Consumers may assert on
    /// this before differentiating through a blended loss.
    pub grad_constant: bool,
}

impl TokenWeightMatrix {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.alpha[t][i]
    }
}

/// Materialize the weight matrix for a teacher/student pair.
///
/// Masked positions get the neutral weight 0.5 so that downstream
/// element-wise arithmetic never sees an uninitialized cell; they carry no
/// loss regardless. With [`Beta::Inf`] each cell is [`step_weight`] of the
/// log-ratio.
pub fn alpha_matrix(p: &DistSeq, q: &DistSeq, beta: Beta) -> Result<TokenWeightMatrix> {
    p.check_compatible(q)?;
    if let Beta::Finite(b) = beta {
        if !b.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "beta must be finite (or the explicit step sentinel), got {b}"
            )));
        }
    }
    let mut rows = Vec::with_capacity(p.len());
    for t in 0..p.len() {
        if !p.mask()[t] {
            rows.push(vec![0.5; p.vocab_size()]);
            continue;
        }
        let lp = p.row(t).log_probs();
        let lq = q.row(t).log_probs();
        // log-probs out of a DistSeq are finite by construction, so the
        // per-entry work is the bare sigmoid; this pass must stay within
        // a small constant factor of the divergence kernels themselves
        let row = match beta {
            Beta::Finite(b) => lp
                .iter()
                .zip(lq)
                .map(|(&a, &c)| sigmoid(b * (a - c)))
                .collect(),
            Beta::Inf => lp.iter().zip(lq).map(|(&a, &c)| step_weight(a - c)).collect(),
        };
        rows.push(row);
    }
    Ok(TokenWeightMatrix {
        alpha: rows,
        beta,
        grad_constant: true,
    })
}
