//! Token-level divergence kernels and sequence totals.
//!
//! Every objective the library trains with decomposes as a sum over
//! `(position, token)` cells of a scalar kernel in `(p_i, q_i)`. This
//! module provides those kernels (forward/reverse KL, Jensen–Shannon,
//! total variation, skew KL variants, fixed mixtures, Jeffreys, and the
//! token-adaptive sigmoid blend), the `T x V` loss matrices they induce,
//! and masked totals in both raw-sum and mean-per-position form.
//!
//! Individual cells may be negative (e.g. forward KL at a token where the
//! student overshoots); per-position sums over the full vocabulary are
//! nonnegative for the proper divergences.

use crate::dist::{DistSeq, VocabDist};
use crate::error::{Error, Result};
use crate::weighting::{alpha_matrix, Beta, TokenWeightMatrix};

/// Canonical kind names, in the order used by reports and error messages.
pub const SUPPORTED_KINDS: [&str; 10] = [
    "FKL",
    "RKL",
    "JS",
    "TVD",
    "SKL",
    "SRKL",
    "FixedMix",
    "Jeffreys",
    "ToDi",
    "GeneralizedToDi",
];

/// Which divergence to compute, with its parameters.
///
/// `ToDi` is the adaptive blend at sharpness 1; `GeneralizedToDi` exposes
/// the sharpness `beta` (the literal `"inf"` selects the hard-step
/// weights). `SKL`/`SRKL` carry the skew `lambda ∈ (0,1)`; `FixedMix`
/// carries the constant forward-KL weight `mix_ratio ∈ [0,1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DivergenceSpec {
    Fkl,
    Rkl,
    Js,
    Tvd,
    Skl { lambda: f64 },
    Srkl { lambda: f64 },
    FixedMix { mix_ratio: f64 },
    Jeffreys,
    ToDi,
    GeneralizedToDi { beta: Beta },
}

/// Default skew for SKL/SRKL when the config does not set one.
pub const DEFAULT_LAMBDA: f64 = 0.1;

impl DivergenceSpec {
    /// Build a spec from config fields: the kind string plus whichever
    /// parameters were present. Parameters must be present iff the kind
    /// uses them (`lambda` may be omitted for SKL/SRKL and defaults to
    /// [`DEFAULT_LAMBDA`]). Unknown kinds list the supported ones.
    pub fn from_config(
        kind: &str,
        lambda: Option<f64>,
        mix_ratio: Option<f64>,
        beta: Option<Beta>,
    ) -> Result<Self> {
        // case-insensitive, separator-insensitive: "FixedMix", "fixed_mix",
        // and "fixed-mix" all name the same kind
        let normalize = |s: &str| -> String {
            s.chars()
                .filter(|c| *c != '_' && *c != '-')
                .map(|c| c.to_ascii_lowercase())
                .collect()
        };
        let wanted = normalize(kind.trim());
        let canon = SUPPORTED_KINDS
            .iter()
            .find(|k| normalize(k) == wanted)
            .ok_or_else(|| Error::UnsupportedKind {
                given: kind.trim().to_string(),
                supported: SUPPORTED_KINDS.join(", "),
            })?;
        let uses_lambda = matches!(*canon, "SKL" | "SRKL");
        let uses_mix = *canon == "FixedMix";
        let uses_beta = *canon == "GeneralizedToDi";
        if lambda.is_some() && !uses_lambda {
            return Err(Error::InvalidParameter(format!(
                "lambda is only valid for SKL/SRKL, not {canon}"
            )));
        }
        if mix_ratio.is_some() && !uses_mix {
            return Err(Error::InvalidParameter(format!(
                "mix_ratio is only valid for FixedMix, not {canon}"
            )));
        }
        if beta.is_some() && !uses_beta {
            return Err(Error::InvalidParameter(format!(
                "beta is only valid for GeneralizedToDi, not {canon}"
            )));
        }
        let spec = match *canon {
            "FKL" => DivergenceSpec::Fkl,
            "RKL" => DivergenceSpec::Rkl,
            "JS" => DivergenceSpec::Js,
            "TVD" => DivergenceSpec::Tvd,
            "SKL" => DivergenceSpec::Skl {
                lambda: lambda.unwrap_or(DEFAULT_LAMBDA),
            },
            "SRKL" => DivergenceSpec::Srkl {
                lambda: lambda.unwrap_or(DEFAULT_LAMBDA),
            },
            "FixedMix" => DivergenceSpec::FixedMix {
                mix_ratio: mix_ratio.ok_or_else(|| {
                    Error::InvalidParameter("FixedMix requires mix_ratio".into())
                })?,
            },
            "Jeffreys" => DivergenceSpec::Jeffreys,
            "ToDi" => DivergenceSpec::ToDi,
            "GeneralizedToDi" => DivergenceSpec::GeneralizedToDi {
                beta: beta.ok_or_else(|| {
                    Error::InvalidParameter("GeneralizedToDi requires beta".into())
                })?,
            },
            _ => unreachable!(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Check parameter ranges: `lambda ∈ (0,1)`, `mix_ratio ∈ [0,1]`,
    /// `beta` finite (or the explicit step sentinel).
    pub fn validate(&self) -> Result<()> {
        match *self {
            DivergenceSpec::Skl { lambda } | DivergenceSpec::Srkl { lambda } => {
                if !(lambda.is_finite() && lambda > 0.0 && lambda < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "lambda must lie strictly in (0,1), got {lambda}"
                    )));
                }
            }
            DivergenceSpec::FixedMix { mix_ratio } => {
                if !(mix_ratio.is_finite() && (0.0..=1.0).contains(&mix_ratio)) {
                    return Err(Error::InvalidParameter(format!(
                        "mix_ratio must lie in [0,1], got {mix_ratio}"
                    )));
                }
            }
            DivergenceSpec::GeneralizedToDi {
                beta: Beta::Finite(b),
            } if !b.is_finite() => {
                return Err(Error::InvalidParameter(format!(
                    "beta must be finite, got {b}"
                )));
            }
            _ => {}
        }
        Ok(())
    }

    /// Canonical kind name (no parameters).
    pub fn kind_name(&self) -> &'static str {
        match self {
            DivergenceSpec::Fkl => "FKL",
            DivergenceSpec::Rkl => "RKL",
            DivergenceSpec::Js => "JS",
            DivergenceSpec::Tvd => "TVD",
            DivergenceSpec::Skl { .. } => "SKL",
            DivergenceSpec::Srkl { .. } => "SRKL",
            DivergenceSpec::FixedMix { .. } => "FixedMix",
            DivergenceSpec::Jeffreys => "Jeffreys",
            DivergenceSpec::ToDi => "ToDi",
            DivergenceSpec::GeneralizedToDi { .. } => "GeneralizedToDi",
        }
    }

    /// Kind name plus parameters, for report rows and sweep labels.
    pub fn label(&self) -> String {
        match *self {
            DivergenceSpec::Skl { lambda } => format!("SKL(lambda={lambda})"),
            DivergenceSpec::Srkl { lambda } => format!("SRKL(lambda={lambda})"),
            DivergenceSpec::FixedMix { mix_ratio } => format!("FixedMix(mix_ratio={mix_ratio})"),
            DivergenceSpec::GeneralizedToDi { beta } => format!("GeneralizedToDi(beta={beta})"),
            _ => self.kind_name().to_string(),
        }
    }

    /// The weight sharpness for the adaptive kinds; `None` otherwise.
    pub fn todi_beta(&self) -> Option<Beta> {
        match *self {
            DivergenceSpec::ToDi => Some(Beta::Finite(1.0)),
            DivergenceSpec::GeneralizedToDi { beta } => Some(beta),
            _ => None,
        }
    }
}

impl std::fmt::Display for DivergenceSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.label())
    }
}

// ------------------------------------------------------------------
// Scalar kernels. Each takes linear probabilities together with their
// logs so that callers holding a VocabDist never re-derive a log from a
// floored probability. `p` is the teacher, `q` the student.
// ------------------------------------------------------------------

#[inline]
pub(crate) fn fkl_term(p: f64, lp: f64, lq: f64) -> f64 {
    p * (lp - lq)
}

#[inline]
pub(crate) fn rkl_term(q: f64, lp: f64, lq: f64) -> f64 {
    q * (lq - lp)
}

#[inline]
fn js_term(p: f64, q: f64, lp: f64, lq: f64) -> f64 {
    let lm = (0.5 * (p + q)).ln();
    0.5 * p * (lp - lm) + 0.5 * q * (lq - lm)
}

#[inline]
fn tvd_term(p: f64, q: f64) -> f64 {
    0.5 * (p - q).abs()
}

// Unvalidated skew kernels; the public ops gate lambda to (0,1), while the
// limit tests exercise lambda = 0 directly.
#[inline]
pub(crate) fn skl_term(p: f64, q: f64, lp: f64, lambda: f64) -> f64 {
    p * (lp - (lambda * p + (1.0 - lambda) * q).ln())
}

#[inline]
pub(crate) fn srkl_term(p: f64, q: f64, lq: f64, lambda: f64) -> f64 {
    q * (lq - ((1.0 - lambda) * p + lambda * q).ln())
}

#[inline]
fn todi_term(p: f64, q: f64, lp: f64, lq: f64, alpha: f64) -> f64 {
    alpha * fkl_term(p, lp, lq) + (1.0 - alpha) * rkl_term(q, lp, lq)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must lie strictly in (0,1), got {lambda}"
        )));
    }
    Ok(())
}

fn check_pair_index(p: &VocabDist, q: &VocabDist, i: usize) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::InvalidInput(format!(
            "vocabulary sizes differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    if i >= p.len() {
        return Err(Error::InvalidInput(format!(
            "token index {i} out of range for vocabulary of size {}",
            p.len()
        )));
    }
    Ok(())
}

/// Forward-KL contribution of token `i`: `p_i (ln p_i - ln q_i)`.
/// May be negative at a single token; the per-position sum is not.
pub fn token_fkl(p: &VocabDist, q: &VocabDist, i: usize) -> Result<f64> {
    check_pair_index(p, q, i)?;
    Ok(fkl_term(p.prob(i), p.log_prob(i), q.log_prob(i)))
}

/// Reverse-KL contribution of token `i`: `q_i (ln q_i - ln p_i)`.
pub fn token_rkl(p: &VocabDist, q: &VocabDist, i: usize) -> Result<f64> {
    check_pair_index(p, q, i)?;
    Ok(rkl_term(q.prob(i), p.log_prob(i), q.log_prob(i)))
}

/// Jensen–Shannon contribution with equal 1/2 weights:
/// `1/2 p_i ln(p_i/m_i) + 1/2 q_i ln(q_i/m_i)` where `m_i = (p_i+q_i)/2`.
pub fn token_js(p: &VocabDist, q: &VocabDist, i: usize) -> Result<f64> {
    check_pair_index(p, q, i)?;
    Ok(js_term(p.prob(i), q.prob(i), p.log_prob(i), q.log_prob(i)))
}

/// Total-variation contribution: `|p_i - q_i| / 2`.
pub fn token_tvd(p: &VocabDist, q: &VocabDist, i: usize) -> Result<f64> {
    check_pair_index(p, q, i)?;
    Ok(tvd_term(p.prob(i), q.prob(i)))
}

/// Skew forward KL: `p_i ln(p_i / (λ p_i + (1-λ) q_i))`, `λ ∈ (0,1)`.
pub fn token_skl(p: &VocabDist, q: &VocabDist, i: usize, lambda: f64) -> Result<f64> {
    check_pair_index(p, q, i)?;
    check_lambda(lambda)?;
    Ok(skl_term(p.prob(i), q.prob(i), p.log_prob(i), lambda))
}

/// Skew reverse KL: `q_i ln(q_i / ((1-λ) p_i + λ q_i))`, `λ ∈ (0,1)`.
pub fn token_srkl(p: &VocabDist, q: &VocabDist, i: usize, lambda: f64) -> Result<f64> {
    check_pair_index(p, q, i)?;
    check_lambda(lambda)?;
    Ok(srkl_term(p.prob(i), q.prob(i), q.log_prob(i), lambda))
}

/// Constant-weight blend `w·FKL + (1-w)·RKL` applied uniformly to every
/// token, `w = mix_ratio ∈ [0,1]`.
pub fn token_fixed_mix(p: &VocabDist, q: &VocabDist, i: usize, mix_ratio: f64) -> Result<f64> {
    check_pair_index(p, q, i)?;
    if !(mix_ratio.is_finite() && (0.0..=1.0).contains(&mix_ratio)) {
        return Err(Error::InvalidParameter(format!(
            "mix_ratio must lie in [0,1], got {mix_ratio}"
        )));
    }
    Ok(todi_term(
        p.prob(i),
        q.prob(i),
        p.log_prob(i),
        q.log_prob(i),
        mix_ratio,
    ))
}

/// Per-token divergence contributions over a masked sequence pair.
/// Masked positions hold exact zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLossMatrix {
    pub values: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
}

impl TokenLossMatrix {
    /// Sum over the vocabulary at position `t` (zero when masked).
    pub fn position_total(&self, t: usize) -> f64 {
        self.values[t].iter().sum()
    }

    /// Raw sum over all positions and tokens.
    pub fn total(&self) -> f64 {
        self.values.iter().flatten().sum()
    }
}

/// How a matrix of per-token losses collapses to one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// Plain double sum over unmasked positions and tokens.
    Sum,
    /// Sum divided by the number of unmasked positions; what the trainer
    /// optimizes so step sizes transfer across sequence lengths.
    MeanPerPosition,
}

/// Evaluate the per-token loss matrix for `spec`. For the adaptive kinds
/// the weight matrix is materialized here from `(p, q)`; to control the
/// weights explicitly (e.g. to freeze them while perturbing `q`), use
/// [`token_loss_matrix_with_weights`].
pub fn token_loss_matrix(spec: &DivergenceSpec, p: &DistSeq, q: &DistSeq) -> Result<TokenLossMatrix> {
    spec.validate()?;
    p.check_compatible(q)?;
    let weights = match spec.todi_beta() {
        Some(beta) => Some(alpha_matrix(p, q, beta)?),
        None => None,
    };
    loss_matrix_inner(spec, p, q, weights.as_ref())
}

/// Like [`token_loss_matrix`], but with caller-supplied weights. Only the
/// adaptive kinds accept a weight matrix; the blend uses it as plain data,
/// which is what the stop-gradient finite-difference protocol relies on.
pub fn token_loss_matrix_with_weights(
    spec: &DivergenceSpec,
    p: &DistSeq,
    q: &DistSeq,
    weights: &TokenWeightMatrix,
) -> Result<TokenLossMatrix> {
    if spec.todi_beta().is_none() {
        return Err(Error::InvalidParameter(format!(
            "explicit weights only apply to ToDi-family kinds, not {}",
            spec.kind_name()
        )));
    }
    spec.validate()?;
    p.check_compatible(q)?;
    if weights.len() != p.len() {
        return Err(Error::InvalidInput(format!(
            "weight matrix has {} rows but sequences have {}",
            weights.len(),
            p.len()
        )));
    }
    loss_matrix_inner(spec, p, q, Some(weights))
}

fn loss_matrix_inner(
    spec: &DivergenceSpec,
    p: &DistSeq,
    q: &DistSeq,
    weights: Option<&TokenWeightMatrix>,
) -> Result<TokenLossMatrix> {
    let v = p.vocab_size();
    let mut values = Vec::with_capacity(p.len());
    for t in 0..p.len() {
        if !p.mask()[t] {
            values.push(vec![0.0; v]);
            continue;
        }
        let pr = p.row(t).probs();
        let qr = q.row(t).probs();
        let lp = p.row(t).log_probs();
        let lq = q.row(t).log_probs();
        let mut row = Vec::with_capacity(v);
        for i in 0..v {
            let val = match *spec {
                DivergenceSpec::Fkl => fkl_term(pr[i], lp[i], lq[i]),
                DivergenceSpec::Rkl => rkl_term(qr[i], lp[i], lq[i]),
                DivergenceSpec::Js => js_term(pr[i], qr[i], lp[i], lq[i]),
                DivergenceSpec::Tvd => tvd_term(pr[i], qr[i]),
                DivergenceSpec::Skl { lambda } => skl_term(pr[i], qr[i], lp[i], lambda),
                DivergenceSpec::Srkl { lambda } => srkl_term(pr[i], qr[i], lq[i], lambda),
                DivergenceSpec::FixedMix { mix_ratio } => {
                    todi_term(pr[i], qr[i], lp[i], lq[i], mix_ratio)
                }
                DivergenceSpec::Jeffreys => {
                    fkl_term(pr[i], lp[i], lq[i]) + rkl_term(qr[i], lp[i], lq[i])
                }
                DivergenceSpec::ToDi | DivergenceSpec::GeneralizedToDi { .. } => {
                    let w = weights.expect("adaptive kinds always carry weights here");
                    todi_term(pr[i], qr[i], lp[i], lq[i], w.get(t, i))
                }
            };
            row.push(val);
        }
        values.push(row);
    }
    Ok(TokenLossMatrix {
        values,
        mask: p.mask().to_vec(),
    })
}

/// Collapse the divergence between two sequences to a scalar.
///
/// With [`Reduction::Sum`] this is the plain double sum over unmasked
/// cells; with [`Reduction::MeanPerPosition`] it is divided by the number
/// of unmasked positions (which must be nonzero).
pub fn total_divergence(
    spec: &DivergenceSpec,
    p: &DistSeq,
    q: &DistSeq,
    reduction: Reduction,
) -> Result<f64> {
    let m = token_loss_matrix(spec, p, q)?;
    reduce(&m, reduction)
}

pub(crate) fn reduce(m: &TokenLossMatrix, reduction: Reduction) -> Result<f64> {
    let sum = m.total();
    match reduction {
        Reduction::Sum => Ok(sum),
        Reduction::MeanPerPosition => {
            let n = m.mask.iter().filter(|&&b| b).count();
            if n == 0 {
                return Err(Error::InvalidInput(
                    "mean-per-position reduction over a fully masked sequence".into(),
                ));
            }
            Ok(sum / n as f64)
        }
    }
}
