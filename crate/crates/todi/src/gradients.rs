//! Closed-form divergence gradients and the finite-difference oracle that
//! keeps them honest.
//!
//! Gradients are taken in two stages, mirroring how the losses are
//! derived. First w.r.t. the student probabilities treated as free
//! coordinates (`d_loss_d_q`, the textbook partials such as `-p/q` for
//! forward KL), then chained through the softmax Jacobian to logits
//! (`d_loss_d_logits`), which is what an optimizer actually consumes. The
//! simplex coupling between the `q_i` is absorbed entirely by the chain
//! rule step, so end-to-end finite-difference validation happens at the
//! logit level.
//!
//! The adaptive blend's weight `alpha` enters the gradient as a constant.
//! Its finite-difference check therefore freezes the weight matrix at the
//! unperturbed point; a second, non-frozen run exists precisely to show
//! that the blend's gradient is *not* the gradient of the (identical in
//! value) Jeffreys loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{DistSeq, LogitSeq, VocabDist};
use crate::divergence::{
    reduce, token_loss_matrix, token_loss_matrix_with_weights, DivergenceSpec, Reduction,
};
use crate::error::{Error, Result};
use crate::weighting::{alpha_matrix, Beta, TokenWeightMatrix};

/// Default central-difference step; balances truncation against round-off
/// at the 1e-5 relative tolerance used by the checks.
pub const FD_DEFAULT_STEP: f64 = 1e-6;

/// Forward-KL partial w.r.t. the student probability: `-p/q`.
///
/// The quotient is evaluated as `p * q.recip()` with an equal-operand
/// short circuit, so the worked values in the docs are exact: `(0.6, 0.2)`
/// gives exactly `-3` and any `(x, x)` gives exactly `-1`. The form is at
/// most one ulp from plain division, far below every tolerance used here.
pub fn grad_fkl_q(p: f64, q: f64) -> f64 {
    if p == q {
        return -1.0;
    }
    -(p * q.recip())
}

/// Reverse-KL partial w.r.t. the student probability: `ln(q/p) + 1`,
/// evaluated as a log difference. Exactly `1` at `p = q`; negative iff
/// `p/q > e`.
pub fn grad_rkl_q(p: f64, q: f64) -> f64 {
    (q.ln() - p.ln()) + 1.0
}

/// Jeffreys partial: the sum `-p/q + ln(q/p) + 1`.
pub fn grad_jeffreys_q(p: f64, q: f64) -> f64 {
    grad_fkl_q(p, q) + grad_rkl_q(p, q)
}

/// Adaptive-blend partial with the weight supplied as data:
/// `alpha·(-p/q) + (1-alpha)·(ln(q/p) + 1)`.
///
/// `alpha` carries no derivative; passing a weight built from the same
/// `(p, q)` yields a genuinely different result than [`grad_jeffreys_q`]
/// even though the blend's *value* at sharpness 1 equals Jeffreys.
pub fn grad_todi_q(p: f64, q: f64, alpha: f64) -> f64 {
    alpha * grad_fkl_q(p, q) + (1.0 - alpha) * grad_rkl_q(p, q)
}

/// [`grad_todi_q`] with the log-probabilities already in hand, sparing
/// the matrix path two `ln` calls per vocabulary entry (the adaptive
/// blend has to stay within a small constant factor of plain forward KL).
#[inline]
pub(crate) fn grad_todi_from_logs(p: f64, q: f64, lp: f64, lq: f64, alpha: f64) -> f64 {
    alpha * grad_fkl_q(p, q) + (1.0 - alpha) * ((lq - lp) + 1.0)
}

/// Jensen–Shannon partial: `ln(q/m)/2` with `m = (p+q)/2`.
pub fn grad_js_q(p: f64, q: f64) -> f64 {
    0.5 * (q.ln() - (0.5 * (p + q)).ln())
}

/// Total-variation subgradient: `sign(q-p)/2`, zero on the tie.
pub fn grad_tvd_q(p: f64, q: f64) -> f64 {
    if q > p {
        0.5
    } else if q < p {
        -0.5
    } else {
        0.0
    }
}

/// Skew-forward-KL partial: `-p(1-λ) / (λp + (1-λ)q)`.
pub fn grad_skl_q(p: f64, q: f64, lambda: f64) -> f64 {
    -(p * (1.0 - lambda)) / (lambda * p + (1.0 - lambda) * q)
}

/// Skew-reverse-KL partial: `ln(q/s) + 1 - λq/s` with `s = (1-λ)p + λq`.
pub fn grad_srkl_q(p: f64, q: f64, lambda: f64) -> f64 {
    let s = (1.0 - lambda) * p + lambda * q;
    (q.ln() - s.ln()) + 1.0 - lambda * q / s
}

/// Fixed-mixture partial: the same constant blend as its loss.
pub fn grad_fixed_mix_q(p: f64, q: f64, mix_ratio: f64) -> f64 {
    mix_ratio * grad_fkl_q(p, q) + (1.0 - mix_ratio) * grad_rkl_q(p, q)
}

/// The two gradient stages for one sequence pair. Masked rows are
/// identically zero in both.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMatrix {
    /// Partials w.r.t. student probabilities as free coordinates.
    pub d_loss_d_q: Vec<Vec<f64>>,
    /// After the softmax chain rule; each unmasked row sums to zero.
    pub d_loss_d_logits: Vec<Vec<f64>>,
}

/// Analytic gradient of `total_divergence(spec, p, q, reduction)` w.r.t.
/// the student. Adaptive kinds materialize their weights from `(p, q)`
/// here; use [`grad_matrix_with_weights`] to supply them explicitly.
pub fn grad_matrix(
    spec: &DivergenceSpec,
    p: &DistSeq,
    q: &DistSeq,
    reduction: Reduction,
) -> Result<GradMatrix> {
    spec.validate()?;
    p.check_compatible(q)?;
    let weights = match spec.todi_beta() {
        Some(beta) => Some(alpha_matrix(p, q, beta)?),
        None => None,
    };
    grad_matrix_inner(spec, p, q, weights.as_ref(), reduction)
}

/// As [`grad_matrix`], but with caller-supplied weights (adaptive kinds
/// only). The weights are consumed strictly as data.
pub fn grad_matrix_with_weights(
    spec: &DivergenceSpec,
    p: &DistSeq,
    q: &DistSeq,
    weights: &TokenWeightMatrix,
    reduction: Reduction,
) -> Result<GradMatrix> {
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
    grad_matrix_inner(spec, p, q, Some(weights), reduction)
}

fn grad_matrix_inner(
    spec: &DivergenceSpec,
    p: &DistSeq,
    q: &DistSeq,
    weights: Option<&TokenWeightMatrix>,
    reduction: Reduction,
) -> Result<GradMatrix> {
    let v = p.vocab_size();
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::MeanPerPosition => {
            let n = p.unmasked_count();
            if n == 0 {
                return Err(Error::InvalidInput(
                    "mean-per-position reduction over a fully masked sequence".into(),
                ));
            }
            1.0 / n as f64
        }
    };
    let mut d_q = Vec::with_capacity(p.len());
    for t in 0..p.len() {
        if !p.mask()[t] {
            d_q.push(vec![0.0; v]);
            continue;
        }
        let pr = p.row(t).probs();
        let qr = q.row(t).probs();
        let lpr = p.row(t).log_probs();
        let lqr = q.row(t).log_probs();
        let mut row = Vec::with_capacity(v);
        for i in 0..v {
            let g = match *spec {
                DivergenceSpec::Fkl => grad_fkl_q(pr[i], qr[i]),
                DivergenceSpec::Rkl => grad_rkl_q(pr[i], qr[i]),
                DivergenceSpec::Js => grad_js_q(pr[i], qr[i]),
                DivergenceSpec::Tvd => grad_tvd_q(pr[i], qr[i]),
                DivergenceSpec::Skl { lambda } => grad_skl_q(pr[i], qr[i], lambda),
                DivergenceSpec::Srkl { lambda } => grad_srkl_q(pr[i], qr[i], lambda),
                DivergenceSpec::FixedMix { mix_ratio } => {
                    grad_fixed_mix_q(pr[i], qr[i], mix_ratio)
                }
                DivergenceSpec::Jeffreys => grad_jeffreys_q(pr[i], qr[i]),
                DivergenceSpec::ToDi | DivergenceSpec::GeneralizedToDi { .. } => {
                    let w = weights.expect("adaptive kinds always carry weights here");
                    grad_todi_from_logs(pr[i], qr[i], lpr[i], lqr[i], w.get(t, i))
                }
            };
            row.push(g * scale);
        }
        d_q.push(row);
    }
    let d_logits = chain_to_logits(&d_q, q)?;
    Ok(GradMatrix {
        d_loss_d_q: d_q,
        d_loss_d_logits: d_logits,
    })
}

/// Push free-coordinate partials through the softmax Jacobian:
/// `g_k = q_k (u_k - Σ_j q_j u_j)` per row. Masked rows yield zeros; each
/// unmasked output row sums to zero because the Jacobian annihilates
/// constant shifts.
pub fn chain_to_logits(d_loss_d_q: &[Vec<f64>], q: &DistSeq) -> Result<Vec<Vec<f64>>> {
    if d_loss_d_q.len() != q.len() {
        return Err(Error::InvalidInput(format!(
            "gradient has {} rows but sequence has {}",
            d_loss_d_q.len(),
            q.len()
        )));
    }
    let v = q.vocab_size();
    let mut out = Vec::with_capacity(q.len());
    for (t, u) in d_loss_d_q.iter().enumerate() {
        if u.len() != v {
            return Err(Error::InvalidInput(format!(
                "gradient row {t} has length {} but vocabulary is {v}",
                u.len()
            )));
        }
        if !q.mask()[t] {
            out.push(vec![0.0; v]);
            continue;
        }
        let qr = q.row(t).probs();
        let dot: f64 = qr.iter().zip(u).map(|(&a, &b)| a * b).sum();
        out.push(qr.iter().zip(u).map(|(&qk, &uk)| qk * (uk - dot)).collect());
    }
    Ok(out)
}

/// Central-difference gradient of an arbitrary scalar loss over logits:
/// `(L(z + h e_k) - L(z - h e_k)) / 2h` per coordinate.
///
/// `step` must lie in `[1e-8, 1e-4]`; non-finite loss evaluations abort
/// with an oracle-failure error.
pub fn fd_oracle<F>(loss: F, logits: &LogitSeq, step: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&LogitSeq) -> Result<f64>,
{
    if !(step.is_finite() && (1e-8..=1e-4).contains(&step)) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step must lie in [1e-8, 1e-4], got {step}"
        )));
    }
    let mut out = Vec::with_capacity(logits.len());
    let mut work = logits.clone();
    for t in 0..logits.len() {
        let mut row = Vec::with_capacity(logits.vocab_size());
        for k in 0..logits.vocab_size() {
            let z = logits.get(t, k);
            work.set(t, k, z + step);
            let hi = loss(&work)?;
            work.set(t, k, z - step);
            let lo = loss(&work)?;
            work.set(t, k, z);
            if !hi.is_finite() || !lo.is_finite() {
                return Err(Error::OracleFailure(format!(
                    "non-finite loss at coordinate ({t},{k}): L+ = {hi}, L- = {lo}"
                )));
            }
            row.push((hi - lo) / (2.0 * step));
        }
        out.push(row);
    }
    Ok(out)
}

/// One row of the `gradcheck` report.
///
/// `max_rel_err` is the largest `|analytic - fd| / max(|analytic|, |fd|,
/// 1e-3)` over all coordinates and instances; flooring the denominator at
/// `1e-3` makes `max_rel_err <= 1e-5` coincide exactly with the rule
/// "within 1e-5 relative with a 1e-8 absolute floor".
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub kind: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

/// Tolerance on the scaled gradcheck error.
pub const GRADCHECK_TOL: f64 = 1e-5;

/// The kinds exercised by `gradcheck`, with report labels. The adaptive
/// blend appears at four sharpness values, including the reversed one.
pub fn gradcheck_specs() -> Vec<(String, DivergenceSpec)> {
    vec![
        ("FKL".into(), DivergenceSpec::Fkl),
        ("RKL".into(), DivergenceSpec::Rkl),
        ("JS".into(), DivergenceSpec::Js),
        ("TVD".into(), DivergenceSpec::Tvd),
        ("SKL(lambda=0.1)".into(), DivergenceSpec::Skl { lambda: 0.1 }),
        (
            "SRKL(lambda=0.1)".into(),
            DivergenceSpec::Srkl { lambda: 0.1 },
        ),
        (
            "FixedMix(mix_ratio=0.3)".into(),
            DivergenceSpec::FixedMix { mix_ratio: 0.3 },
        ),
        ("Jeffreys".into(), DivergenceSpec::Jeffreys),
        (
            "ToDi(beta=-1)".into(),
            DivergenceSpec::GeneralizedToDi {
                beta: Beta::Finite(-1.0),
            },
        ),
        (
            "ToDi(beta=0)".into(),
            DivergenceSpec::GeneralizedToDi {
                beta: Beta::Finite(0.0),
            },
        ),
        ("ToDi(beta=1)".into(), DivergenceSpec::ToDi),
        (
            "ToDi(beta=2)".into(),
            DivergenceSpec::GeneralizedToDi {
                beta: Beta::Finite(2.0),
            },
        ),
    ]
}

/// A random gradcheck instance: teacher rows, student logits, and a mask
/// with one masked position so the zero-row contract is exercised too.
pub(crate) fn random_instance(
    rng: &mut ChaCha12Rng,
    t_len: usize,
    v: usize,
) -> Result<(DistSeq, LogitSeq)> {
    let masked_t = rng.random_range(0..t_len);
    let mask: Vec<bool> = (0..t_len).map(|t| t != masked_t).collect();
    let rows = (0..t_len)
        .map(|_| VocabDist::random(rng, v))
        .collect::<Result<Vec<_>>>()?;
    let p = DistSeq::with_mask(rows, mask.clone())?;
    let logits = (0..t_len)
        .map(|_| (0..v).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    Ok((p, LogitSeq::new(logits, mask)?))
}

/// Run the analytic-vs-finite-difference suite: `instances` random
/// `(T=8, V=32)` problems per kind, mean-per-position reduction, default
/// step, freeze-weights protocol for the adaptive kinds.
pub fn run_gradcheck(instances: usize, seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    for (label, spec) in gradcheck_specs() {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut max_err: f64 = 0.0;
        for _ in 0..instances {
            let (p, logits) = random_instance(&mut rng, 8, 32)?;
            let err = gradcheck_instance(&spec, &p, &logits, FD_DEFAULT_STEP)?;
            max_err = max_err.max(err);
        }
        reports.push(GradCheckReport {
            kind: label,
            max_rel_err: max_err,
            pass: max_err <= GRADCHECK_TOL,
        });
    }
    Ok(reports)
}

/// Scaled analytic-vs-FD error for one instance (see [`GradCheckReport`]).
pub(crate) fn gradcheck_instance(
    spec: &DivergenceSpec,
    p: &DistSeq,
    logits: &LogitSeq,
    step: f64,
) -> Result<f64> {
    let q = logits.softmax()?;
    let weights = match spec.todi_beta() {
        Some(beta) => Some(alpha_matrix(p, &q, beta)?),
        None => None,
    };
    let gm = grad_matrix_inner(spec, p, &q, weights.as_ref(), Reduction::MeanPerPosition)?;
    let fd = fd_oracle(
        |z| {
            let qz = z.softmax()?;
            let m = match &weights {
                Some(w) => token_loss_matrix_with_weights(spec, p, &qz, w)?,
                None => token_loss_matrix(spec, p, &qz)?,
            };
            reduce(&m, Reduction::MeanPerPosition)
        },
        logits,
        step,
    )?;
    let mut max_err: f64 = 0.0;
    for (fd_row, a_row) in fd.iter().zip(&gm.d_loss_d_logits) {
        for (&f, &a) in fd_row.iter().zip(a_row) {
            let denom = a.abs().max(f.abs()).max(1e-3);
            max_err = max_err.max((a - f).abs() / denom);
        }
    }
    Ok(max_err)
}
