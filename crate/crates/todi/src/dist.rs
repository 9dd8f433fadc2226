//! Numerically stable categorical-distribution primitives.
//!
//! Everything downstream (divergences, weights, gradients, the trainer)
//! works on [`VocabDist`] values: probability vectors over a finite
//! vocabulary that carry both linear and log-scale representations.
//! Log-probabilities are the source of truth for all ratio arithmetic;
//! linear probabilities are kept alongside because the divergence kernels
//! use them as weights.
//!
//! Probabilities are floored at [`EPS_FLOOR`] so every log is finite even
//! when an input (deserialized, or a softmax tail that underflowed)
//! contains exact zeros.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to every probability before taking logs.
pub const EPS_FLOOR: f64 = 1e-12;

/// `ln(EPS_FLOOR)`, the matching floor in log space.
pub const LN_EPS_FLOOR: f64 = -27.631021115928547;

/// A probability distribution over a finite vocabulary.
///
/// Invariants after construction:
/// - `probs[i] ∈ [EPS_FLOOR, 1]` for every `i`,
/// - the pre-floor input summed to 1 within `1e-9`,
/// - `log_probs[i] = ln(probs[i])` to machine precision.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabDist {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl VocabDist {
    /// Build from explicit probabilities (e.g. deserialized data).
    ///
    /// The input must be finite, non-negative, entrywise ≤ 1, and sum to 1
    /// within `1e-9`. Entries below [`EPS_FLOOR`] are clamped up to it.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "vocabulary size must be >= 2, got {}",
                probs.len()
            )));
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "probability at index {i} is not finite: {p}"
                )));
            }
            if p < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "negative probability at index {i}: {p}"
                )));
            }
            if p > 1.0 + 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "probability at index {i} exceeds 1: {p}"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, expected 1 within 1e-9"
            )));
        }
        let floored: Vec<f64> = probs.iter().map(|&p| p.clamp(EPS_FLOOR, 1.0)).collect();
        let log_probs = floored.iter().map(|&p| p.ln()).collect();
        Ok(Self {
            probs: floored,
            log_probs,
        })
    }

    /// Build by normalizing a row of logits; see [`softmax`].
    pub fn from_logits(row: &[f64]) -> Result<Self> {
        softmax(row)
    }

    /// Normalize nonnegative weights (not necessarily summing to 1) into a
    /// distribution. At least one weight must be positive.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        if w.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "vocabulary size must be >= 2, got {}",
                w.len()
            )));
        }
        for (i, &x) in w.iter().enumerate() {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "weight at index {i} must be finite and nonnegative, got {x}"
                )));
            }
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidInput("all weights are zero".into()));
        }
        let probs: Vec<f64> = w.iter().map(|&x| x / sum).collect();
        Self::from_probs(&probs)
    }

    /// The uniform distribution over `v` tokens.
    pub fn uniform(v: usize) -> Result<Self> {
        Self::from_probs(&vec![1.0 / v as f64; v])
    }

    /// A uniformly distributed point on the `v`-simplex (flat Dirichlet),
    /// drawn as normalized unit exponentials. Deterministic given the RNG
    /// state; the randomized test suites and the toy scenarios build their
    /// distributions through this.
    pub fn random<R: Rng>(rng: &mut R, v: usize) -> Result<Self> {
        if v < 2 {
            return Err(Error::InvalidInput(format!(
                "vocabulary size must be >= 2, got {v}"
            )));
        }
        let e: Vec<f64> = (0..v)
            .map(|_| -rng.random_range(f64::MIN_POSITIVE..1.0f64).ln())
            .collect();
        Self::from_weights(&e)
    }

    /// Vocabulary size.
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    /// Probability of token `i` (floored).
    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    /// Natural-log probability of token `i` (floored).
    pub fn log_prob(&self, i: usize) -> f64 {
        self.log_probs[i]
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::InvalidInput(format!(
                "token index {i} out of range for vocabulary of size {}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Max-shifted softmax of a finite logit row.
///
/// Computed through log-softmax so the stored log-probabilities are exact:
/// `log_probs[i] = z_i - max(z) - ln Σ exp(z_j - max(z))`, then floored at
/// [`LN_EPS_FLOOR`] and exponentiated. Large positive logits cannot
/// overflow, and deep tails that would underflow to zero land on the floor
/// instead.
pub fn softmax(row: &[f64]) -> Result<VocabDist> {
    if row.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "softmax needs at least 2 logits, got {}",
            row.len()
        )));
    }
    if let Some((i, &z)) = row.iter().enumerate().find(|(_, z)| !z.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "logit at index {i} is not finite: {z}"
        )));
    }
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    let mut probs = Vec::with_capacity(row.len());
    let mut log_probs = Vec::with_capacity(row.len());
    for &z in row {
        let lp = (z - max - log_norm).max(LN_EPS_FLOOR);
        log_probs.push(lp);
        probs.push(lp.exp());
    }
    Ok(VocabDist { probs, log_probs })
}

/// Natural log of the teacher/student probability ratio `r = p_i / q_i`
/// at one token, formed as a difference of log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbRatio {
    pub log_r: f64,
}

impl ProbRatio {
    /// `r` itself.
    pub fn ratio(&self) -> f64 {
        self.log_r.exp()
    }
}

/// `ln(p_i / q_i)` computed in log space, never as a quotient of
/// probabilities. Finite for any pair of floored distributions.
pub fn log_ratio(p: &VocabDist, q: &VocabDist, i: usize) -> Result<ProbRatio> {
    p.check_index(i)?;
    q.check_index(i)?;
    Ok(ProbRatio {
        log_r: p.log_prob(i) - q.log_prob(i),
    })
}

/// A sequence of per-position distributions with a loss mask.
///
/// Position `t` contributes to losses, gradients and statistics only when
/// `mask[t]` is true. Serializes to JSON as
/// `{"probs": [[...], ...], "mask": [...]}` with row-major `T x V` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DistSeq {
    rows: Vec<VocabDist>,
    mask: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct DistSeqRepr {
    probs: Vec<Vec<f64>>,
    mask: Vec<bool>,
}

impl DistSeq {
    /// Wrap rows with an all-true mask.
    pub fn from_rows(rows: Vec<VocabDist>) -> Result<Self> {
        let mask = vec![true; rows.len()];
        Self::with_mask(rows, mask)
    }

    pub fn with_mask(rows: Vec<VocabDist>, mask: Vec<bool>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInput("empty distribution sequence".into()));
        }
        if rows.len() != mask.len() {
            return Err(Error::InvalidInput(format!(
                "mask length {} does not match sequence length {}",
                mask.len(),
                rows.len()
            )));
        }
        let v = rows[0].len();
        if let Some(t) = rows.iter().position(|r| r.len() != v) {
            return Err(Error::InvalidInput(format!(
                "row {t} has vocabulary size {} but row 0 has {v}",
                rows[t].len()
            )));
        }
        Ok(Self { rows, mask })
    }

    /// Number of positions `T`.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Vocabulary size `V`.
    pub fn vocab_size(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[VocabDist] {
        &self.rows
    }

    pub fn row(&self, t: usize) -> &VocabDist {
        &self.rows[t]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Count of positions contributing to losses.
    pub fn unmasked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Shape-and-mask compatibility check used by every pairwise operation.
    pub fn check_compatible(&self, other: &DistSeq) -> Result<()> {
        if self.len() != other.len() || self.vocab_size() != other.vocab_size() {
            return Err(Error::InvalidInput(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.len(),
                self.vocab_size(),
                other.len(),
                other.vocab_size()
            )));
        }
        if self.mask != other.mask {
            return Err(Error::InvalidInput("masks differ between sequences".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let repr = DistSeqRepr {
            probs: self.rows.iter().map(|r| r.probs().to_vec()).collect(),
            mask: self.mask.clone(),
        };
        Ok(serde_json::to_string(&repr)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let repr: DistSeqRepr = serde_json::from_str(s)?;
        let rows = repr
            .probs
            .iter()
            .map(|r| VocabDist::from_probs(r))
            .collect::<Result<Vec<_>>>()?;
        Self::with_mask(rows, repr.mask)
    }

    /// CSV export: header `t,i,value`, one `(t, i, prob)` triple per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,i,value\n");
        for (t, row) in self.rows.iter().enumerate() {
            for (i, &p) in row.probs().iter().enumerate() {
                out.push_str(&format!("{t},{i},{p}\n"));
            }
        }
        out
    }
}

/// A `T x V` matrix of unnormalized scores plus a loss mask; the student's
/// free parameters flow through this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitSeq {
    logits: Vec<Vec<f64>>,
    mask: Vec<bool>,
}

impl LogitSeq {
    pub fn new(logits: Vec<Vec<f64>>, mask: Vec<bool>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::InvalidInput("empty logit sequence".into()));
        }
        if logits.len() != mask.len() {
            return Err(Error::InvalidInput(format!(
                "mask length {} does not match sequence length {}",
                mask.len(),
                logits.len()
            )));
        }
        let v = logits[0].len();
        for (t, row) in logits.iter().enumerate() {
            if row.len() != v {
                return Err(Error::InvalidInput(format!(
                    "logit row {t} has length {} but row 0 has {v}",
                    row.len()
                )));
            }
            if let Some((i, &z)) = row.iter().enumerate().find(|(_, z)| !z.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "logit ({t},{i}) is not finite: {z}"
                )));
            }
        }
        Ok(Self { logits, mask })
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.logits[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.logits[t][i]
    }

    pub fn set(&mut self, t: usize, i: usize, z: f64) {
        self.logits[t][i] = z;
    }

    /// Row-wise softmax; the mask carries over unchanged.
    pub fn softmax(&self) -> Result<DistSeq> {
        let rows = self
            .logits
            .iter()
            .map(|row| softmax(row))
            .collect::<Result<Vec<_>>>()?;
        DistSeq::with_mask(rows, self.mask.clone())
    }
}

/// Pearson correlation over paired samples. Internal workhorse behind
/// [`pearson_similarity`]; also used by the timing fit in the test suite.
pub(crate) fn pearson_pairs(xs: &[f64], ys: &[f64]) -> Result<f64> {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return Err(Error::InvalidInput(
            "Pearson correlation needs at least 2 paired samples".into(),
        ));
    }
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(Error::DegenerateStatistic(
            "zero variance in Pearson argument".into(),
        ));
    }
    Ok((cov / (var_x * var_y).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation between two distribution sequences, taken over all
/// unmasked `(t, i)` probability pairs. This is the distribution-match
/// statistic the trainer reports per epoch.
///
/// Errors with a degenerate-statistic error when either argument has zero
/// variance over the unmasked entries (e.g. uniform everywhere).
pub fn pearson_similarity(p: &DistSeq, q: &DistSeq) -> Result<f64> {
    p.check_compatible(q)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for t in 0..p.len() {
        if !p.mask()[t] {
            continue;
        }
        xs.extend_from_slice(p.row(t).probs());
        ys.extend_from_slice(q.row(t).probs());
    }
    pearson_pairs(&xs, &ys)
}
