//! The tabular k-order Markov language model used for desk-scale
//! distillation, plus synthetic teacher constructions and ancestral
//! sampling.
//!
//! A `TinyLM` is nothing but a `V^k x V` table of free logits: one row per
//! context (the previous `k` tokens, base-V encoded), softmaxed at a
//! temperature to give the next-token conditional. Teachers are built by
//! writing log-weights of designed conditionals into the table; students
//! start from all zeros (uniform everywhere).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::dist::{softmax, DistSeq, LogitSeq, VocabDist, EPS_FLOOR};
use crate::error::{Error, Result};

/// Hard cap on `V^k` so a typo cannot allocate the universe.
const MAX_CONTEXTS: usize = 1 << 24;

/// A tabular autoregressive model of Markov order `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyLM {
    context_order: usize,
    vocab_size: usize,
    logits_table: Vec<Vec<f64>>,
    temperature: f64,
}

impl TinyLM {
    pub fn new(
        context_order: usize,
        vocab_size: usize,
        logits_table: Vec<Vec<f64>>,
        temperature: f64,
    ) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::InvalidParameter(format!(
                "vocab_size must be >= 2, got {vocab_size}"
            )));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let n_ctx = count_contexts(vocab_size, context_order)?;
        if logits_table.len() != n_ctx {
            return Err(Error::InvalidInput(format!(
                "logits table has {} rows, expected V^k = {n_ctx}",
                logits_table.len()
            )));
        }
        for (c, row) in logits_table.iter().enumerate() {
            if row.len() != vocab_size {
                return Err(Error::InvalidInput(format!(
                    "logits row {c} has {} entries, expected {vocab_size}",
                    row.len()
                )));
            }
            if let Some(&bad) = row.iter().find(|z| !z.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite logit {bad} in row {c}"
                )));
            }
        }
        Ok(Self {
            context_order,
            vocab_size,
            logits_table,
            temperature,
        })
    }

    /// All-zero table: every conditional is uniform. The standard student
    /// initialization.
    pub fn zeros(context_order: usize, vocab_size: usize) -> Result<Self> {
        let n_ctx = count_contexts(vocab_size, context_order)?;
        Self::new(
            context_order,
            vocab_size,
            vec![vec![0.0; vocab_size]; n_ctx],
            1.0,
        )
    }

    pub fn context_order(&self) -> usize {
        self.context_order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Same table, different sampling temperature.
    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        self.temperature = temperature;
        Ok(self)
    }

    pub fn n_contexts(&self) -> usize {
        self.logits_table.len()
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.logits_table
    }

    /// Mutable access for the optimizer; the caller keeps entries finite.
    pub fn table_mut(&mut self) -> &mut Vec<Vec<f64>> {
        &mut self.logits_table
    }

    /// Base-V encode the previous `k` tokens into a row index.
    pub fn context_index(&self, ctx: &[usize]) -> Result<usize> {
        if ctx.len() != self.context_order {
            return Err(Error::InvalidInput(format!(
                "context has {} tokens, expected k = {}",
                ctx.len(),
                self.context_order
            )));
        }
        let mut idx = 0usize;
        for &t in ctx {
            if t >= self.vocab_size {
                return Err(Error::InvalidInput(format!(
                    "token {t} out of range for vocabulary of size {}",
                    self.vocab_size
                )));
            }
            idx = idx * self.vocab_size + t;
        }
        Ok(idx)
    }

    /// Next-token distribution for one context row:
    /// `softmax(logits / temperature)`.
    pub fn conditional(&self, ctx_index: usize) -> Result<VocabDist> {
        if ctx_index >= self.n_contexts() {
            return Err(Error::InvalidInput(format!(
                "context index {ctx_index} out of range for {} contexts",
                self.n_contexts()
            )));
        }
        let row: Vec<f64> = self.logits_table[ctx_index]
            .iter()
            .map(|&z| z / self.temperature)
            .collect();
        softmax(&row)
    }

    /// Every conditional as one sequence (row `c` = context `c`), all
    /// positions unmasked. Exact — this is how metrics see the model.
    pub fn all_conditionals(&self) -> Result<DistSeq> {
        let rows = (0..self.n_contexts())
            .map(|c| self.conditional(c))
            .collect::<Result<Vec<_>>>()?;
        DistSeq::from_rows(rows)
    }

    /// The free parameters viewed as an unmasked logit sequence, which is
    /// the shape the finite-difference oracle consumes.
    pub fn to_logit_seq(&self) -> Result<LogitSeq> {
        LogitSeq::new(self.logits_table.clone(), vec![true; self.n_contexts()])
    }
}

fn count_contexts(vocab_size: usize, context_order: usize) -> Result<usize> {
    let mut n: usize = 1;
    for _ in 0..context_order {
        n = n
            .checked_mul(vocab_size)
            .filter(|&x| x <= MAX_CONTEXTS)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "context table V^k with V={vocab_size}, k={context_order} is too large"
                ))
            })?;
    }
    Ok(n)
}

/// Teacher families for the desk-scale experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherKind {
    /// Every context mixes two dominant modes with a smooth remainder;
    /// multimodal by construction.
    MixtureMarkov,
    /// Sparse random conditionals (about a quarter of the vocabulary
    /// supported), with context 0 forced multimodal.
    RandomSparse,
    /// Every context puts at least 0.9 on a single mode.
    Peaked,
}

impl TeacherKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TeacherKind::MixtureMarkov => "mixture_markov",
            TeacherKind::RandomSparse => "random_sparse",
            TeacherKind::Peaked => "peaked",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "mixture_markov" => Ok(TeacherKind::MixtureMarkov),
            "random_sparse" => Ok(TeacherKind::RandomSparse),
            "peaked" => Ok(TeacherKind::Peaked),
            other => Err(Error::InvalidParameter(format!(
                "unknown teacher kind {other:?}; supported: mixture_markov, random_sparse, peaked"
            ))),
        }
    }
}

/// Build a fixed synthetic teacher, deterministic in `seed`.
///
/// Requires `V >= 8` and `k ∈ {0, 1, 2}`. For the non-peaked kinds at
/// least one context's conditional is multimodal (two probabilities of at
/// least 0.2); the peaked kind instead guarantees a >= 0.9 mode per
/// context, which is incompatible with that multimodality bound.
pub fn make_teacher(kind: TeacherKind, v: usize, k: usize, seed: u64) -> Result<TinyLM> {
    if v < 8 {
        return Err(Error::InvalidParameter(format!(
            "teachers need V >= 8 so conditionals can host two modes plus a tail, got V={v}"
        )));
    }
    if k > 2 {
        return Err(Error::InvalidParameter(format!(
            "teacher context order must be 0, 1, or 2, got {k}"
        )));
    }
    let n_ctx = count_contexts(v, k)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut table = Vec::with_capacity(n_ctx);
    for c in 0..n_ctx {
        let probs = match kind {
            TeacherKind::MixtureMarkov => mixture_conditional(&mut rng, v)?,
            TeacherKind::RandomSparse => {
                if c == 0 {
                    // anchor the multimodality guarantee deterministically
                    mixture_conditional(&mut rng, v)?
                } else {
                    sparse_conditional(&mut rng, v)?
                }
            }
            TeacherKind::Peaked => peaked_conditional(&mut rng, v)?,
        };
        table.push(probs.probs().iter().map(|&p| p.max(EPS_FLOOR).ln()).collect());
    }
    let teacher = TinyLM::new(k, v, table, 1.0)?;
    // verify the construction targets rather than trusting them
    match kind {
        TeacherKind::Peaked => {
            for c in 0..n_ctx {
                let d = teacher.conditional(c)?;
                let top = d.probs().iter().cloned().fold(0.0, f64::max);
                if top < 0.9 {
                    return Err(Error::InvalidParameter(format!(
                        "peaked teacher failed its 0.9 target at context {c} (top {top})"
                    )));
                }
            }
        }
        _ => {
            let multimodal = (0..n_ctx).any(|c| {
                teacher
                    .conditional(c)
                    .map(|d| d.probs().iter().filter(|&&p| p >= 0.2).count() >= 2)
                    .unwrap_or(false)
            });
            if !multimodal {
                return Err(Error::InvalidParameter(format!(
                    "no multimodal context realized for {} at V={v}",
                    kind.as_str()
                )));
            }
        }
    }
    Ok(teacher)
}

/// Two clear modes (0.35 and 0.30 before the smooth remainder) plus a
/// Dirichlet tail over the whole vocabulary.
fn mixture_conditional(rng: &mut ChaCha12Rng, v: usize) -> Result<VocabDist> {
    let m1 = rng.random_range(0..v);
    let mut m2 = rng.random_range(0..v);
    while m2 == m1 {
        m2 = rng.random_range(0..v);
    }
    let tail = VocabDist::random(rng, v)?;
    let mut w: Vec<f64> = tail.probs().iter().map(|&x| 0.35 * x).collect();
    w[m1] += 0.35;
    w[m2] += 0.30;
    VocabDist::from_weights(&w)
}

/// Dirichlet weights on a random quarter (at least 2) of the vocabulary.
fn sparse_conditional(rng: &mut ChaCha12Rng, v: usize) -> Result<VocabDist> {
    let support = (v / 4).max(2);
    let mut idx: Vec<usize> = (0..v).collect();
    // partial Fisher-Yates: the first `support` entries become the support
    for i in 0..support {
        let j = rng.random_range(i..v);
        idx.swap(i, j);
    }
    let mut w = vec![0.0; v];
    for &i in idx.iter().take(support) {
        w[i] = -rng.random_range(f64::MIN_POSITIVE..1.0f64).ln();
    }
    VocabDist::from_weights(&w)
}

/// One mode holding 0.9..0.97 of the mass, the rest spread smoothly.
fn peaked_conditional(rng: &mut ChaCha12Rng, v: usize) -> Result<VocabDist> {
    let mode = rng.random_range(0..v);
    let peak = rng.random_range(0.9..0.97);
    let tail = VocabDist::random(rng, v)?;
    let mut w: Vec<f64> = tail.probs().iter().map(|&x| (1.0 - peak) * x).collect();
    w[mode] += peak;
    VocabDist::from_weights(&w)
}

/// Draw one token index from a distribution by CDF inversion.
pub(crate) fn sample_token<R: Rng>(dist: &VocabDist, rng: &mut R) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in dist.probs().iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.len() - 1
}

/// Ancestral sampling: each sequence starts from `k` uniform-random
/// context tokens, then follows the model's conditionals. Deterministic
/// given the seed.
pub fn sample_corpus(
    model: &TinyLM,
    n_seq: usize,
    seq_len: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if n_seq < 1 {
        return Err(Error::InvalidParameter("n_seq must be >= 1".into()));
    }
    if seq_len < model.context_order() + 1 {
        return Err(Error::InvalidParameter(format!(
            "seq_len must be >= k + 1 = {}, got {seq_len}",
            model.context_order() + 1
        )));
    }
    let k = model.context_order();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut corpus = Vec::with_capacity(n_seq);
    for _ in 0..n_seq {
        let mut seq = Vec::with_capacity(seq_len);
        for _ in 0..k {
            seq.push(rng.random_range(0..model.vocab_size()));
        }
        while seq.len() < seq_len {
            let ctx = &seq[seq.len() - k..];
            let c = model.context_index(ctx)?;
            let d = model.conditional(c)?;
            seq.push(sample_token(&d, &mut rng));
        }
        corpus.push(seq);
    }
    Ok(corpus)
}

/// Exact stationary unigram of the k-order chain, by power iteration on
/// the context distribution. The brute-force oracle behind the
/// sampled-corpus sanity checks.
pub fn stationary_unigram(model: &TinyLM) -> Result<Vec<f64>> {
    let v = model.vocab_size();
    let k = model.context_order();
    let n_ctx = model.n_contexts();
    let conds = (0..n_ctx)
        .map(|c| model.conditional(c))
        .collect::<Result<Vec<_>>>()?;
    let mut pi = vec![1.0 / n_ctx as f64; n_ctx];
    for _ in 0..100_000 {
        let mut next = vec![0.0; n_ctx];
        for (c, &mass) in pi.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let probs = conds[c].probs();
            for (y, &py) in probs.iter().enumerate() {
                // append y, drop the oldest token
                let nc = if k == 0 { 0 } else { (c * v + y) % n_ctx };
                next[nc] += mass * py;
            }
        }
        let delta: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < 1e-13 {
            break;
        }
    }
    let mut unigram = vec![0.0; v];
    for (c, &mass) in pi.iter().enumerate() {
        for (y, &py) in conds[c].probs().iter().enumerate() {
            unigram[y] += mass * py;
        }
    }
    Ok(unigram)
}
