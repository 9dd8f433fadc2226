//! The desk-scale distillation loop: minibatch training of a tabular
//! student against a fixed synthetic teacher.
//!
//! All gradients flow through the analytic machinery in
//! [`crate::gradients`]; the trainer itself only aggregates batch
//! positions into per-context counts, blends in the cross-entropy term,
//! and applies the optimizer. That keeps the whole parameter update on
//! the same code path the finite-difference oracle certifies.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use serde::{Deserialize, Serialize};

use crate::dist::{pearson_similarity, DistSeq};
use crate::divergence::{
    token_loss_matrix, token_loss_matrix_with_weights, total_divergence, DivergenceSpec, Reduction,
};
use crate::error::{Error, Result};
use crate::gradients::{chain_to_logits, grad_matrix, grad_matrix_with_weights};
use crate::harness::config::{OptimizerKind, TrainConfig};
use crate::harness::model::{make_teacher, sample_corpus, TinyLM};
use crate::weighting::TokenWeightMatrix;

/// Decorrelates the shuffle stream from the corpus-sampling stream.
const SHUFFLE_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Metrics snapshot after a full epoch (or, for `epoch == 0`, of the
/// untouched initial student).
///
/// `pearson` is reported as `0.0` when the correlation is undefined —
/// notably at epoch 0, where the uniform-initialized student has zero
/// variance across its probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub fkl_to_teacher: f64,
    pub rkl_to_teacher: f64,
    pub pearson: f64,
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub config: TrainConfig,
    /// Epoch-0 snapshot: full-corpus objective and metrics before any
    /// update.
    pub initial: EpochRecord,
    /// One record per completed epoch; `trace.len() == config.epochs`.
    pub trace: Vec<EpochRecord>,
    pub final_student: TinyLM,
}

impl TrainRun {
    /// The last epoch's record, or the initial snapshot for a zero-epoch
    /// run.
    pub fn final_record(&self) -> &EpochRecord {
        self.trace.last().unwrap_or(&self.initial)
    }
}

pub const TRACE_HEADER: &str = "epoch,train_loss,fkl_to_teacher,rkl_to_teacher,pearson";

/// Render the learning curve, initial snapshot first.
pub fn trace_csv(run: &TrainRun) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for rec in std::iter::once(&run.initial).chain(run.trace.iter()) {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            rec.epoch, rec.train_loss, rec.fkl_to_teacher, rec.rkl_to_teacher, rec.pearson
        ));
    }
    out
}

/// Train a fresh uniform-initialized student under `config`.
pub fn train(config: &TrainConfig) -> Result<TrainRun> {
    let student = TinyLM::zeros(config.teacher_order, config.teacher_vocab)?;
    train_with_student(config, student)
}

/// Train from an explicit starting student (warm starts, ablations).
pub fn train_with_student(config: &TrainConfig, mut student: TinyLM) -> Result<TrainRun> {
    config.validate()?;
    let spec = config.spec()?;
    let teacher = make_teacher(
        config.teacher_kind()?,
        config.teacher_vocab,
        config.teacher_order,
        config.teacher_seed,
    )?
    .with_temperature(config.temperature)?;
    if student.vocab_size() != teacher.vocab_size()
        || student.context_order() != teacher.context_order()
    {
        return Err(Error::InvalidInput(format!(
            "student (V={}, k={}) does not match teacher (V={}, k={})",
            student.vocab_size(),
            student.context_order(),
            teacher.vocab_size(),
            teacher.context_order()
        )));
    }
    if student.temperature() != 1.0 {
        return Err(Error::InvalidParameter(
            "the trainer's softmax chain rule assumes a unit-temperature student".into(),
        ));
    }

    let teacher_conds = teacher.all_conditionals()?;
    let corpus = sample_corpus(&teacher, config.n_seq, config.seq_len, config.seed)?;
    let k = teacher.context_order();
    let n_ctx = student.n_contexts();
    let v = student.vocab_size();
    let mut positions: Vec<(usize, usize)> = Vec::new();
    for seq in &corpus {
        for t in k..seq.len() {
            positions.push((student.context_index(&seq[t - k..t])?, seq[t]));
        }
    }

    let metrics = |student: &TinyLM| -> Result<(f64, f64, f64)> {
        let q_seq = student.all_conditionals()?;
        let fkl = total_divergence(
            &DivergenceSpec::Fkl,
            &teacher_conds,
            &q_seq,
            Reduction::MeanPerPosition,
        )?;
        let rkl = total_divergence(
            &DivergenceSpec::Rkl,
            &teacher_conds,
            &q_seq,
            Reduction::MeanPerPosition,
        )?;
        let pearson = match pearson_similarity(&teacher_conds, &q_seq) {
            Ok(r) => r,
            Err(Error::DegenerateStatistic(_)) => 0.0,
            Err(other) => return Err(other),
        };
        Ok((fkl, rkl, pearson))
    };

    let all: Vec<usize> = (0..positions.len()).collect();
    let (kd0, ce0) = accumulate(&all, &positions, n_ctx, v);
    let initial_loss =
        batch_objective(&spec, None, &teacher_conds, &student, &kd0, &ce0, config.ce_mix)?;
    let (fkl0, rkl0, pearson0) = metrics(&student)?;
    let initial = EpochRecord {
        epoch: 0,
        train_loss: initial_loss,
        fkl_to_teacher: fkl0,
        rkl_to_teacher: rkl0,
        pearson: pearson0,
    };

    let mut trace: Vec<EpochRecord> = Vec::with_capacity(config.epochs);
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(config.seed ^ SHUFFLE_SALT);
    let mut order = all;
    let mut adam_m = vec![vec![0.0; v]; n_ctx];
    let mut adam_v = vec![vec![0.0; v]; n_ctx];
    let mut t_step = 0u32;

    let aborted = |epoch: usize, step: usize, initial: &EpochRecord, trace: &[EpochRecord]| {
        let mut finite_trace = Vec::with_capacity(trace.len() + 1);
        finite_trace.push(initial.clone());
        finite_trace.extend_from_slice(trace);
        Error::TrainingAborted {
            epoch,
            step,
            finite_trace,
        }
    };

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for (step0, chunk) in order.chunks(config.batch_size).enumerate() {
            let (kd_scale, ce_counts) = accumulate(chunk, &positions, n_ctx, v);
            let loss = batch_objective(
                &spec,
                None,
                &teacher_conds,
                &student,
                &kd_scale,
                &ce_counts,
                config.ce_mix,
            )?;
            let grad = batch_gradient(
                &spec,
                None,
                &teacher_conds,
                &student,
                &kd_scale,
                &ce_counts,
                config.ce_mix,
            )?;
            if !loss.is_finite() || grad.iter().flatten().any(|g| !g.is_finite()) {
                return Err(aborted(epoch, step0 + 1, &initial, &trace));
            }
            t_step += 1;
            let table = student.table_mut();
            let mut blew_up = false;
            match config.optimizer {
                OptimizerKind::Sgd => {
                    for (row, grow) in table.iter_mut().zip(&grad) {
                        for (z, &g) in row.iter_mut().zip(grow) {
                            *z -= config.lr * g;
                            blew_up |= !z.is_finite();
                        }
                    }
                }
                OptimizerKind::Adam => {
                    let (b1, b2, eps) = (config.adam_beta1, config.adam_beta2, config.adam_eps);
                    let bc1 = 1.0 - b1.powi(t_step as i32);
                    let bc2 = 1.0 - b2.powi(t_step as i32);
                    for c in 0..n_ctx {
                        for i in 0..v {
                            let g = grad[c][i];
                            adam_m[c][i] = b1 * adam_m[c][i] + (1.0 - b1) * g;
                            adam_v[c][i] = b2 * adam_v[c][i] + (1.0 - b2) * g * g;
                            let m_hat = adam_m[c][i] / bc1;
                            let v_hat = adam_v[c][i] / bc2;
                            table[c][i] -= config.lr * m_hat / (v_hat.sqrt() + eps);
                            blew_up |= !table[c][i].is_finite();
                        }
                    }
                }
            }
            if blew_up {
                return Err(aborted(epoch, step0 + 1, &initial, &trace));
            }
            loss_sum += loss;
            n_batches += 1;
        }
        let (fkl, rkl, pearson) = metrics(&student)?;
        trace.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            fkl_to_teacher: fkl,
            rkl_to_teacher: rkl,
            pearson,
        });
    }

    Ok(TrainRun {
        config: config.clone(),
        initial,
        trace,
        final_student: student,
    })
}

/// Turn a batch of `(context, target)` positions into normalized counts:
/// `kd_scale[c]` is the fraction of the batch seen in context `c`,
/// `ce_counts[c][y]` the fraction that continued with token `y`.
fn accumulate(
    chunk: &[usize],
    positions: &[(usize, usize)],
    n_ctx: usize,
    v: usize,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let w = 1.0 / chunk.len() as f64;
    let mut kd_scale = vec![0.0; n_ctx];
    let mut ce_counts = vec![vec![0.0; v]; n_ctx];
    for &idx in chunk {
        let (c, y) = positions[idx];
        kd_scale[c] += w;
        ce_counts[c][y] += w;
    }
    (kd_scale, ce_counts)
}

/// The minibatch objective:
/// `(1 - ce_mix) * Σ_c kd_scale[c] * D(p_c, q_c) + ce_mix * Σ_{c,y} ce_counts[c][y] * (-ln q_c(y))`.
///
/// With `weights = Some(w)` the adaptive token weights are treated as
/// fixed data (the stop-gradient protocol made explicit); with `None`
/// they are materialized from the current `(p, q)`.
pub(crate) fn batch_objective(
    spec: &DivergenceSpec,
    weights: Option<&TokenWeightMatrix>,
    teacher_conds: &DistSeq,
    student: &TinyLM,
    kd_scale: &[f64],
    ce_counts: &[Vec<f64>],
    ce_mix: f64,
) -> Result<f64> {
    let q_seq = student.all_conditionals()?;
    check_counts(teacher_conds, &q_seq, kd_scale, ce_counts)?;
    let losses = match weights {
        Some(w) => token_loss_matrix_with_weights(spec, teacher_conds, &q_seq, w)?,
        None => token_loss_matrix(spec, teacher_conds, &q_seq)?,
    };
    let mut kd = 0.0;
    for (c, &s) in kd_scale.iter().enumerate() {
        if s != 0.0 {
            kd += s * losses.position_total(c);
        }
    }
    let mut ce = 0.0;
    for (c, row) in ce_counts.iter().enumerate() {
        for (y, &n) in row.iter().enumerate() {
            if n != 0.0 {
                ce -= n * q_seq.row(c).log_prob(y);
            }
        }
    }
    Ok((1.0 - ce_mix) * kd + ce_mix * ce)
}

/// Analytic gradient of [`batch_objective`] w.r.t. the student's logit
/// table. Per-probability partials for both loss terms are assembled
/// first and pushed through one softmax chain-rule application.
pub(crate) fn batch_gradient(
    spec: &DivergenceSpec,
    weights: Option<&TokenWeightMatrix>,
    teacher_conds: &DistSeq,
    student: &TinyLM,
    kd_scale: &[f64],
    ce_counts: &[Vec<f64>],
    ce_mix: f64,
) -> Result<Vec<Vec<f64>>> {
    let q_seq = student.all_conditionals()?;
    check_counts(teacher_conds, &q_seq, kd_scale, ce_counts)?;
    let kd_grad = match weights {
        Some(w) => grad_matrix_with_weights(spec, teacher_conds, &q_seq, w, Reduction::Sum)?,
        None => grad_matrix(spec, teacher_conds, &q_seq, Reduction::Sum)?,
    };
    let v = q_seq.vocab_size();
    let mut u_total = vec![vec![0.0; v]; q_seq.len()];
    for (c, u_row) in u_total.iter_mut().enumerate() {
        let q_row = q_seq.row(c);
        for (i, u) in u_row.iter_mut().enumerate() {
            let kd_part = (1.0 - ce_mix) * kd_scale[c] * kd_grad.d_loss_d_q[c][i];
            let ce_part = -ce_mix * ce_counts[c][i] / q_row.prob(i);
            *u = kd_part + ce_part;
        }
    }
    chain_to_logits(&u_total, &q_seq)
}

fn check_counts(
    teacher_conds: &DistSeq,
    q_seq: &DistSeq,
    kd_scale: &[f64],
    ce_counts: &[Vec<f64>],
) -> Result<()> {
    teacher_conds.check_compatible(q_seq)?;
    if kd_scale.len() != q_seq.len() || ce_counts.len() != q_seq.len() {
        return Err(Error::InvalidInput(format!(
            "count tables cover {} / {} contexts, model has {}",
            kd_scale.len(),
            ce_counts.len(),
            q_seq.len()
        )));
    }
    if let Some(row) = ce_counts.iter().find(|r| r.len() != q_seq.vocab_size()) {
        return Err(Error::InvalidInput(format!(
            "cross-entropy count row has {} entries, vocabulary is {}",
            row.len(),
            q_seq.vocab_size()
        )));
    }
    Ok(())
}
