//! Multi-seed sweeps over a set of configs, and head-to-head comparison
//! of two sweep tables.

use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::harness::train::{train, EpochRecord};

/// Aggregated results of one config across its seeds.
///
/// `status` is `"ok"` only when every seed trained to completion;
/// otherwise `"failed"`, with statistics taken over whichever seeds did
/// finish (all-NaN when none did). Spread columns are population standard
/// deviations, zero for a single seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub config: String,
    pub seeds: Vec<u64>,
    pub status: String,
    pub train_loss_mean: f64,
    pub train_loss_std: f64,
    pub fkl_to_teacher_mean: f64,
    pub fkl_to_teacher_std: f64,
    pub rkl_to_teacher_mean: f64,
    pub rkl_to_teacher_std: f64,
    pub pearson_mean: f64,
    pub pearson_std: f64,
}

pub const SWEEP_HEADER: &str = "config,seeds,status,train_loss_mean,train_loss_std,\
fkl_to_teacher_mean,fkl_to_teacher_std,rkl_to_teacher_mean,rkl_to_teacher_std,\
pearson_mean,pearson_std";

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Train every `(label, config)` on every seed and aggregate. A seed
/// whose run aborts marks the row `"failed"` but never sinks the sweep.
pub fn run_sweep(configs: &[(String, TrainConfig)], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if configs.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one config".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one seed".into()));
    }
    for (label, _) in configs {
        if label.contains(',') || label.contains(';') || label.is_empty() {
            return Err(Error::InvalidInput(format!(
                "config label {label:?} must be non-empty and free of ',' and ';'"
            )));
        }
    }
    let mut rows = Vec::with_capacity(configs.len());
    for (label, config) in configs {
        let mut finals: Vec<EpochRecord> = Vec::new();
        let mut all_ok = true;
        for &seed in seeds {
            let result = config
                .clone()
                .with_overrides(Some(seed), None)
                .and_then(|cfg| train(&cfg));
            match result {
                Ok(run) => finals.push(run.final_record().clone()),
                Err(_) => all_ok = false,
            }
        }
        let pick = |f: fn(&EpochRecord) -> f64| -> (f64, f64) {
            let xs: Vec<f64> = finals.iter().map(f).collect();
            mean_std(&xs)
        };
        let (train_loss_mean, train_loss_std) = pick(|r| r.train_loss);
        let (fkl_mean, fkl_std) = pick(|r| r.fkl_to_teacher);
        let (rkl_mean, rkl_std) = pick(|r| r.rkl_to_teacher);
        let (pearson_mean, pearson_std) = pick(|r| r.pearson);
        rows.push(SweepRow {
            config: label.clone(),
            seeds: seeds.to_vec(),
            status: if all_ok { "ok" } else { "failed" }.to_string(),
            train_loss_mean,
            train_loss_std,
            fkl_to_teacher_mean: fkl_mean,
            fkl_to_teacher_std: fkl_std,
            rkl_to_teacher_mean: rkl_mean,
            rkl_to_teacher_std: rkl_std,
            pearson_mean,
            pearson_std,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let seeds = r
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.config,
            seeds,
            r.status,
            r.train_loss_mean,
            r.train_loss_std,
            r.fkl_to_teacher_mean,
            r.fkl_to_teacher_std,
            r.rkl_to_teacher_mean,
            r.rkl_to_teacher_std,
            r.pearson_mean,
            r.pearson_std
        ));
    }
    out
}

/// Parse a table previously produced by [`sweep_csv`].
pub fn sweep_rows_from_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == SWEEP_HEADER => {}
        other => {
            return Err(Error::InvalidInput(format!(
                "not a sweep table: header {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(Error::InvalidInput(format!(
                "sweep row {}: expected 11 fields, got {}",
                lineno + 2,
                f.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::InvalidInput(format!("sweep row {}: bad number {s:?}", lineno + 2)))
        };
        let seeds = f[1]
            .split(';')
            .map(|s| {
                s.parse().map_err(|_| {
                    Error::InvalidInput(format!("sweep row {}: bad seed {s:?}", lineno + 2))
                })
            })
            .collect::<Result<Vec<u64>>>()?;
        rows.push(SweepRow {
            config: f[0].to_string(),
            seeds,
            status: f[2].to_string(),
            train_loss_mean: num(f[3])?,
            train_loss_std: num(f[4])?,
            fkl_to_teacher_mean: num(f[5])?,
            fkl_to_teacher_std: num(f[6])?,
            rkl_to_teacher_mean: num(f[7])?,
            rkl_to_teacher_std: num(f[8])?,
            pearson_mean: num(f[9])?,
            pearson_std: num(f[10])?,
        });
    }
    Ok(rows)
}

/// One metric's head-to-head verdict for a config present in both sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub config: String,
    pub metric: String,
    pub a_mean: f64,
    pub b_mean: f64,
    /// `"a"`, `"b"`, or `"tie"`.
    pub winner: String,
}

pub const COMPARE_HEADER: &str = "config,metric,a_mean,b_mean,winner";

/// Join two sweep tables on the config label and score each shared,
/// fully-successful config on the three teacher-fit metrics. Divergences
/// are better lower, correlation better higher.
pub fn compare(a: &[SweepRow], b: &[SweepRow]) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::new();
    for ra in a {
        let Some(rb) = b.iter().find(|r| r.config == ra.config) else {
            continue;
        };
        if ra.status != "ok" || rb.status != "ok" {
            continue;
        }
        let metrics: [(&str, f64, f64, bool); 3] = [
            ("fkl_to_teacher", ra.fkl_to_teacher_mean, rb.fkl_to_teacher_mean, false),
            ("rkl_to_teacher", ra.rkl_to_teacher_mean, rb.rkl_to_teacher_mean, false),
            ("pearson", ra.pearson_mean, rb.pearson_mean, true),
        ];
        for (name, am, bm, higher_is_better) in metrics {
            let winner = if am == bm {
                "tie"
            } else if (am > bm) == higher_is_better {
                "a"
            } else {
                "b"
            };
            rows.push(CompareRow {
                config: ra.config.clone(),
                metric: name.to_string(),
                a_mean: am,
                b_mean: bm,
                winner: winner.to_string(),
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(
            "the sweeps share no successfully-trained config labels".into(),
        ));
    }
    Ok(rows)
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.config, r.metric, r.a_mean, r.b_mean, r.winner
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::OptimizerKind;

    fn tiny(kind: &str) -> TrainConfig {
        TrainConfig {
            kind: kind.to_string(),
            epochs: 2,
            teacher_vocab: 8,
            n_seq: 8,
            seq_len: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn sweep_aggregates_and_roundtrips() {
        let configs = vec![
            ("fkl".to_string(), tiny("fkl")),
            ("todi".to_string(), tiny("todi")),
        ];
        let rows = run_sweep(&configs, &[10, 20]).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert_eq!(r.status, "ok");
            assert_eq!(r.seeds, vec![10, 20]);
            assert!(r.train_loss_mean.is_finite());
            assert!(r.fkl_to_teacher_std >= 0.0);
        }
        let csv = sweep_csv(&rows);
        assert!(csv.starts_with(SWEEP_HEADER));
        assert!(csv.contains("10;20"));
        let back = sweep_rows_from_csv(&csv).unwrap();
        assert_eq!(rows, back);
    }

    #[test]
    fn single_seed_has_zero_spread() {
        let rows = run_sweep(&[("fkl".into(), tiny("fkl"))], &[10]).unwrap();
        assert_eq!(rows[0].train_loss_std, 0.0);
        assert_eq!(rows[0].pearson_std, 0.0);
    }

    #[test]
    fn aborting_seed_marks_the_row_failed() {
        let blowup = TrainConfig {
            lr: 1e308,
            optimizer: OptimizerKind::Adam,
            ..tiny("fkl")
        };
        let rows = run_sweep(&[("boom".into(), blowup)], &[10]).unwrap();
        assert_eq!(rows[0].status, "failed");
        assert!(rows[0].train_loss_mean.is_nan());
        // failed rows still serialize and parse
        let back = sweep_rows_from_csv(&sweep_csv(&rows)).unwrap();
        assert_eq!(back[0].status, "failed");
        assert!(back[0].train_loss_mean.is_nan());
    }

    #[test]
    fn sweep_input_validation() {
        assert!(run_sweep(&[], &[1]).is_err());
        assert!(run_sweep(&[("a".into(), tiny("fkl"))], &[]).is_err());
        assert!(run_sweep(&[("a,b".into(), tiny("fkl"))], &[1]).is_err());
    }

    fn row(label: &str, status: &str, fkl: f64, rkl: f64, pearson: f64) -> SweepRow {
        SweepRow {
            config: label.to_string(),
            seeds: vec![1],
            status: status.to_string(),
            train_loss_mean: 1.0,
            train_loss_std: 0.0,
            fkl_to_teacher_mean: fkl,
            fkl_to_teacher_std: 0.0,
            rkl_to_teacher_mean: rkl,
            rkl_to_teacher_std: 0.0,
            pearson_mean: pearson,
            pearson_std: 0.0,
        }
    }

    #[test]
    fn compare_scores_each_metric_with_its_own_direction() {
        let a = vec![row("x", "ok", 0.1, 0.3, 0.9)];
        let b = vec![row("x", "ok", 0.2, 0.3, 0.95)];
        let rows = compare(&a, &b).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!((rows[0].metric.as_str(), rows[0].winner.as_str()), ("fkl_to_teacher", "a"));
        assert_eq!((rows[1].metric.as_str(), rows[1].winner.as_str()), ("rkl_to_teacher", "tie"));
        assert_eq!((rows[2].metric.as_str(), rows[2].winner.as_str()), ("pearson", "b"));
        let csv = compare_csv(&rows);
        assert!(csv.starts_with(COMPARE_HEADER));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn compare_skips_failed_and_unmatched_rows() {
        let a = vec![
            row("x", "ok", 0.1, 0.1, 0.9),
            row("y", "failed", 0.1, 0.1, 0.9),
            row("only_a", "ok", 0.1, 0.1, 0.9),
        ];
        let b = vec![row("x", "ok", 0.1, 0.1, 0.9), row("y", "ok", 0.1, 0.1, 0.9)];
        let rows = compare(&a, &b).unwrap();
        assert!(rows.iter().all(|r| r.config == "x"));
        // nothing shared at all -> error
        assert!(compare(&a[2..], &b).is_err());
    }

    #[test]
    fn malformed_sweep_tables_are_rejected()  {
        assert!(sweep_rows_from_csv("bogus header\n").is_err());
        let short = format!("{SWEEP_HEADER}\nonly,three,fields\n");
        assert!(sweep_rows_from_csv(&short).is_err());
        let bad_seed = format!("{SWEEP_HEADER}\nc,x;2,ok,1,0,1,0,1,0,1,0\n");
        assert!(sweep_rows_from_csv(&bad_seed).is_err());
    }
}
