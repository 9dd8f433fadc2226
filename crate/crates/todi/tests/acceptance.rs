//! The acceptance gate: one test per shipped guarantee, each printing a
//! single PASS line (visible under `--nocapture`) or failing with the
//! measured numbers. Everything is seeded; a green run is reproducible
//! bit for bit.

use std::fs;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use todi::dist::{DistSeq, LogitSeq, VocabDist};
use todi::divergence::{
    token_loss_matrix, token_loss_matrix_with_weights, DivergenceSpec, Reduction,
};
use todi::gradients::{
    grad_fkl_q, grad_matrix, grad_matrix_with_weights, grad_rkl_q, run_gradcheck,
};
use todi::harness::{train, TrainConfig};
use todi::toy::{gradient_profile, make_toy, Dominant, Region, ToyKind};
use todi::weighting::{alpha, alpha_matrix, step_weight, Beta};

fn pass(n: usize, detail: &str) {
    println!("ACCEPTANCE criterion {n}: PASS - {detail}");
}

/// Every analytic logit-gradient agrees with central differences under
/// the stop-gradient protocol, at 1e-5 relative / 1e-8 absolute, on 100
/// seeded (T=8, V=32) instances per kind.
#[test]
fn criterion_1_gradients_match_the_fd_oracle() {
    let started = Instant::now();
    let reports = run_gradcheck(100, 7).unwrap();
    assert_eq!(reports.len(), 12, "expected all twelve divergence kinds");
    for r in &reports {
        assert!(
            r.pass,
            "{} failed the oracle with max scaled error {}",
            r.kind, r.max_rel_err
        );
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "gradcheck took {elapsed:.1}s, budget is 120s");
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    pass(
        1,
        &format!("12 kinds x 100 instances, worst scaled error {worst:.2e} in {elapsed:.1}s"),
    );
}

/// The closed-form point gradients at (p, q) = (0.6, 0.2).
#[test]
fn criterion_2_point_gradients() {
    let fkl = grad_fkl_q(0.6, 0.2);
    assert_eq!(fkl, -3.0, "forward-KL gradient must be exactly -3, got {fkl}");
    let rkl = grad_rkl_q(0.6, 0.2);
    let expected = (1.0f64 / 3.0).ln() + 1.0;
    assert!(
        (rkl - expected).abs() <= 1e-12,
        "reverse-KL gradient {rkl} vs ln(1/3)+1 = {expected}"
    );
    pass(2, &format!("grad_fkl_q = {fkl} exactly, grad_rkl_q within 1e-12 of ln(1/3)+1"));
}

/// Complementary training signals: across a 10^4-point log grid of the
/// ratio r = p/q, the forward KL dominates in magnitude for r > 1 and the
/// reverse KL for r < 1, and the reverse-KL gradient changes sign exactly
/// in the grid cell containing r = e.
#[test]
fn criterion_3_complementary_signal_over_the_ratio_grid() {
    let n = 10_000;
    let q = 1e-4;
    let mut violations = 0usize;
    let mut flips = Vec::new();
    let mut prev_sign: Option<bool> = None;
    let mut prev_r = 0.0;
    for j in 0..n {
        let r = 10f64.powf(-4.0 + 8.0 * j as f64 / (n - 1) as f64);
        let p = r * q;
        let f = grad_fkl_q(p, q).abs();
        let g = grad_rkl_q(p, q);
        if r > 1.0 && f <= g.abs() {
            violations += 1;
        }
        if r < 1.0 && g.abs() <= f {
            violations += 1;
        }
        let sign = g > 0.0;
        if let Some(prev) = prev_sign {
            if prev != sign {
                flips.push((prev_r, r));
            }
        }
        prev_sign = Some(sign);
        prev_r = r;
    }
    assert_eq!(violations, 0, "{violations} dominance violations on the grid");
    assert_eq!(flips.len(), 1, "reverse-KL gradient should flip sign exactly once: {flips:?}");
    let (lo, hi) = flips[0];
    let e = std::f64::consts::E;
    assert!(lo < e && e <= hi, "sign flip in ({lo}, {hi}] does not bracket e");
    pass(
        3,
        &format!("0 dominance violations over 10^4 ratios; RKL sign flip brackets e in ({lo:.6}, {hi:.6}]"),
    );
}

/// ToDi(beta=1) equals Jeffreys in value but not in gradient: on 1000
/// seeded pairs the per-token values agree to 1e-9 while the gradients
/// differ by more than 0.1 in max-norm on at least 95% of pairs.
#[test]
fn criterion_4_todi_jeffreys_value_identity() {
    let mut rng = ChaCha12Rng::seed_from_u64(404);
    let v = 16;
    let mut value_violations = 0usize;
    let mut grad_separated = 0usize;
    let pairs = 1000;
    for _ in 0..pairs {
        let p = DistSeq::from_rows(vec![VocabDist::random(&mut rng, v).unwrap()]).unwrap();
        let q = DistSeq::from_rows(vec![VocabDist::random(&mut rng, v).unwrap()]).unwrap();
        let todi = token_loss_matrix(&DivergenceSpec::ToDi, &p, &q).unwrap();
        let fkl = token_loss_matrix(&DivergenceSpec::Fkl, &p, &q).unwrap();
        let rkl = token_loss_matrix(&DivergenceSpec::Rkl, &p, &q).unwrap();
        for i in 0..v {
            let jeff = fkl.values[0][i] + rkl.values[0][i];
            if (todi.values[0][i] - jeff).abs() > 1e-9 {
                value_violations += 1;
            }
        }
        let g_todi = grad_matrix(&DivergenceSpec::ToDi, &p, &q, Reduction::Sum).unwrap();
        let g_jeff = grad_matrix(&DivergenceSpec::Jeffreys, &p, &q, Reduction::Sum).unwrap();
        let max_diff = g_todi.d_loss_d_q[0]
            .iter()
            .zip(&g_jeff.d_loss_d_q[0])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if max_diff > 0.1 {
            grad_separated += 1;
        }
    }
    assert_eq!(value_violations, 0, "{value_violations} per-token value mismatches above 1e-9");
    assert!(
        grad_separated * 100 >= pairs * 95,
        "gradients separated on only {grad_separated}/{pairs} pairs"
    );
    pass(
        4,
        &format!("values identical to 1e-9 on all {pairs} pairs; gradients differ >0.1 on {grad_separated}"),
    );
}

/// The weighting function satisfies its four defining conditions on 1e5
/// seeded (p, q, beta) triples, matches the beta=1 and beta=2 closed
/// forms to 1e-12, and converges to the step function at beta = 1e6.
#[test]
fn criterion_5_weight_function_conditions_and_closed_forms() {
    let mut rng = ChaCha12Rng::seed_from_u64(505);
    let mut violations = 0usize;
    for _ in 0..100_000 {
        let p: f64 = rng.random_range(1e-4..1.0);
        let q: f64 = rng.random_range(1e-4..1.0);
        let beta: f64 = rng.random_range(1e-3..2.0);
        let lr = p.ln() - q.ln();
        let a = alpha(lr, beta).unwrap();

        // sign conditions around r = 1
        if lr > 0.0 && a <= 0.5 {
            violations += 1;
        }
        if lr < 0.0 && a >= 0.5 {
            violations += 1;
        }
        if lr == 0.0 && a != 0.5 {
            violations += 1;
        }
        // complementarity under ratio inversion
        if (a + alpha(-lr, beta).unwrap() - 1.0).abs() > 1e-12 {
            violations += 1;
        }
        // monotonicity in the log-ratio
        let lr2 = lr + rng.random_range(0.0..2.0) + 1e-9;
        if alpha(lr2, beta).unwrap() < a {
            violations += 1;
        }
        // closed forms at beta = 1 and beta = 2
        let r = p / q;
        if (alpha(lr, 1.0).unwrap() - r / (1.0 + r)).abs() > 1e-12 {
            violations += 1;
        }
        if (alpha(lr, 2.0).unwrap() - 0.5 * (1.0 + lr.tanh())).abs() > 1e-12 {
            violations += 1;
        }
        // step limit away from the knife edge
        if lr.abs() >= 1e-3 && (alpha(lr, 1e6).unwrap() - step_weight(lr)).abs() > 1e-6 {
            violations += 1;
        }
    }
    assert_eq!(violations, 0, "{violations} weighting violations over 1e5 triples");
    pass(5, "0 violations over 1e5 triples incl. beta=1/beta=2 closed forms and the beta=1e6 step limit");
}

/// The toy gradient profile shows strict region dominance: wherever
/// p > q the forward KL has the larger gradient magnitude, wherever
/// q > p the reverse KL does — all three scenario families, 5 seeds each.
#[test]
fn criterion_6_toy_region_dominance() {
    let started = Instant::now();
    let mut rows_checked = 0usize;
    for kind in ToyKind::ALL {
        for seed in 1..=5u64 {
            let scenario = make_toy(kind, 50, seed).unwrap();
            for row in gradient_profile(&scenario).unwrap() {
                match row.region {
                    Region::PGtQ => assert_eq!(
                        row.dominant,
                        Dominant::Fkl,
                        "{}(seed {seed}) index {}: P_GT_Q but |F'|={} vs |R'|={}",
                        kind.as_str(),
                        row.index,
                        row.grad_fkl_abs,
                        row.grad_rkl_abs
                    ),
                    Region::QGtP => assert_eq!(
                        row.dominant,
                        Dominant::Rkl,
                        "{}(seed {seed}) index {}: Q_GT_P but |F'|={} vs |R'|={}",
                        kind.as_str(),
                        row.index,
                        row.grad_fkl_abs,
                        row.grad_rkl_abs
                    ),
                    Region::Equal => {}
                }
                rows_checked += 1;
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "toy profiles took {elapsed:.1}s, budget is 10s");
    pass(
        6,
        &format!("zero dominance exceptions across {rows_checked} rows (3 families x 5 seeds) in {elapsed:.2}s"),
    );
}

/// ToDi's loss+gradient cost scales linearly in the vocabulary and stays
/// within 3x of plain forward KL at V = 1e5. Both timings cover the full
/// per-step unit a trainer executes: student softmax from logits, loss
/// matrix, and the gradient through the chain rule.
#[test]
fn criterion_7_linear_complexity() {
    let t_len = 4;
    let sizes = [1_000usize, 10_000, 100_000];
    let mut rng = ChaCha12Rng::seed_from_u64(707);

    let make_pair = |rng: &mut ChaCha12Rng, v: usize| {
        let p = DistSeq::from_rows(
            (0..t_len)
                .map(|_| VocabDist::random(rng, v).unwrap())
                .collect(),
        )
        .unwrap();
        let logits: Vec<Vec<f64>> = (0..t_len)
            .map(|_| (0..v).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let z = LogitSeq::new(logits, vec![true; t_len]).unwrap();
        (p, z)
    };

    let time_todi = |p: &DistSeq, z: &LogitSeq| {
        let t0 = Instant::now();
        let q = z.softmax().unwrap();
        let w = alpha_matrix(p, &q, Beta::Finite(1.0)).unwrap();
        let loss =
            token_loss_matrix_with_weights(&DivergenceSpec::ToDi, p, &q, &w).unwrap();
        let grad =
            grad_matrix_with_weights(&DivergenceSpec::ToDi, p, &q, &w, Reduction::Sum).unwrap();
        std::hint::black_box((loss.total(), grad.d_loss_d_logits[0][0]));
        t0.elapsed().as_secs_f64()
    };
    let time_fkl = |p: &DistSeq, z: &LogitSeq| {
        let t0 = Instant::now();
        let q = z.softmax().unwrap();
        let loss = token_loss_matrix(&DivergenceSpec::Fkl, p, &q).unwrap();
        let grad = grad_matrix(&DivergenceSpec::Fkl, p, &q, Reduction::Sum).unwrap();
        std::hint::black_box((loss.total(), grad.d_loss_d_logits[0][0]));
        t0.elapsed().as_secs_f64()
    };

    let median = |mut xs: Vec<f64>| {
        xs.sort_by(f64::total_cmp);
        xs[xs.len() / 2]
    };

    let mut todi_times = Vec::new();
    let mut fkl_at_max = 0.0;
    for &v in &sizes {
        let (p, z) = make_pair(&mut rng, v);
        time_todi(&p, &z); // warm-up
        todi_times.push(median((0..7).map(|_| time_todi(&p, &z)).collect()));
        if v == *sizes.last().unwrap() {
            time_fkl(&p, &z);
            fkl_at_max = median((0..7).map(|_| time_fkl(&p, &z)).collect());
        }
    }

    // R^2 of the least-squares line through (V, time)
    let xs: Vec<f64> = sizes.iter().map(|&v| v as f64).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = todi_times.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&todi_times).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = todi_times.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    assert!(
        r2 >= 0.95,
        "times {todi_times:?} vs V {sizes:?} fit a line with R^2 = {r2:.4}"
    );
    let ratio = todi_times[2] / fkl_at_max;
    assert!(
        ratio <= 3.0,
        "ToDi at V=1e5 took {:.2e}s vs FKL {:.2e}s ({ratio:.2}x)",
        todi_times[2],
        fkl_at_max
    );
    pass(
        7,
        &format!(
            "loss+gradient time linear in V (R^2 = {r2:.4}); ToDi/FKL at V=1e5 = {ratio:.2}x"
        ),
    );
}

/// Desk-scale ordering analog: averaged over a 5-seed set, the beta=1
/// student's final teacher correlation beats the reversed weighting
/// strictly, is at least the beta=0 (fixed-half) result, and is within
/// 0.005 of the best fixed mix.
///
/// This is a seeded stochastic check. Policy: evaluate seed set
/// {10..50}; if it fails, evaluate {60..100} and {110..150} as well and
/// require a 2-of-3 majority.
///
/// The comparison runs plain SGD at partial convergence: the tabular
/// student has full capacity, so at convergence every divergence reaches
/// correlation ~1 and the ordering would be decided by noise, and Adam's
/// per-coordinate normalization cancels the very gradient-magnitude
/// shaping under test. Five early epochs of SGD separate the variants by
/// two orders of magnitude more than the 0.005 slack.
#[test]
fn criterion_8_desk_scale_ordering() {
    let started = Instant::now();
    let base = TrainConfig {
        ce_mix: 0.0,
        epochs: 5,
        lr: 0.5,
        optimizer: todi::harness::OptimizerKind::Sgd,
        n_seq: 128,
        seq_len: 32,
        ..TrainConfig::default()
    };
    let variant = |kind: &str, beta: Option<&str>, mix: Option<f64>| TrainConfig {
        kind: kind.to_string(),
        beta: beta.map(String::from),
        mix_ratio: mix,
        ..base.clone()
    };

    let pearson_mean = |cfg: &TrainConfig, seeds: &[u64]| -> f64 {
        seeds
            .iter()
            .map(|&s| {
                let run = train(&cfg.clone().with_overrides(Some(s), None).unwrap()).unwrap();
                run.final_record().pearson
            })
            .sum::<f64>()
            / seeds.len() as f64
    };

    let evaluate = |seeds: &[u64]| -> (bool, String) {
        let todi = pearson_mean(&variant("todi", None, None), seeds);
        let beta0 = pearson_mean(&variant("generalized_todi", Some("0"), None), seeds);
        let beta_neg = pearson_mean(&variant("generalized_todi", Some("-1"), None), seeds);
        let best_mix = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&m| pearson_mean(&variant("fixed_mix", None, Some(m)), seeds))
            .fold(f64::NEG_INFINITY, f64::max);
        let ok = todi >= beta0 && todi > beta_neg && todi >= best_mix - 0.005;
        let detail = format!(
            "seeds {seeds:?}: todi={todi:.4} beta0={beta0:.4} beta(-1)={beta_neg:.4} best_mix={best_mix:.4}"
        );
        (ok, detail)
    };

    let sets: [&[u64]; 3] = [
        &[10, 20, 30, 40, 50],
        &[60, 70, 80, 90, 100],
        &[110, 120, 130, 140, 150],
    ];
    let (first_ok, first_detail) = evaluate(sets[0]);
    let verdict = if first_ok {
        first_detail
    } else {
        // documented rerun policy: 2-of-3 majority across seed sets
        let mut details = vec![format!("FAILED {first_detail}")];
        let mut ok_count = 0;
        for set in &sets[1..] {
            let (ok, detail) = evaluate(set);
            details.push(format!("{} {detail}", if ok { "ok" } else { "FAILED" }));
            if ok {
                ok_count += 1;
            }
        }
        assert!(
            ok_count >= 2,
            "ordering held on {}/3 seed sets:\n{}",
            ok_count,
            details.join("\n")
        );
        details.join("; ")
    };
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "ordering runs took {elapsed:.1}s, budget is 300s");
    pass(8, &format!("{verdict} ({elapsed:.0}s)"));
}

/// Reruns with the same config and seed produce byte-identical artifacts.
#[test]
fn criterion_9_byte_identical_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    fs::write(
        &cfg_path,
        "kind=todi\nepochs=3\nteacher_vocab=8\nn_seq=16\nseq_len=16\nseed=42\n",
    )
    .unwrap();
    let args = |out: &std::path::Path| -> Vec<String> {
        [
            "todi",
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    };
    let out = dir.path().join("trace.csv");
    assert_eq!(todi::cli::dispatch(&args(&out)), 0);
    let first = fs::read(&out).unwrap();
    let first_manifest = fs::read(dir.path().join("trace.csv.manifest.json")).unwrap();
    assert_eq!(todi::cli::dispatch(&args(&out)), 0);
    assert_eq!(first, fs::read(&out).unwrap(), "train rerun changed the trace CSV");
    assert_eq!(
        first_manifest,
        fs::read(dir.path().join("trace.csv.manifest.json")).unwrap(),
        "train rerun changed the manifest"
    );

    // and the same for a sweep
    let cfg_dir = dir.path().join("cfgs");
    fs::create_dir(&cfg_dir).unwrap();
    fs::write(
        cfg_dir.join("a.cfg"),
        "kind=fkl\nepochs=2\nteacher_vocab=8\nn_seq=8\nseq_len=8\n",
    )
    .unwrap();
    let sweep_out = dir.path().join("sweep.csv");
    let sweep_args: Vec<String> = [
        "todi",
        "sweep",
        "--configs",
        cfg_dir.to_str().unwrap(),
        "--seeds",
        "10,20",
        "--out",
        sweep_out.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    assert_eq!(todi::cli::dispatch(&sweep_args), 0);
    let sweep_first = fs::read(&sweep_out).unwrap();
    assert_eq!(todi::cli::dispatch(&sweep_args), 0);
    assert_eq!(
        sweep_first,
        fs::read(&sweep_out).unwrap(),
        "sweep rerun changed the table"
    );
    assert!(!first.is_empty() && !sweep_first.is_empty());
    pass(9, "train and sweep reruns are byte-identical (CSV bodies and manifests)");
}
