//! Black-box tests of the installed binary: exit codes, environment
//! handling, and artifact plumbing as a user sees them.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use todi::harness::CONFIG_KEYS;
use todi::manifest::{sha256_hex, RunManifest};

fn todi_cmd() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_todi"));
    cmd.env_remove("TODI_SEED");
    cmd
}

fn run(args: &[&str]) -> Output {
    todi_cmd().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process was signalled")
}

fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    fs::write(
        &path,
        "kind=todi\nepochs=2\nteacher_vocab=8\nn_seq=8\nseq_len=8\nseed=1\n",
    )
    .unwrap();
    path
}

#[test]
fn no_arguments_prints_usage_and_exits_one() {
    let out = run(&[]);
    assert_eq!(code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage"), "stderr: {stderr}");
}

#[test]
fn help_lists_every_config_key() {
    let out = run(&["train", "--help"]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for key in CONFIG_KEYS {
        assert!(stdout.contains(key), "train --help does not mention {key}");
    }
}

#[test]
fn unsupported_kind_exits_one_and_lists_the_supported_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "kind=akl\n").unwrap();
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("t.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("akl"), "stderr: {stderr}");
    for kind in ["FKL", "RKL", "ToDi", "GeneralizedToDi", "FixedMix", "Jeffreys"] {
        assert!(stderr.contains(kind), "supported-kind list misses {kind}: {stderr}");
    }
}

#[test]
fn unknown_config_key_exits_one_and_lists_accepted_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("typo.cfg");
    fs::write(&cfg, "leaning_rate=0.1\n").unwrap();
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("t.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("leaning_rate"));
    assert!(stderr.contains("lr"), "accepted keys not listed: {stderr}");
}

#[test]
fn seed_precedence_is_flag_then_env_then_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let out_path = dir.path().join("trace.csv");
    let manifest_seed = |extra_env: Option<&str>, flag: Option<&str>| -> u64 {
        let mut cmd = todi_cmd();
        cmd.args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_path.to_str().unwrap(),
        ]);
        if let Some(v) = extra_env {
            cmd.env("TODI_SEED", v);
        }
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        let out = cmd.output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        RunManifest::load(&RunManifest::manifest_path(&out_path)).unwrap().seed
    };
    assert_eq!(manifest_seed(None, None), 1, "config seed should apply");
    assert_eq!(manifest_seed(Some("2"), None), 2, "env should beat config");
    assert_eq!(manifest_seed(Some("2"), Some("3")), 3, "flag should beat env");
}

#[test]
fn different_seeds_change_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let trace = |seed: &str, name: &str| -> String {
        let out_path = dir.path().join(name);
        let out = run(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            out_path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
        fs::read_to_string(&out_path).unwrap()
    };
    let a = trace("5", "a.csv");
    let b = trace("5", "b.csv");
    let c = trace("6", "c.csv");
    assert_eq!(a, b, "same seed must reproduce the trace exactly");
    assert_ne!(a, c, "different seeds must change the run");
}

#[test]
fn malformed_seed_env_var_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let out = todi_cmd()
        .env("TODI_SEED", "not-a-number")
        .args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("t.csv").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("TODI_SEED"));
}

#[test]
fn gradcheck_reports_all_kinds_passing() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("report.json");
    let out = run(&[
        "gradcheck",
        "--instances",
        "3",
        "--seed",
        "9",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS"));
    assert!(!stdout.contains("FAIL"));
    let reports: Vec<todi::gradients::GradCheckReport> =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(reports.len(), 12);
    assert!(reports.iter().all(|r| r.pass));
    let manifest = RunManifest::load(&RunManifest::manifest_path(&out_path)).unwrap();
    assert_eq!(manifest.command, "gradcheck");
    assert_eq!(
        manifest.config_digest,
        sha256_hex("command=gradcheck\ninstances=3\nseed=9\n")
    );
}

#[test]
fn toy_profile_is_deterministic_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let profile = |name: &str| -> Vec<u8> {
        let out_path = dir.path().join(name);
        let out = run(&[
            "toy",
            "--kind",
            "shifted_gaussians",
            "--vocab",
            "64",
            "--seed",
            "3",
            "--out",
            out_path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
        fs::read(&out_path).unwrap()
    };
    assert_eq!(profile("p1.csv"), profile("p2.csv"));
}

#[test]
fn sweep_then_compare_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_dir = dir.path().join("grid");
    fs::create_dir(&cfg_dir).unwrap();
    let body = "epochs=2\nteacher_vocab=8\nn_seq=8\nseq_len=8\n";
    fs::write(cfg_dir.join("rkl.cfg"), format!("kind=rkl\n{body}")).unwrap();
    fs::write(cfg_dir.join("todi.cfg"), format!("kind=todi\n{body}")).unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (seeds, path) in [("10,20", &a), ("10,20", &b)] {
        let out = run(&[
            "sweep",
            "--configs",
            cfg_dir.to_str().unwrap(),
            "--seeds",
            seeds,
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    // identical sweeps -> identical bytes
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let cmp = dir.path().join("cmp.csv");
    let out = run(&[
        "compare",
        "--a",
        a.to_str().unwrap(),
        "--b",
        b.to_str().unwrap(),
        "--out",
        cmp.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let table = fs::read_to_string(&cmp).unwrap();
    // identical inputs can only tie
    for line in table.lines().skip(1) {
        assert!(line.ends_with(",tie"), "unexpected verdict in {line}");
    }
}

#[test]
fn aborted_training_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("explode.cfg");
    fs::write(
        &cfg,
        "kind=fkl\nlr=1e308\noptimizer=adam\nepochs=3\nteacher_vocab=8\nn_seq=8\nseq_len=8\n",
    )
    .unwrap();
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("t.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("aborted"));
}
