//! Command-line front end.
//!
//! Every subcommand writes its primary artifact plus a
//! `<out>.manifest.json` sidecar recording the resolved configuration
//! digest and seed. Exit codes: `0` success, `1` usage or configuration
//! error, `2` runtime failure (I/O, aborted training, failed oracle).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::gradients::run_gradcheck;
use crate::harness::{
    compare, compare_csv, run_sweep, sweep_csv, sweep_rows_from_csv, trace_csv, train,
    TrainConfig, CONFIG_KEYS,
};
use crate::manifest::RunManifest;
use crate::toy::{gradient_profile, make_toy, profile_to_csv, ToyKind};

/// Seed precedence is `--seed` flag, then the `TODI_SEED` environment
/// variable, then the config file (or the command's default).
pub const SEED_ENV_VAR: &str = "TODI_SEED";

fn config_keys_help() -> String {
    format!(
        "Config files are plain `key=value` lines ('#' starts a comment).\nAccepted keys: {}.",
        CONFIG_KEYS.join(", ")
    )
}

#[derive(Parser)]
#[command(
    name = "todi",
    version,
    about = "Token-wise distillation divergences: profiles, gradient checks, and desk-scale training",
    after_help = config_keys_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Profile |dFKL/dq| vs |dRKL/dq| over a synthetic two-distribution scenario.
    Toy {
        /// Scenario family: bimodal_vs_unimodal, shifted_gaussians, or random_dirichlet.
        #[arg(long)]
        kind: String,
        /// Vocabulary size (>= 4).
        #[arg(long, default_value_t = 50)]
        vocab: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Destination CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify every analytic gradient against the finite-difference oracle.
    Gradcheck {
        /// Random (p, q) instances per divergence kind.
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Destination JSON report.
        #[arg(long)]
        out: PathBuf,
    },
    /// Distill a tabular student against a synthetic teacher.
    #[command(after_help = config_keys_help())]
    Train {
        /// Config file of `key=value` lines.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's beta (a float, or "inf").
        #[arg(long)]
        beta: Option<String>,
        /// Destination learning-curve CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every `*.cfg` in a directory across a seed list and tabulate.
    #[command(after_help = config_keys_help())]
    Sweep {
        /// Directory containing `*.cfg` config files.
        #[arg(long)]
        configs: PathBuf,
        /// Comma-separated seed list, e.g. 10,20,30,40,50.
        #[arg(long)]
        seeds: String,
        /// Destination sweep-table CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score two sweep tables head to head on their shared configs.
    Compare {
        /// First sweep table ("a").
        #[arg(long)]
        a: PathBuf,
        /// Second sweep table ("b").
        #[arg(long)]
        b: PathBuf,
        /// Destination comparison CSV.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse and execute `argv` (including the program name), returning the
/// process exit code. Kept separate from `main` so tests can drive it.
pub fn dispatch(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // --help / --version land here and are a success
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Usage and configuration mistakes exit 1; failures of a well-formed
/// run exit 2.
pub(crate) fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_)
        | Error::InvalidParameter(_)
        | Error::UnsupportedKind { .. }
        | Error::UnknownConfigKey { .. }
        | Error::ConfigParse(_) => 1,
        Error::DegenerateStatistic(_)
        | Error::DegenerateScenario(_)
        | Error::OracleFailure(_)
        | Error::TrainingAborted { .. }
        | Error::Io(_)
        | Error::Json(_) => 2,
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV_VAR) {
        Ok(s) => s.trim().parse::<u64>().map(Some).map_err(|_| {
            Error::InvalidParameter(format!(
                "{SEED_ENV_VAR} must be an unsigned integer, got {s:?}"
            ))
        }),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::InvalidParameter(format!(
            "{SEED_ENV_VAR} is unreadable: {e}"
        ))),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>> {
    match flag {
        Some(s) => Ok(Some(s)),
        None => env_seed(),
    }
}

/// Write the artifact and its manifest sidecar together.
fn emit(command: &str, canonical: &str, seed: u64, out: &Path, body: &str) -> Result<()> {
    fs::write(out, body)?;
    RunManifest::new(command, canonical, seed, &[out]).write_beside(out)?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Toy { kind, vocab, seed, out } => {
            let seed = resolve_seed(seed)?.unwrap_or(0);
            let toy_kind = ToyKind::parse(&kind)?;
            let scenario = make_toy(toy_kind, vocab, seed)?;
            let rows = gradient_profile(&scenario)?;
            let canonical = format!(
                "command=toy\nkind={}\nseed={seed}\nvocab={vocab}\n",
                toy_kind.as_str()
            );
            emit("toy", &canonical, seed, &out, &profile_to_csv(&rows))?;
            println!(
                "wrote {} profile rows for {} (V={vocab}, seed={seed}) to {}",
                rows.len(),
                toy_kind.as_str(),
                out.display()
            );
            Ok(())
        }
        Command::Gradcheck { instances, seed, out } => {
            let seed = resolve_seed(seed)?.unwrap_or(0);
            if instances == 0 {
                return Err(Error::InvalidParameter("instances must be >= 1".into()));
            }
            let reports = run_gradcheck(instances, seed)?;
            let mut body = serde_json::to_string_pretty(&reports)?;
            body.push('\n');
            let canonical = format!("command=gradcheck\ninstances={instances}\nseed={seed}\n");
            emit("gradcheck", &canonical, seed, &out, &body)?;
            let mut failed = Vec::new();
            for r in &reports {
                println!(
                    "{:24} max_rel_err={:<12.3e} {}",
                    r.kind,
                    r.max_rel_err,
                    if r.pass { "PASS" } else { "FAIL" }
                );
                if !r.pass {
                    failed.push(r.kind.clone());
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Error::OracleFailure(format!(
                    "finite-difference check failed for: {}",
                    failed.join(", ")
                )))
            }
        }
        Command::Train { config, seed, beta, out } => {
            let text = fs::read_to_string(&config)?;
            let cfg = TrainConfig::parse(&text)?
                .with_overrides(resolve_seed(seed)?, beta.as_deref())?;
            let run = train(&cfg)?;
            emit("train", &cfg.canonical_text(), cfg.seed, &out, &trace_csv(&run))?;
            let last = run.final_record();
            println!(
                "trained {} for {} epochs: train_loss={:.6} fkl={:.6} rkl={:.6} pearson={:.4}",
                cfg.kind, cfg.epochs, last.train_loss, last.fkl_to_teacher,
                last.rkl_to_teacher, last.pearson
            );
            Ok(())
        }
        Command::Sweep { configs, seeds, out } => {
            let seeds = parse_seed_list(&seeds)?;
            let labeled = load_config_dir(&configs)?;
            let rows = run_sweep(&labeled, &seeds)?;
            let mut canonical = String::from("command=sweep\n");
            for (label, cfg) in &labeled {
                canonical.push_str(&format!("[{label}]\n{}", cfg.canonical_text()));
            }
            canonical.push_str(&format!(
                "seeds={}\n",
                seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
            ));
            emit("sweep", &canonical, seeds[0], &out, &sweep_csv(&rows))?;
            println!(
                "swept {} configs x {} seeds -> {}",
                labeled.len(),
                seeds.len(),
                out.display()
            );
            Ok(())
        }
        Command::Compare { a, b, out } => {
            let table_a = fs::read_to_string(&a)?;
            let table_b = fs::read_to_string(&b)?;
            let rows = compare(&sweep_rows_from_csv(&table_a)?, &sweep_rows_from_csv(&table_b)?)?;
            let canonical = format!("command=compare\n[a]\n{table_a}[b]\n{table_b}");
            emit("compare", &canonical, 0, &out, &compare_csv(&rows))?;
            let a_wins = rows.iter().filter(|r| r.winner == "a").count();
            let b_wins = rows.iter().filter(|r| r.winner == "b").count();
            println!(
                "compared {} metric rows: a wins {a_wins}, b wins {b_wins}, ties {}",
                rows.len(),
                rows.len() - a_wins - b_wins
            );
            Ok(())
        }
    }
}

fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let seeds = s
        .split(',')
        .map(|tok| {
            tok.trim().parse().map_err(|_| {
                Error::InvalidParameter(format!("bad seed {tok:?} in --seeds list"))
            })
        })
        .collect::<Result<Vec<u64>>>()?;
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("--seeds list is empty".into()));
    }
    Ok(seeds)
}

/// Load every `*.cfg` in `dir`, labeled by file stem, sorted by name.
fn load_config_dir(dir: &Path) -> Result<Vec<(String, TrainConfig)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "cfg"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no *.cfg files in {}",
            dir.display()
        )));
    }
    let mut labeled = Vec::with_capacity(paths.len());
    for p in paths {
        let label = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let cfg = TrainConfig::parse(&fs::read_to_string(&p)?).map_err(|e| {
            Error::ConfigParse(format!("{}: {e}", p.display()))
        })?;
        labeled.push((label, cfg));
    }
    Ok(labeled)
}
