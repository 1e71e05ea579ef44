//! Command-line front end: `run`, `oracle`, `diagnose`, `check`, `compare`.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 divergence,
//! 3 diagnostic or assumption-check failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::algorithm::run_seeds;
use crate::config::{load_config, LoadOptions, LoadedConfig};
use crate::diagnostics::{diagnose_run, write_outcome, DiagnoseParams, DiagnosticKind};
use crate::model::{
    check_dissipativity, check_lipschitz_and_growth, jacobian_consistency,
    DEFAULT_DISSIPATIVITY_FACTOR,
};
use crate::oracle::{gradient_fd, gradient_frozen_sensitivity, objective_value};
use crate::report::{
    begin_run, compare_runs, emit_reports, RunDirectory, RunTiming, DEFAULT_THETA_TOLERANCE,
};
use crate::schedule::validate_schedule;
use crate::Vector;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_DIAGNOSTIC: i32 = 3;

/// Environment variable overriding the output root.
pub const OUT_ENV: &str = "STATFLOW_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "statflow",
    version,
    about = "Online optimization over SDE stationary distributions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the online algorithm for every configured seed.
    Run(RunArgs),
    /// Brute-force frozen-parameter oracles.
    Oracle {
        #[command(subcommand)]
        which: OracleCommand,
    },
    /// Diagnostics over a finished run directory.
    Diagnose(DiagnoseArgs),
    /// Statistical validators for the model and schedule assumptions.
    Check(CheckArgs),
    /// Config and terminal-metric differences between two runs.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Number of seeds, overriding `run.seeds`.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub skip_checks: bool,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated parameter vector.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GradientMethod {
    Fd,
    Sensitivity,
}

#[derive(Debug, Subcommand)]
pub enum OracleCommand {
    /// `∇̂J(θ)`, printed as CSV.
    Gradient {
        #[command(flatten)]
        common: OracleArgs,
        #[arg(long, default_value_t = 0.01)]
        h: f64,
        #[arg(long, value_enum, default_value_t = GradientMethod::Fd)]
        method: GradientMethod,
    },
    /// `Ĵ(θ)`, printed as CSV.
    Objective {
        #[command(flatten)]
        common: OracleArgs,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Fluctuations,
    Cycles,
    Moments,
    Decay,
    Poisson,
}

impl From<KindArg> for DiagnosticKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Fluctuations => Self::Fluctuations,
            KindArg::Cycles => Self::Cycles,
            KindArg::Moments => Self::Moments,
            KindArg::Decay => Self::Decay,
            KindArg::Poisson => Self::Poisson,
        }
    }
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 5.0)]
    pub radius: f64,
    #[arg(long, default_value_t = DEFAULT_DISSIPATIVITY_FACTOR)]
    pub factor: f64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THETA_TOLERANCE)]
    pub tolerance: f64,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli.command),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn execute(command: Command) -> i32 {
    match command {
        Command::Run(a) => cmd_run(&a),
        Command::Oracle { which } => cmd_oracle(&which),
        Command::Diagnose(a) => cmd_diagnose(&a),
        Command::Check(a) => cmd_check(&a),
        Command::Compare(a) => cmd_compare(&a),
    }
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn load(path: &Path, skip_checks: bool) -> Result<LoadedConfig, i32> {
    load_config(
        path,
        &LoadOptions {
            skip_checks,
            ..Default::default()
        },
    )
    .map_err(|e| {
        eprintln!("error: {e}");
        EXIT_CONFIG
    })
}

/// `--out`, then `$STATFLOW_OUT/<config stem>`, then `runs/<config stem>`.
pub fn resolve_out_dir(out: Option<&Path>, config: &Path) -> PathBuf {
    if let Some(o) = out {
        return o.to_path_buf();
    }
    let stem = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    match std::env::var_os(OUT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(stem),
        _ => PathBuf::from("runs").join(stem),
    }
}

fn cmd_run(a: &RunArgs) -> i32 {
    let mut cfg = match load(&a.config, a.skip_checks) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(n) = a.seeds {
        if n == 0 {
            eprintln!("error: --seeds must be at least 1");
            return EXIT_CONFIG;
        }
        cfg.seeds = (0..n as u64).map(|i| cfg.run.seed + i).collect();
    }
    let dir = resolve_out_dir(a.out.as_deref(), &a.config);
    let started = now_unix();
    if let Err(e) = begin_run(&dir, &cfg, started) {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    let clock = Instant::now();
    let result = match run_seeds(&cfg.run, &cfg.seeds) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let timing = RunTiming {
        started_unix: started,
        finished_unix: started + clock.elapsed().as_secs_f64(),
        wall_time_secs: result
            .runs
            .iter()
            .map(|r| {
                r.as_ref()
                    .map(|l| l.summary.wall_time_secs)
                    .unwrap_or(f64::NAN)
            })
            .collect(),
    };
    if let Err(e) = emit_reports(&dir, &cfg, &result, &timing) {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    let s = &result.summary;
    println!("run directory: {}", dir.display());
    println!(
        "seeds: {}, diverged: {}, median |grad J|: {}, success fraction (kappa = {}): {}",
        s.seeds.len(),
        s.n_diverged,
        s.median_grad_norm.map_or("-".into(), |v| format!("{v:.4}")),
        s.kappa,
        s.success_fraction.map_or("-".into(), |v| format!("{v:.3}")),
    );
    let other_errors = result
        .runs
        .iter()
        .any(|r| matches!(r, Err(e) if !matches!(e, crate::algorithm::RunError::Diverged { .. })));
    if other_errors {
        for e in result.runs.iter().filter_map(|r| r.as_ref().err()) {
            eprintln!("error: {e}");
        }
        EXIT_CONFIG
    } else if s.n_diverged > 0 {
        EXIT_DIVERGED
    } else {
        EXIT_OK
    }
}

fn oracle_theta(cfg: &LoadedConfig, theta: &[f64]) -> Result<Vector, i32> {
    let ell = cfg.run.model.param_dim();
    if theta.len() != ell {
        eprintln!(
            "error: --theta needs {ell} comma-separated values, got {}",
            theta.len()
        );
        return Err(EXIT_CONFIG);
    }
    Ok(Vector::from_column_slice(theta))
}

fn cmd_oracle(which: &OracleCommand) -> i32 {
    let common = match which {
        OracleCommand::Gradient { common, .. } | OracleCommand::Objective { common } => common,
    };
    let cfg = match load(&common.config, true) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let theta = match oracle_theta(&cfg, &common.theta) {
        Ok(t) => t,
        Err(code) => return code,
    };
    let model = cfg.run.model.as_ref();
    let budget = &cfg.run.terminal.budget;
    let res = match which {
        OracleCommand::Gradient { h, method, .. } => {
            let g = match method {
                GradientMethod::Fd => {
                    gradient_fd(model, &cfg.run.objective, &theta, *h, budget, common.seed)
                }
                GradientMethod::Sensitivity => gradient_frozen_sensitivity(
                    model,
                    &cfg.run.objective,
                    &theta,
                    budget,
                    common.seed,
                )
                .map(|s| s.gradient),
            };
            g.map(|g| {
                println!("component,value,ci_half_width");
                for (k, (v, c)) in g.value.iter().zip(&g.ci_half_width).enumerate() {
                    println!("{k},{v:.16e},{c:.16e}");
                }
            })
        }
        OracleCommand::Objective { .. } => {
            objective_value(model, &cfg.run.objective, &theta, budget, common.seed).map(|j| {
                println!("value,ci_half_width");
                println!("{:.16e},{:.16e}", j.value, j.ci_half_width);
            })
        }
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DIVERGED
        }
    }
}

fn cmd_diagnose(a: &DiagnoseArgs) -> i32 {
    let dir = match RunDirectory::open(&a.run) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let params = DiagnoseParams {
        kappa: a.kappa,
        mu: a.mu,
        seed: a.seed,
    };
    let outcome = match diagnose_run(&dir, a.kind.into(), &params) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_DIAGNOSTIC;
        }
    };
    match write_outcome(&dir, &outcome) {
        Ok((csv, json)) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&outcome.verdict).expect("serializable")
            );
            println!("wrote {} and {}", csv.display(), json.display());
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    }
    if outcome.verdict.passed {
        EXIT_OK
    } else {
        EXIT_DIAGNOSTIC
    }
}

#[derive(Debug, Serialize)]
struct CheckOutput {
    schedule_valid: bool,
    schedule_violation: Option<&'static str>,
    p_witness: Option<f64>,
    dissipativity: crate::model::AssumptionReport,
    lipschitz: crate::model::LipschitzReport,
    jacobians: crate::model::AssumptionReport,
}

fn cmd_check(a: &CheckArgs) -> i32 {
    let cfg = match load(&a.config, true) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let model = cfg.run.model.as_ref();
    let sched = validate_schedule(&cfg.run.schedule);
    let out = CheckOutput {
        schedule_valid: sched.valid,
        schedule_violation: sched.violation.map(|v| v.message()),
        p_witness: sched.p_witness,
        dissipativity: check_dissipativity(model, a.pairs, a.radius, a.factor, 0),
        lipschitz: check_lipschitz_and_growth(model, a.pairs, a.radius, 0),
        jacobians: jacobian_consistency(model, 200, a.radius, None, 0),
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&out).expect("serializable")
    );
    let ok = out.schedule_valid
        && out.dissipativity.holds
        && out.lipschitz.report.holds
        && out.jacobians.holds;
    if ok {
        EXIT_OK
    } else {
        EXIT_DIAGNOSTIC
    }
}

fn cmd_compare(a: &CompareArgs) -> i32 {
    match compare_runs(&a.a, &a.b, a.tolerance) {
        Ok(r) => {
            print!("{}", r.render());
            if r.within_tolerance {
                EXIT_OK
            } else {
                EXIT_DIAGNOSTIC
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_shape_is_valid() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn explicit_out_wins() {
        let p = resolve_out_dir(Some(Path::new("/tmp/x")), Path::new("cfg/ou.toml"));
        assert_eq!(p, PathBuf::from("/tmp/x"));
    }
}
