//! Run artifacts on disk: CSV logs, summary and manifest JSON, and run
//! comparison.
//!
//! A run directory holds `manifest.json`, `summary.json`, a copy of the
//! configuration as `config.toml`, and one `seed_<n>/` directory per seed
//! with `trajectory.csv`, `checkpoints.csv`, `fluctuations.csv`, `log.json`
//! and optionally `noise.bin`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithm::{summarize, EnsembleResult, RunError, RunLog, RunSummary};
use crate::config::LoadedConfig;
use crate::noise::write_noise_sidecar;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const CHECKPOINT_FILE: &str = "checkpoints.csv";
pub const FLUCTUATION_FILE: &str = "fluctuations.csv";
pub const LOG_FILE: &str = "log.json";
pub const NOISE_FILE: &str = "noise.bin";

/// Default tolerance on terminal θ used by [`compare_runs`].
pub const DEFAULT_THETA_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("i/o error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed {path}: {message}")]
    Schema { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary file in the same directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}_{i}"))
}

pub fn trajectory_header(ell: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend(indexed("theta", ell));
    cols.extend(indexed("G", ell));
    cols.extend(["alpha", "norm_x", "norm_xtilde", "norm_xbar"].map(String::from));
    cols.join(",")
}

pub fn checkpoint_header(ell: usize) -> String {
    format!(
        "{},J_hat,grad_J_hat_norm,z1_norm,z2_norm",
        trajectory_header(ell)
    )
}

pub fn fluctuation_header(ell: usize) -> String {
    let mut cols = vec!["t".to_string(), "alpha".to_string()];
    cols.extend(indexed("z1", ell));
    cols.extend(indexed("z2", ell));
    cols.join(",")
}

fn row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let cells: Vec<String> = values.into_iter().map(num).collect();
    out.push_str(&cells.join(","));
    out.push('\n');
}

fn param_dim(log: &RunLog) -> usize {
    log.summary.theta_final.len()
}

pub fn trajectory_csv(log: &RunLog) -> String {
    let mut s = trajectory_header(param_dim(log));
    s.push('\n');
    for r in &log.trajectory {
        row(
            &mut s,
            std::iter::once(r.t)
                .chain(r.theta.iter().copied())
                .chain(r.gradient.iter().copied())
                .chain([r.alpha, r.norm_x, r.norm_x_tilde, r.norm_x_bar]),
        );
    }
    s
}

pub fn checkpoint_csv(log: &RunLog) -> String {
    let mut s = checkpoint_header(param_dim(log));
    s.push('\n');
    for c in &log.checkpoints {
        let r = &c.record;
        row(
            &mut s,
            std::iter::once(r.t)
                .chain(r.theta.iter().copied())
                .chain(r.gradient.iter().copied())
                .chain([r.alpha, r.norm_x, r.norm_x_tilde, r.norm_x_bar])
                .chain([c.j_hat, c.grad_j_hat_norm, c.z1_norm, c.z2_norm]),
        );
    }
    s
}

pub fn fluctuation_csv(log: &RunLog) -> String {
    let mut s = fluctuation_header(param_dim(log));
    s.push('\n');
    for f in &log.fluctuations {
        row(
            &mut s,
            [f.t, f.alpha]
                .into_iter()
                .chain(f.z1.iter().copied())
                .chain(f.z2.iter().copied()),
        );
    }
    s
}

/// Per-seed entry of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub dir: String,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub c: f64,
    pub q: f64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub version: String,
    pub config_hash: String,
    pub schedule: ScheduleParams,
    pub beta_target: f64,
    pub kappa: f64,
    pub seeds: Vec<u64>,
    pub n_diverged: usize,
    pub success_fraction: Option<f64>,
    pub median_grad_norm: Option<f64>,
    pub runs: Vec<SeedReport>,
}

/// Wall-clock metadata supplied by the caller, so that emitting the same
/// artifacts twice is byte-identical.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub started_unix: f64,
    pub finished_unix: f64,
    pub wall_time_secs: Vec<f64>,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_source: Option<String>,
    pub config_file: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub complete: bool,
    pub timing: RunTiming,
}

pub fn seed_dir_name(seed: u64) -> String {
    format!("seed_{seed}")
}

fn manifest_for(
    config: &LoadedConfig,
    artifacts: Vec<String>,
    complete: bool,
    timing: RunTiming,
) -> Manifest {
    Manifest {
        tool: "statflow".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_source: config.path.as_ref().map(|p| p.display().to_string()),
        config_file: CONFIG_FILE.into(),
        config_hash: config.hash.clone(),
        seeds: config.seeds.clone(),
        artifacts,
        complete,
        timing,
    }
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable");
    v.push(b'\n');
    v
}

/// Creates the run directory and records the configuration and its hash
/// before any simulation starts.
pub fn begin_run(dir: &Path, config: &LoadedConfig, started_unix: f64) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_atomic(&dir.join(CONFIG_FILE), config.text.as_bytes())?;
    let timing = RunTiming {
        started_unix,
        ..Default::default()
    };
    let m = manifest_for(config, vec![CONFIG_FILE.into()], false, timing);
    write_atomic(&dir.join(MANIFEST_FILE), &to_json(&m))
}

fn log_of(run: &Result<RunLog, RunError>) -> Option<&RunLog> {
    match run {
        Ok(log) => Some(log),
        Err(RunError::Diverged { partial, .. }) => Some(partial),
        Err(_) => None,
    }
}

/// Writes every per-seed artifact, `summary.json` and the final manifest.
pub fn emit_reports(
    dir: &Path,
    config: &LoadedConfig,
    result: &EnsembleResult,
    timing: &RunTiming,
) -> Result<Manifest, ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_atomic(&dir.join(CONFIG_FILE), config.text.as_bytes())?;
    let mut artifacts = vec![CONFIG_FILE.to_string()];
    let mut runs = Vec::new();
    for (seed, run) in result.summary.seeds.iter().zip(&result.runs) {
        let name = seed_dir_name(*seed);
        let sd = dir.join(&name);
        fs::create_dir_all(&sd).map_err(io_err(&sd))?;
        let error = run.as_ref().err().map(|e| e.to_string());
        let Some(log) = log_of(run) else {
            runs.push(SeedReport {
                seed: *seed,
                dir: name,
                summary: None,
                error,
            });
            continue;
        };
        let files: [(&str, String); 3] = [
            (TRAJECTORY_FILE, trajectory_csv(log)),
            (CHECKPOINT_FILE, checkpoint_csv(log)),
            (FLUCTUATION_FILE, fluctuation_csv(log)),
        ];
        for (file, body) in files {
            write_atomic(&sd.join(file), body.as_bytes())?;
            artifacts.push(format!("{name}/{file}"));
        }
        let mut stored = log.clone();
        if let Some(noise) = stored.noise.take() {
            let p = sd.join(NOISE_FILE);
            write_noise_sidecar(&p, &noise).map_err(io_err(&p))?;
            artifacts.push(format!("{name}/{NOISE_FILE}"));
        }
        write_atomic(&sd.join(LOG_FILE), &to_json(&stored))?;
        artifacts.push(format!("{name}/{LOG_FILE}"));
        runs.push(SeedReport {
            seed: *seed,
            dir: name,
            summary: Some(log.summary.clone()),
            error,
        });
    }

    let s = &result.summary;
    let summary = SummaryFile {
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config.hash.clone(),
        schedule: ScheduleParams {
            c: config.run.schedule.c,
            q: config.run.schedule.q,
        },
        beta_target: config.run.objective.beta_target,
        kappa: s.kappa,
        seeds: s.seeds.clone(),
        n_diverged: s.n_diverged,
        success_fraction: s.success_fraction,
        median_grad_norm: s.median_grad_norm,
        runs,
    };
    write_atomic(&dir.join(SUMMARY_FILE), &to_json(&summary))?;
    artifacts.push(SUMMARY_FILE.into());
    let manifest = manifest_for(config, artifacts, true, timing.clone());
    write_atomic(&dir.join(MANIFEST_FILE), &to_json(&manifest))?;
    Ok(manifest)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ReportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| ReportError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// A run directory read back from disk.
#[derive(Debug, Clone)]
pub struct RunDirectory {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub summary: SummaryFile,
    pub config_text: String,
}

impl RunDirectory {
    pub fn open(root: &Path) -> Result<Self, ReportError> {
        let manifest: Manifest = read_json(&root.join(MANIFEST_FILE))?;
        let summary: SummaryFile = read_json(&root.join(SUMMARY_FILE))?;
        let cfg = root.join(&manifest.config_file);
        let config_text = fs::read_to_string(&cfg).map_err(io_err(&cfg))?;
        if crate::config::sha256_hex(config_text.as_bytes()) != manifest.config_hash {
            return Err(ReportError::Schema {
                path: cfg,
                message: "config hash differs from the manifest".into(),
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            summary,
            config_text,
        })
    }

    /// Full logs of every seed that produced one, in seed order.
    pub fn logs(&self) -> Result<Vec<RunLog>, ReportError> {
        self.summary
            .runs
            .iter()
            .filter(|r| r.summary.is_some())
            .map(|r| read_json(&self.root.join(&r.dir).join(LOG_FILE)))
            .collect()
    }

    pub fn terminal_thetas(&self) -> Vec<Vec<f64>> {
        self.summary
            .runs
            .iter()
            .filter_map(|r| r.summary.as_ref())
            .filter(|s| !s.diverged)
            .map(|s| s.theta_final.clone())
            .collect()
    }
}

/// One differing configuration key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigDiff {
    pub key: String,
    pub a: Option<String>,
    pub b: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub name: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub delta: Option<f64>,
    /// Tolerance the delta is held to, when it is gated.
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub config_diffs: Vec<ConfigDiff>,
    pub metrics: Vec<MetricDelta>,
    pub within_tolerance: bool,
}

fn flatten(text: &str, path: &Path) -> Result<BTreeMap<String, String>, ReportError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| ReportError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut out = BTreeMap::new();
    for (section, value) in table {
        match value {
            toml::Value::Table(t) => {
                for (k, v) in t {
                    out.insert(format!("{section}.{k}"), v.to_string());
                }
            }
            v => {
                out.insert(section, v.to_string());
            }
        }
    }
    Ok(out)
}

fn mean_theta(thetas: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = thetas.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|k| thetas.iter().map(|t| t[k]).sum::<f64>() / thetas.len() as f64)
        .collect()
}

/// Config differences and terminal-metric deltas between two run
/// directories. The comparison passes when the seed-averaged terminal θ
/// agree componentwise within `theta_tolerance`.
pub fn compare_runs(
    a: &Path,
    b: &Path,
    theta_tolerance: f64,
) -> Result<CompareReport, ReportError> {
    let ra = RunDirectory::open(a)?;
    let rb = RunDirectory::open(b)?;
    let fa = flatten(&ra.config_text, a)?;
    let fb = flatten(&rb.config_text, b)?;
    let mut config_diffs = Vec::new();
    let keys: std::collections::BTreeSet<&String> = fa.keys().chain(fb.keys()).collect();
    for k in keys {
        let (va, vb) = (fa.get(k), fb.get(k));
        if va != vb {
            config_diffs.push(ConfigDiff {
                key: k.clone(),
                a: va.cloned(),
                b: vb.cloned(),
            });
        }
    }

    let (ta, tb) = (
        mean_theta(&ra.terminal_thetas()),
        mean_theta(&rb.terminal_thetas()),
    );
    if !ta.is_empty() && !tb.is_empty() && ta.len() != tb.len() {
        return Err(ReportError::Schema {
            path: b.to_path_buf(),
            message: format!("parameter dimension {} vs {}", ta.len(), tb.len()),
        });
    }
    let mut metrics = Vec::new();
    let mut within = !ta.is_empty() && !tb.is_empty();
    for k in 0..ta.len().max(tb.len()) {
        let (x, y) = (ta.get(k).copied(), tb.get(k).copied());
        let delta = x.zip(y).map(|(x, y)| y - x);
        within &= delta.is_some_and(|d| d.abs() < theta_tolerance);
        metrics.push(MetricDelta {
            name: format!("mean_theta_final_{k}"),
            a: x,
            b: y,
            delta,
            tolerance: Some(theta_tolerance),
        });
    }
    let ungated = |name: &str, x: Option<f64>, y: Option<f64>| MetricDelta {
        name: name.into(),
        a: x,
        b: y,
        delta: x.zip(y).map(|(x, y)| y - x),
        tolerance: None,
    };
    metrics.push(ungated(
        "median_grad_norm",
        ra.summary.median_grad_norm,
        rb.summary.median_grad_norm,
    ));
    metrics.push(ungated(
        "success_fraction",
        ra.summary.success_fraction,
        rb.summary.success_fraction,
    ));
    metrics.push(ungated(
        "n_diverged",
        Some(ra.summary.n_diverged as f64),
        Some(rb.summary.n_diverged as f64),
    ));
    Ok(CompareReport {
        config_diffs,
        metrics,
        within_tolerance: within,
    })
}

impl CompareReport {
    /// Plain-text rendering for the command line.
    pub fn render(&self) -> String {
        let mut s = String::new();
        if self.config_diffs.is_empty() {
            s.push_str("config: identical\n");
        }
        for d in &self.config_diffs {
            let show = |v: &Option<String>| v.clone().unwrap_or_else(|| "<unset>".into());
            let _ = writeln!(s, "config {}: {} -> {}", d.key, show(&d.a), show(&d.b));
        }
        for m in &self.metrics {
            let show = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
            let _ = write!(
                s,
                "{}: {} -> {} (delta {})",
                m.name,
                show(m.a),
                show(m.b),
                show(m.delta)
            );
            if let Some(t) = m.tolerance {
                let _ = write!(s, " [tol {t}]");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "within tolerance: {}", self.within_tolerance);
        s
    }
}

/// Rebuilds an ensemble summary from logs read back from disk.
pub fn summary_from_logs(logs: &[RunLog], kappa: f64) -> crate::algorithm::EnsembleSummary {
    let seeds: Vec<u64> = logs.iter().map(|l| l.summary.seed).collect();
    let runs: Vec<Result<RunLog, RunError>> = logs.iter().cloned().map(Ok).collect();
    summarize(&runs, &seeds, kappa)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headers_match_column_contract() {
        assert_eq!(
            trajectory_header(1),
            "t,theta_0,G_0,alpha,norm_x,norm_xtilde,norm_xbar"
        );
        assert_eq!(
            checkpoint_header(2),
            "t,theta_0,theta_1,G_0,G_1,alpha,norm_x,norm_xtilde,norm_xbar,\
             J_hat,grad_J_hat_norm,z1_norm,z2_norm"
        );
        assert_eq!(fluctuation_header(1), "t,alpha,z1_0,z2_0");
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(num(-2.0), "-2.0000000000000000e0");
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_atomic(&p, b"a\n").unwrap();
        write_atomic(&p, b"b\n").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"b\n");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
