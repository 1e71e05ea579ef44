//! Diagnostics over a finished run directory, as driven by the command line.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    decay_rate_fit, detect_cycles, dyadic_windows, estimate_poisson_solution, growth_fit,
    moment_tracker, windowed_fluctuation_integral, DecayMode, DecayOptions, DiagnosticError,
    MomentOptions, PoissonOptions, PoissonVariant,
};
use crate::algorithm::RunLog;
use crate::config::{parse_config, LoadOptions};
use crate::model::{check_dissipativity, DEFAULT_DISSIPATIVITY_FACTOR};
use crate::oracle::gradient_frozen_sensitivity;
use crate::report::{write_atomic, ReportError, RunDirectory};
use crate::stats::median;
use crate::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    Fluctuations,
    Cycles,
    Moments,
    Decay,
    Poisson,
}

impl DiagnosticKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fluctuations => "fluctuations",
            Self::Cycles => "cycles",
            Self::Moments => "moments",
            Self::Decay => "decay",
            Self::Poisson => "poisson",
        }
    }
}

impl FromStr for DiagnosticKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "fluctuations" => Self::Fluctuations,
            "cycles" => Self::Cycles,
            "moments" => Self::Moments,
            "decay" => Self::Decay,
            "poisson" => Self::Poisson,
            other => return Err(format!("unknown diagnostic kind `{other}`")),
        })
    }
}

/// One named pass/fail check inside a verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: DiagnosticKind,
    pub passed: bool,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone)]
pub struct DiagnosticOutcome {
    pub csv: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DiagnoseParams {
    pub kappa: Option<f64>,
    pub mu: Option<f64>,
    pub seed: u64,
}

fn check(name: &str, passed: bool, value: Option<f64>, threshold: Option<f64>) -> Check {
    Check {
        name: name.into(),
        passed,
        value,
        threshold,
    }
}

fn verdict(kind: DiagnosticKind, checks: Vec<Check>) -> Verdict {
    Verdict {
        kind,
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

fn mean_theta(dir: &RunDirectory) -> Result<Vector, DiagnosticError> {
    let thetas = dir.terminal_thetas();
    let Some(first) = thetas.first() else {
        return Err(DiagnosticError::InvalidInput(
            "no completed seed in the run".into(),
        ));
    };
    Ok(Vector::from_fn(first.len(), |k, _| {
        thetas.iter().map(|t| t[k]).sum::<f64>() / thetas.len() as f64
    }))
}

fn report_err(e: ReportError) -> DiagnosticError {
    DiagnosticError::InvalidInput(e.to_string())
}

/// Dyadic windows, per-seed window maxima and their medians over seeds.
pub type FluctuationDecay = (Vec<(f64, f64)>, Vec<Vec<f64>>, Vec<f64>);

/// Median over seeds of `max(|Δ¹|, |Δ²|)` on the dyadic windows covered by
/// every seed; fails when the last three medians increase.
pub fn fluctuation_decay(logs: &[RunLog]) -> Result<FluctuationDecay, DiagnosticError> {
    let logs: Vec<&RunLog> = logs.iter().filter(|l| !l.fluctuations.is_empty()).collect();
    let Some(t_end) = logs
        .iter()
        .map(|l| l.fluctuations.last().unwrap().t)
        .min_by(f64::total_cmp)
    else {
        return Err(DiagnosticError::InvalidInput(
            "run has no fluctuation samples; enable diagnostics.fluctuations".into(),
        ));
    };
    let mut windows = Vec::new();
    for w in dyadic_windows(1.0, t_end) {
        let dense = logs
            .iter()
            .all(|l| windowed_fluctuation_integral(&l.fluctuations, &[w]).is_ok());
        if dense {
            windows.push(w);
        }
    }
    let per_seed = logs
        .iter()
        .map(|l| {
            Ok(windowed_fluctuation_integral(&l.fluctuations, &windows)?
                .iter()
                .map(|w| w.max_norm())
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>, DiagnosticError>>()?;
    let medians = (0..windows.len())
        .map(|i| median(&per_seed.iter().map(|s| s[i]).collect::<Vec<_>>()))
        .collect();
    Ok((windows, per_seed, medians))
}

/// Non-increasing over the final three entries.
pub fn final_three_non_increasing(values: &[f64]) -> bool {
    values.len() >= 3 && values[values.len() - 3..].windows(2).all(|w| w[1] <= w[0])
}

pub fn diagnose_run(
    dir: &RunDirectory,
    kind: DiagnosticKind,
    params: &DiagnoseParams,
) -> Result<DiagnosticOutcome, DiagnosticError> {
    let loaded = parse_config(
        &dir.config_text,
        &LoadOptions {
            skip_checks: true,
            ..Default::default()
        },
    )
    .map_err(|e| DiagnosticError::InvalidInput(e.to_string()))?;
    let kappa = params.kappa.unwrap_or(loaded.file.diagnostics.kappa);
    let mu = params.mu.unwrap_or(loaded.file.diagnostics.mu);
    let model = loaded.run.model.clone();
    let mut csv = String::new();

    let v = match kind {
        DiagnosticKind::Fluctuations => {
            let logs = dir.logs().map_err(report_err)?;
            let (windows, per_seed, medians) = fluctuation_decay(&logs)?;
            csv.push_str("seed,t_start,t_end,max_delta\n");
            for (log, row) in logs
                .iter()
                .filter(|l| !l.fluctuations.is_empty())
                .zip(&per_seed)
            {
                for (w, m) in windows.iter().zip(row) {
                    let _ = writeln!(
                        csv,
                        "{},{:.16e},{:.16e},{:.16e}",
                        log.summary.seed, w.0, w.1, m
                    );
                }
            }
            for (w, m) in windows.iter().zip(&medians) {
                let _ = writeln!(csv, "median,{:.16e},{:.16e},{:.16e}", w.0, w.1, m);
            }
            let residual = logs
                .iter()
                .flat_map(|l| &l.fluctuations)
                .map(|s| s.reconstruction_residual())
                .fold(0.0, f64::max);
            verdict(
                kind,
                vec![
                    check(
                        "median_delta_non_increasing_final_three",
                        final_three_non_increasing(&medians),
                        medians.last().copied(),
                        None,
                    ),
                    check(
                        "reconstruction_residual",
                        residual <= 1e-12,
                        Some(residual),
                        Some(1e-12),
                    ),
                ],
            )
        }
        DiagnosticKind::Cycles => {
            let logs = dir.logs().map_err(report_err)?;
            csv.push_str("seed,n,tau,sigma,grad_at_tau,alpha_integral,exit,grid_resolution\n");
            let (mut ceased, mut within_budget, mut counted) = (0usize, true, 0usize);
            for log in logs.iter().filter(|l| !l.checkpoints.is_empty()) {
                counted += 1;
                let cycles = detect_cycles(log, kappa, mu);
                for c in &cycles {
                    within_budget &= c.alpha_integral <= mu;
                    let _ = writeln!(
                        csv,
                        "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:?},{:.16e}",
                        log.summary.seed,
                        c.n,
                        c.tau,
                        c.sigma,
                        c.grad_at_tau,
                        c.alpha_integral,
                        c.exit,
                        c.grid_resolution
                    );
                }
                let t_last = log.checkpoints.last().unwrap().record.t;
                if cycles.last().is_none_or(|c| c.sigma < t_last) {
                    ceased += 1;
                }
            }
            if counted == 0 {
                return Err(DiagnosticError::InvalidInput(
                    "run has no checkpoints; set run.checkpoint_every".into(),
                ));
            }
            let frac = ceased as f64 / counted as f64;
            verdict(
                kind,
                vec![
                    check("cycles_cease_fraction", frac >= 0.9, Some(frac), Some(0.9)),
                    check("alpha_budget_respected", within_budget, None, Some(mu)),
                ],
            )
        }
        DiagnosticKind::Moments => {
            let theta = mean_theta(dir)?;
            let r = moment_tracker(
                model.as_ref(),
                &theta,
                &MomentOptions {
                    seed: params.seed,
                    ..Default::default()
                },
            )?;
            csv.push_str("quantity,key,value\n");
            for (i, p) in r.orders.iter().enumerate() {
                let _ = writeln!(csv, "midpoint_moment,{p},{:.16e}", r.midpoint[i]);
                let _ = writeln!(csv, "terminal_moment,{p},{:.16e}", r.terminal[i]);
                let _ = writeln!(csv, "ratio,{p},{:.16e}", r.ratio[i]);
            }
            for (t, s) in r.sup4_times.iter().zip(&r.sup4_values) {
                let _ = writeln!(csv, "sup4,{t},{s:.16e}");
            }
            let exp = r.sup4_exponent.unwrap_or(f64::NAN);
            verdict(
                kind,
                vec![
                    check(
                        "eighth_moment_plateau",
                        r.plateaus(),
                        Some(r.ratio[2]),
                        None,
                    ),
                    check("sup4_exponent", exp <= 0.65, Some(exp), Some(0.65)),
                ],
            )
        }
        DiagnosticKind::Decay => {
            let theta = mean_theta(dir)?;
            let d = model.state_dim();
            let rep = check_dissipativity(
                model.as_ref(),
                2000,
                5.0,
                DEFAULT_DISSIPATIVITY_FACTOR,
                params.seed,
            );
            let f = |x: &Vector| x[0];
            let fit = decay_rate_fit(
                model.as_ref(),
                &theta,
                &Vector::from_element(d, 1.0),
                &Vector::from_element(d, -1.0),
                &f,
                &DecayMode::Contraction {
                    beta_hat: rep.beta_hat,
                },
                &DecayOptions {
                    seed: params.seed,
                    ..Default::default()
                },
            )?;
            csv.push_str("t,signal,noise_floor\n");
            for i in 0..fit.times.len() {
                let _ = writeln!(
                    csv,
                    "{:.16e},{:.16e},{:.16e}",
                    fit.times[i], fit.signal[i], fit.noise_floor[i]
                );
            }
            verdict(
                kind,
                vec![
                    check(
                        "contraction_rate",
                        fit.passed,
                        Some(fit.rate),
                        fit.required_rate.map(|r| r + 0.3),
                    ),
                    check(
                        "r_squared",
                        fit.r_squared > 0.9,
                        Some(fit.r_squared),
                        Some(0.9),
                    ),
                ],
            )
        }
        DiagnosticKind::Poisson => {
            let theta = mean_theta(dir)?;
            let (d, ell) = (model.state_dim(), model.param_dim());
            let obj = &loaded.run.objective;
            let est = gradient_frozen_sensitivity(
                model.as_ref(),
                obj,
                &theta,
                &loaded.run.checkpoint_budget,
                params.seed,
            )?;
            let oracle = est.oracle_values(&theta);
            let opts = PoissonOptions {
                seed: params.seed,
                ..Default::default()
            };
            let x = Vector::zeros(d);
            let sweep = [0.0, 1.0, 2.0, 4.0];
            csv.push_str("variant,sweep_value,v_norm,tail_bound,truncation_t\n");
            let mut tails_ok = true;
            let (mut v1, mut b1, mut v2, mut b2) = (vec![], vec![], vec![], vec![]);
            for s in sweep {
                let xt = Matrix::from_element(d, ell, s);
                let e = estimate_poisson_solution(
                    model.as_ref(),
                    obj,
                    &oracle,
                    &theta,
                    &x,
                    &xt,
                    None,
                    PoissonVariant::V1,
                    &opts,
                )?;
                tails_ok &= e.tail_ok;
                let _ = writeln!(
                    csv,
                    "v1,{s},{:.16e},{:.16e},{}",
                    e.norm(),
                    e.tail_bound,
                    e.truncation_t
                );
                v1.push(e.norm());
                b1.push(1.0 + x.norm() + xt.norm());
            }
            let xt = Matrix::zeros(d, ell);
            for s in sweep {
                let xb = Vector::from_element(d, s);
                let e = estimate_poisson_solution(
                    model.as_ref(),
                    obj,
                    &oracle,
                    &theta,
                    &x,
                    &xt,
                    Some(&xb),
                    PoissonVariant::V2,
                    &opts,
                )?;
                tails_ok &= e.tail_ok;
                let _ = writeln!(
                    csv,
                    "v2,{s},{:.16e},{:.16e},{}",
                    e.norm(),
                    e.tail_bound,
                    e.truncation_t
                );
                v2.push(e.norm());
                b2.push((1.0 + xb.norm()) * (1.0 + xt.norm()));
            }
            let g1 = growth_fit(&v1, &b1);
            let g2 = growth_fit(&v2, &b2);
            verdict(
                kind,
                vec![
                    check("v1_linear_growth", g1.holds, Some(g1.c), None),
                    check("v2_bilinear_growth", g2.holds, Some(g2.c), None),
                    check("tail_below_tenth", tails_ok, None, Some(0.1)),
                ],
            )
        }
    };
    Ok(DiagnosticOutcome { csv, verdict: v })
}

/// Writes `diagnostics/<kind>.csv` and `diagnostics/<kind>_verdict.json`
/// under the run directory; returns both paths.
pub fn write_outcome(
    dir: &RunDirectory,
    outcome: &DiagnosticOutcome,
) -> Result<(PathBuf, PathBuf), ReportError> {
    let out = dir.root.join("diagnostics");
    std::fs::create_dir_all(&out).map_err(|source| ReportError::Io {
        path: out.clone(),
        source,
    })?;
    let name = outcome.verdict.kind.name();
    let csv = out.join(format!("{name}.csv"));
    let json = out.join(format!("{name}_verdict.json"));
    write_atomic(&csv, outcome.csv.as_bytes())?;
    let mut body = serde_json::to_vec_pretty(&outcome.verdict).expect("serializable");
    body.push(b'\n');
    write_atomic(&json, &body)?;
    Ok((csv, json))
}
