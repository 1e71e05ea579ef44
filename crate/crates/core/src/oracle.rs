//! Brute-force ground truth at frozen θ.
//!
//! Stationary expectations are long-run time averages after burn-in,
//! averaged over independent replicas; confidence intervals come from the
//! replica spread (Student t, 95%). Nothing here touches the online
//! algorithm.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::{FrozenSimulator, IntegratorError};
use crate::model::SdeModel;
use crate::noise::NoiseStream;
use crate::objective::ObjectiveSpec;
use crate::stats::{mean, sample_covariance, sample_variance, t_quantile_95};
use crate::{Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error("invalid oracle budget: {0}")]
    InvalidBudget(String),
}

/// Simulation budget of one oracle call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBudget {
    /// Length of each replica path.
    pub t: f64,
    /// Fraction of each path discarded before averaging.
    pub burn_in_frac: f64,
    pub n_replicas: usize,
    pub dt: f64,
    /// Initial state; the origin when `None`.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self {
            t: 1000.0,
            burn_in_frac: 0.2,
            n_replicas: 8,
            dt: 0.01,
            x0: None,
        }
    }
}

impl OracleBudget {
    /// Reduced budget used at run checkpoints.
    pub fn checkpoint() -> Self {
        Self {
            t: 500.0,
            ..Self::default()
        }
    }

    /// Budget for terminal and acceptance evaluations.
    pub fn terminal() -> Self {
        Self {
            t: 1000.0,
            n_replicas: 16,
            ..Self::default()
        }
    }

    pub fn with_t(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    pub fn with_replicas(mut self, n: usize) -> Self {
        self.n_replicas = n;
        self
    }

    fn validate(&self) -> Result<(), OracleError> {
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(OracleError::InvalidBudget(format!(
                "T must be positive, got {}",
                self.t
            )));
        }
        if !(0.0..=0.9).contains(&self.burn_in_frac) {
            return Err(OracleError::InvalidBudget(format!(
                "burn-in fraction must lie in [0, 0.9], got {}",
                self.burn_in_frac
            )));
        }
        if self.n_replicas < 2 {
            return Err(OracleError::InvalidBudget(
                "at least two replicas are needed for a confidence interval".into(),
            ));
        }
        if !(self.dt > 0.0 && self.dt < self.t) {
            return Err(OracleError::InvalidBudget(format!(
                "dt = {} out of range",
                self.dt
            )));
        }
        Ok(())
    }

    fn steps(&self) -> (u64, u64) {
        let n = (self.t / self.dt).round().max(1.0) as u64;
        let burn = ((self.burn_in_frac * n as f64).round() as u64).min(n - 1);
        (n, burn)
    }

    fn initial_state(&self, d: usize) -> Vector {
        match &self.x0 {
            Some(v) => Vector::from_column_slice(v),
            None => Vector::zeros(d),
        }
    }
}

/// A stationary quantity with its 95% confidence half width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicEstimate {
    pub value: f64,
    pub ci_half_width: f64,
    pub t_used: f64,
    pub burn_in: f64,
    pub n_replicas: usize,
}

/// Vector-valued oracle output with componentwise 95% half widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub value: Vec<f64>,
    pub ci_half_width: Vec<f64>,
}

impl GradientEstimate {
    pub fn norm(&self) -> f64 {
        self.value.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `(Ê_π f, ∇̂_θ Ê_π f)` at a fixed θ, as cached by the run driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleValues {
    pub theta: Vec<f64>,
    pub mean_f: f64,
    pub grad_mean_f: Vec<f64>,
}

impl OracleValues {
    /// `∇̂J = 2 (Ê_π f - β) ∇̂_θ Ê_π f`.
    pub fn grad_objective(&self, beta_target: f64) -> Vec<f64> {
        let gap = self.mean_f - beta_target;
        self.grad_mean_f.iter().map(|g| 2.0 * gap * g).collect()
    }

    pub fn objective(&self, beta_target: f64) -> f64 {
        let gap = self.mean_f - beta_target;
        gap * gap
    }
}

/// Output of the frozen-sensitivity oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEstimate {
    pub mean_f: ErgodicEstimate,
    pub grad_mean_f: GradientEstimate,
    pub gradient: GradientEstimate,
}

impl SensitivityEstimate {
    pub fn oracle_values(&self, theta: &Vector) -> OracleValues {
        OracleValues {
            theta: theta.as_slice().to_vec(),
            mean_f: self.mean_f.value,
            grad_mean_f: self.grad_mean_f.value.clone(),
        }
    }
}

fn ci_floor(value: f64) -> f64 {
    f64::EPSILON * value.abs().max(1.0)
}

fn estimate_from(values: &[f64], budget: &OracleBudget) -> ErgodicEstimate {
    let m = mean(values);
    let ci = t_quantile_95(values.len()) * (sample_variance(values) / values.len() as f64).sqrt();
    ErgodicEstimate {
        value: m,
        ci_half_width: ci.max(ci_floor(m)),
        t_used: budget.t,
        burn_in: budget.burn_in_frac * budget.t,
        n_replicas: values.len(),
    }
}

/// Post-burn-in time average of `f(X_t)` along one frozen path.
fn path_average(
    model: &dyn SdeModel,
    theta: &Vector,
    budget: &OracleBudget,
    stream: NoiseStream,
    f: &(dyn Fn(&Vector) -> f64 + Sync),
) -> Result<f64, OracleError> {
    let (n, burn) = budget.steps();
    let mut sim = FrozenSimulator::new(
        model,
        theta.clone(),
        budget.initial_state(model.state_dim()),
        None,
        budget.dt,
        stream,
    )?;
    let mut acc = 0.0;
    for k in 1..=n {
        sim.step()?;
        if k > burn {
            acc += f(sim.x());
        }
    }
    Ok(acc / (n - burn) as f64)
}

/// Post-burn-in time average of `(∇f(X_t) X̃_t)ᵀ` with `X̃_0 = 0`.
fn path_sensitivity(
    model: &dyn SdeModel,
    objective: &ObjectiveSpec,
    theta: &Vector,
    budget: &OracleBudget,
    stream: NoiseStream,
) -> Result<Vector, OracleError> {
    let (n, burn) = budget.steps();
    let (d, ell) = (model.state_dim(), model.param_dim());
    let mut sim = FrozenSimulator::new(
        model,
        theta.clone(),
        budget.initial_state(d),
        Some(Matrix::zeros(d, ell)),
        budget.dt,
        stream,
    )?;
    let mut acc = Vector::zeros(ell);
    let mut buf = vec![0.0; d];
    let mut gt = Vector::zeros(ell);
    for k in 1..=n {
        sim.step()?;
        if k > burn {
            let xt = sim.x_tilde().expect("tangent enabled");
            objective
                .f
                .grad_times_tangent(sim.x(), xt, &mut buf, &mut gt);
            acc += &gt;
        }
    }
    Ok(acc / (n - burn) as f64)
}

fn replica_averages(
    model: &dyn SdeModel,
    theta: &Vector,
    f: &(dyn Fn(&Vector) -> f64 + Sync),
    budget: &OracleBudget,
    seed: u64,
) -> Result<Vec<f64>, OracleError> {
    budget.validate()?;
    (0..budget.n_replicas as u64)
        .into_par_iter()
        .map(|r| path_average(model, theta, budget, NoiseStream::new(seed, 2 * r), f))
        .collect()
}

/// `E_{π_θ} f` by long-run time averages.
pub fn stationary_expectation(
    model: &dyn SdeModel,
    theta: &Vector,
    f: &(dyn Fn(&Vector) -> f64 + Sync),
    budget: &OracleBudget,
    seed: u64,
) -> Result<ErgodicEstimate, OracleError> {
    let values = replica_averages(model, theta, f, budget, seed)?;
    Ok(estimate_from(&values, budget))
}

/// `J(θ) = (Ê_π f - β)²` with delta-method interval `2|Ê - β| ci + ci²`.
pub fn objective_value(
    model: &dyn SdeModel,
    objective: &ObjectiveSpec,
    theta: &Vector,
    budget: &OracleBudget,
    seed: u64,
) -> Result<ErgodicEstimate, OracleError> {
    let f = |x: &Vector| objective.f.value(x);
    let m = stationary_expectation(model, theta, &f, budget, seed)?;
    let gap = m.value - objective.beta_target;
    Ok(ErgodicEstimate {
        value: gap * gap,
        ci_half_width: 2.0 * gap.abs() * m.ci_half_width + m.ci_half_width * m.ci_half_width,
        ..m
    })
}

/// Central differences `(J(θ + h e_i) - J(θ - h e_i)) / 2h` with common random
/// numbers: both sides of every coordinate use the same replica streams.
pub fn gradient_fd(
    model: &dyn SdeModel,
    objective: &ObjectiveSpec,
    theta: &Vector,
    h: f64,
    budget: &OracleBudget,
    seed: u64,
) -> Result<GradientEstimate, OracleError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(OracleError::InvalidBudget(format!(
            "FD step must be positive, got {h}"
        )));
    }
    let f = |x: &Vector| objective.f.value(x);
    let beta = objective.beta_target;
    let mut value = Vec::with_capacity(theta.len());
    let mut ci = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[i] += h;
        minus[i] -= h;
        let mp = replica_averages(model, &plus, &f, budget, seed)?;
        let mm = replica_averages(model, &minus, &f, budget, seed)?;
        let diffs: Vec<f64> = mp
            .iter()
            .zip(&mm)
            .map(|(p, m)| (p - m) / (2.0 * h))
            .collect();
        let sums: Vec<f64> = mp
            .iter()
            .zip(&mm)
            .map(|(p, m)| p + m - 2.0 * beta)
            .collect();
        let n = diffs.len() as f64;
        let (dbar, sbar) = (mean(&diffs), mean(&sums));
        let var = sbar * sbar * sample_variance(&diffs) / n
            + dbar * dbar * sample_variance(&sums) / n
            + 2.0 * dbar * sbar * sample_covariance(&diffs, &sums) / n;
        let g = dbar * sbar;
        value.push(g);
        ci.push((t_quantile_95(diffs.len()) * var.max(0.0).sqrt()).max(ci_floor(g)));
    }
    Ok(GradientEstimate {
        value,
        ci_half_width: ci,
    })
}

/// `2 (Ê_π f - β) · (1/T) ∫ ∇f(X_t) X̃_t dt` at frozen θ.
///
/// Replica `r` estimates the sensitivity average on its `W` stream and the
/// stationary mean on its independent `W̄` stream, so the two factors are
/// independent.
pub fn gradient_frozen_sensitivity(
    model: &dyn SdeModel,
    objective: &ObjectiveSpec,
    theta: &Vector,
    budget: &OracleBudget,
    seed: u64,
) -> Result<SensitivityEstimate, OracleError> {
    budget.validate()?;
    let f = |x: &Vector| objective.f.value(x);
    let per_replica: Vec<(f64, Vector)> = (0..budget.n_replicas as u64)
        .into_par_iter()
        .map(|r| {
            let s = path_sensitivity(
                model,
                objective,
                theta,
                budget,
                NoiseStream::new(seed, 2 * r),
            )?;
            let m = path_average(model, theta, budget, NoiseStream::new(seed, 2 * r + 1), &f)?;
            Ok((m, s))
        })
        .collect::<Result<_, OracleError>>()?;

    let ms: Vec<f64> = per_replica.iter().map(|(m, _)| *m).collect();
    let mean_f = estimate_from(&ms, budget);
    let n = ms.len() as f64;
    let tq = t_quantile_95(ms.len());
    let var_m = sample_variance(&ms) / n;
    let gap = mean_f.value - objective.beta_target;

    let ell = model.param_dim();
    let mut sens = GradientEstimate {
        value: Vec::with_capacity(ell),
        ci_half_width: Vec::with_capacity(ell),
    };
    let mut grad = sens.clone();
    for j in 0..ell {
        let sj: Vec<f64> = per_replica.iter().map(|(_, s)| s[j]).collect();
        let sbar = mean(&sj);
        let var_s = sample_variance(&sj) / n;
        sens.value.push(sbar);
        sens.ci_half_width
            .push((tq * var_s.sqrt()).max(ci_floor(sbar)));

        let g = 2.0 * gap * sbar;
        let var_g = 4.0 * (sbar * sbar * var_m + gap * gap * var_s + var_m * var_s);
        grad.value.push(g);
        grad.ci_half_width
            .push((tq * var_g.sqrt()).max(ci_floor(g)));
    }
    Ok(SensitivityEstimate {
        mean_f,
        grad_mean_f: sens,
        gradient: grad,
    })
}
