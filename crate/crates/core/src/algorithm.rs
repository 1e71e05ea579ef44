//! The online forward-propagation loop and its ensemble driver.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::fluctuation::{fluctuation_terms, FluctuationSample};
use crate::integrator::{
    check_shapes, gradient_into, AlgorithmState, IntegratorError, NoisePair, Stepper,
    DEFAULT_DIVERGENCE_BOUND,
};
use crate::model::SdeModel;
use crate::noise::{derive_seed, StreamPair};
use crate::objective::ObjectiveSpec;
use crate::oracle::{
    gradient_fd, gradient_frozen_sensitivity, objective_value, OracleBudget, OracleError,
    OracleValues,
};
use crate::schedule::{validate_schedule, Schedule};
use crate::stats::median;
use crate::Vector;

const CHECKPOINT_TAG: u64 = 0x4350_0000_0000_0000;
const TERMINAL_TAG: u64 = 0x5445_524d_0000_0000;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("run diverged at t = {t}: {source}")]
    Diverged {
        t: f64,
        source: IntegratorError,
        /// Everything logged before the failing step.
        partial: Box<RunLog>,
    },
    #[error("oracle failed: {0}")]
    Oracle(#[from] OracleError),
}

/// `G(θ_t) = 2 (f(X̄_t) - β) (∇f(X_t) X̃_t)ᵀ`.
pub fn gradient_estimate(state: &AlgorithmState, objective: &ObjectiveSpec) -> Vector {
    let mut buf = vec![0.0; state.state_dim()];
    let mut gt = Vector::zeros(state.param_dim());
    let mut out = Vector::zeros(state.param_dim());
    gradient_into(state, objective, &mut buf, &mut gt, &mut out);
    out
}

/// Time average of `G` over `[burn_in, t_end]` along the coupled system with
/// θ held fixed (`α ≡ 0`), started at rest. Uses noise streams
/// `(2·replica, 2·replica + 1)` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn frozen_gradient_average(
    model: &dyn SdeModel,
    objective: &ObjectiveSpec,
    theta: &Vector,
    dt: f64,
    t_end: f64,
    burn_in: f64,
    seed: u64,
    replica: u64,
) -> Result<Vector, IntegratorError> {
    let (d, ell) = (model.state_dim(), model.param_dim());
    let mut state = AlgorithmState::at_rest(d, theta.clone());
    check_shapes(&state, model)?;
    let mut stepper = Stepper::new(d, ell);
    let mut streams = StreamPair::new(seed, replica);
    let mut noise = NoisePair::zeros(d);
    let n = (t_end / dt).round() as u64;
    let burn = ((burn_in / dt).round() as u64).min(n.saturating_sub(1));
    let sqrt_dt = dt.sqrt();
    let mut acc = Vector::zeros(ell);
    for k in 0..n {
        streams.main.fill_increment(sqrt_dt, &mut noise.dw);
        streams.bar.fill_increment(sqrt_dt, &mut noise.dw_bar);
        stepper.step(&mut state, model, objective, 0.0, dt, &noise)?;
        if k >= burn {
            acc += stepper.workspace().last_gradient();
        }
    }
    Ok(acc / (n - burn) as f64)
}

/// Oracle evaluation of `Ĵ(θ_T)` and `∇̂J(θ_T)` at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalOracle {
    pub enabled: bool,
    pub budget: OracleBudget,
    /// Finite-difference step of the gradient oracle.
    pub h: f64,
}

impl Default for TerminalOracle {
    fn default() -> Self {
        Self {
            enabled: true,
            budget: OracleBudget::terminal(),
            h: 1e-2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: Arc<dyn SdeModel>,
    pub objective: ObjectiveSpec,
    pub schedule: Schedule,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub initial: AlgorithmState,
    /// Trajectory record stride in steps.
    pub log_every: usize,
    /// Oracle checkpoint stride in steps; `0` disables checkpoints.
    pub checkpoint_every: usize,
    pub checkpoint_budget: OracleBudget,
    pub terminal: TerminalOracle,
    /// Record `Z¹`, `Z²` at every trajectory record (needs checkpoints).
    pub fluctuations: bool,
    /// Success threshold on the terminal oracle gradient norm.
    pub kappa: f64,
    pub divergence_bound: f64,
    /// Keep every `(dW, dW̄)` increment for replay.
    pub record_noise: bool,
}

impl RunConfig {
    /// Config with documented defaults: `dt = 0.01`, records every 0.5 time
    /// units, no checkpoints, terminal oracle on, `κ = 0.1`.
    pub fn new(
        model: Arc<dyn SdeModel>,
        objective: ObjectiveSpec,
        schedule: Schedule,
        theta0: Vector,
        t_end: f64,
    ) -> Self {
        let d = model.state_dim();
        Self {
            model,
            objective,
            schedule,
            dt: 0.01,
            t_end,
            seed: 0,
            initial: AlgorithmState::at_rest(d, theta0),
            log_every: 50,
            checkpoint_every: 0,
            checkpoint_budget: OracleBudget::checkpoint(),
            terminal: TerminalOracle::default(),
            fluctuations: false,
            kappa: 0.1,
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
            record_noise: false,
        }
    }

    pub fn n_steps(&self) -> u64 {
        (self.t_end / self.dt).round() as u64
    }

    /// Converts a time stride to a step stride (at least one step).
    pub fn steps_for(&self, time: f64) -> usize {
        ((time / self.dt).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= 100.0 * self.dt) {
            return bad(format!("t_end = {} must be at least 100·dt", self.t_end));
        }
        let report = validate_schedule(&self.schedule);
        if let Some(v) = report.violation {
            return bad(v.message().to_string());
        }
        check_shapes(&self.initial, self.model.as_ref())
            .map_err(|e| RunError::InvalidConfig(e.to_string()))?;
        if self.objective.f.grad(&self.initial.x).len() != self.model.state_dim() {
            return bad("objective gradient length differs from state dimension".into());
        }
        if self.log_every == 0 {
            return bad("log stride must be at least one step".into());
        }
        if self.fluctuations && self.checkpoint_every == 0 {
            return bad("fluctuation diagnostics need oracle checkpoints".into());
        }
        if !(self.kappa > 0.0) {
            return bad(format!("kappa must be positive, got {}", self.kappa));
        }
        Ok(())
    }
}

/// One row of the trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub theta: Vec<f64>,
    pub gradient: Vec<f64>,
    pub alpha: f64,
    pub norm_x: f64,
    pub norm_x_tilde: f64,
    pub norm_x_bar: f64,
}

impl TrajectoryRecord {
    fn from_state(state: &AlgorithmState, gradient: &Vector, alpha: f64) -> Self {
        Self {
            t: state.t,
            theta: state.theta.as_slice().to_vec(),
            gradient: gradient.as_slice().to_vec(),
            alpha,
            norm_x: state.x.norm(),
            norm_x_tilde: state.x_tilde.norm(),
            norm_x_bar: state.x_bar.norm(),
        }
    }
}

/// Trajectory row plus the checkpoint oracle output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub record: TrajectoryRecord,
    pub j_hat: f64,
    pub grad_j_hat: Vec<f64>,
    pub grad_j_hat_norm: f64,
    pub z1_norm: f64,
    pub z2_norm: f64,
    pub oracle: OracleValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub steps: u64,
    pub t_final: f64,
    pub theta_final: Vec<f64>,
    pub j_hat_final: Option<f64>,
    pub j_hat_ci: Option<f64>,
    pub grad_j_hat_final: Option<Vec<f64>>,
    pub grad_j_hat_ci: Option<Vec<f64>>,
    pub grad_j_hat_norm_final: Option<f64>,
    pub success: Option<bool>,
    pub diverged: bool,
    pub divergence_time: Option<f64>,
    /// Kept out of serialized output; the manifest records timing.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub trajectory: Vec<TrajectoryRecord>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub fluctuations: Vec<FluctuationSample>,
    /// Row-major `[step][dW_0..dW_{d-1}, dW̄_0..dW̄_{d-1}]` when recorded.
    pub noise: Option<Vec<f64>>,
    pub summary: RunSummary,
}

fn checkpoint(
    config: &RunConfig,
    state: &AlgorithmState,
    gradient: &Vector,
    alpha: f64,
    index: u64,
) -> Result<CheckpointRecord, RunError> {
    let est = gradient_frozen_sensitivity(
        config.model.as_ref(),
        &config.objective,
        &state.theta,
        &config.checkpoint_budget,
        derive_seed(config.seed, CHECKPOINT_TAG + index),
    )?;
    let oracle = est.oracle_values(&state.theta);
    let grad = oracle.grad_objective(config.objective.beta_target);
    let sample = fluctuation_terms(state, &config.objective, Some(&oracle), alpha)
        .expect("oracle values supplied");
    Ok(CheckpointRecord {
        record: TrajectoryRecord::from_state(state, gradient, alpha),
        j_hat: oracle.objective(config.objective.beta_target),
        grad_j_hat_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        grad_j_hat: grad,
        z1_norm: sample.z1_norm(),
        z2_norm: sample.z2_norm(),
        oracle,
    })
}

/// Runs the online algorithm from `config.initial` to `config.t_end`.
pub fn run_forward_prop(config: &RunConfig) -> Result<RunLog, RunError> {
    config.validate()?;
    let started = Instant::now();
    let model = config.model.as_ref();
    let d = model.state_dim();
    let ell = model.param_dim();
    let n = config.n_steps();
    let sqrt_dt = config.dt.sqrt();

    let mut state = config.initial.clone();
    let mut stepper = Stepper::new(d, ell).with_bound(config.divergence_bound);
    let mut streams = StreamPair::new(config.seed, 0);
    let mut noise = NoisePair::zeros(d);
    let mut cache: Option<OracleValues> = None;
    let log_every = config.log_every as u64;
    let cp_every = config.checkpoint_every as u64;

    let mut log = RunLog {
        trajectory: Vec::with_capacity((n / log_every + 2) as usize),
        checkpoints: Vec::new(),
        fluctuations: Vec::new(),
        noise: config
            .record_noise
            .then(|| Vec::with_capacity(2 * d * n as usize)),
        summary: RunSummary {
            seed: config.seed,
            steps: 0,
            t_final: 0.0,
            theta_final: Vec::new(),
            j_hat_final: None,
            j_hat_ci: None,
            grad_j_hat_final: None,
            grad_j_hat_ci: None,
            grad_j_hat_norm_final: None,
            success: None,
            diverged: false,
            divergence_time: None,
            wall_time_secs: 0.0,
        },
    };

    for k in 0..=n {
        let alpha = config.schedule.alpha(state.t);
        let at_checkpoint = cp_every > 0 && k % cp_every == 0;
        if k % log_every == 0 || k == n || at_checkpoint {
            let g = gradient_estimate(&state, &config.objective);
            if at_checkpoint {
                let cp = checkpoint(config, &state, &g, alpha, k / cp_every)?;
                cache = Some(cp.oracle.clone());
                log.checkpoints.push(cp);
            }
            if k % log_every == 0 || k == n {
                log.trajectory
                    .push(TrajectoryRecord::from_state(&state, &g, alpha));
                if config.fluctuations {
                    let sample =
                        fluctuation_terms(&state, &config.objective, cache.as_ref(), alpha)
                            .expect("checkpoint at step 0 fills the cache");
                    log.fluctuations.push(sample);
                }
            }
        }
        if k == n {
            break;
        }

        streams.main.fill_increment(sqrt_dt, &mut noise.dw);
        streams.bar.fill_increment(sqrt_dt, &mut noise.dw_bar);
        if let Some(buf) = log.noise.as_mut() {
            buf.extend_from_slice(noise.dw.as_slice());
            buf.extend_from_slice(noise.dw_bar.as_slice());
        }
        if let Err(e) = stepper.step(
            &mut state,
            model,
            &config.objective,
            alpha,
            config.dt,
            &noise,
        ) {
            let t = state.t;
            log.summary.steps = k;
            log.summary.t_final = t;
            log.summary.theta_final = state.theta.as_slice().to_vec();
            log.summary.diverged = true;
            log.summary.divergence_time = Some(t);
            log.summary.wall_time_secs = started.elapsed().as_secs_f64();
            return Err(RunError::Diverged {
                t,
                source: e,
                partial: Box::new(log),
            });
        }
    }

    log.summary.steps = n;
    log.summary.t_final = state.t;
    log.summary.theta_final = state.theta.as_slice().to_vec();
    if config.terminal.enabled {
        let seed = derive_seed(config.seed, TERMINAL_TAG);
        let grad = gradient_fd(
            model,
            &config.objective,
            &state.theta,
            config.terminal.h,
            &config.terminal.budget,
            seed,
        )?;
        let j = objective_value(
            model,
            &config.objective,
            &state.theta,
            &config.terminal.budget,
            seed,
        )?;
        let norm = grad.norm();
        log.summary.j_hat_final = Some(j.value);
        log.summary.j_hat_ci = Some(j.ci_half_width);
        log.summary.grad_j_hat_norm_final = Some(norm);
        log.summary.success = Some(norm < config.kappa);
        log.summary.grad_j_hat_final = Some(grad.value);
        log.summary.grad_j_hat_ci = Some(grad.ci_half_width);
    }
    log.summary.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(log)
}

/// Aggregate over the seeds of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub seeds: Vec<u64>,
    pub n_diverged: usize,
    pub kappa: f64,
    /// Median terminal oracle gradient norm over non-diverged runs.
    pub median_grad_norm: Option<f64>,
    /// Fraction of all seeds whose terminal oracle gradient norm is below κ.
    pub success_fraction: Option<f64>,
    pub terminal_thetas: Vec<Vec<f64>>,
}

#[derive(Debug)]
pub struct EnsembleResult {
    pub runs: Vec<Result<RunLog, RunError>>,
    pub summary: EnsembleSummary,
}

impl EnsembleResult {
    pub fn logs(&self) -> impl Iterator<Item = &RunLog> {
        self.runs.iter().filter_map(|r| r.as_ref().ok())
    }
}

/// Runs seeds `config.seed, config.seed + 1, …` in parallel. Divergent seeds
/// are recorded without aborting the others; results are in seed order.
pub fn run_ensemble(config: &RunConfig, n_seeds: usize) -> Result<EnsembleResult, RunError> {
    let seeds: Vec<u64> = (0..n_seeds.max(1) as u64)
        .map(|i| config.seed + i)
        .collect();
    run_seeds(config, &seeds)
}

/// Like [`run_ensemble`] with an explicit seed list.
pub fn run_seeds(config: &RunConfig, seeds: &[u64]) -> Result<EnsembleResult, RunError> {
    config.validate()?;
    let runs: Vec<Result<RunLog, RunError>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut c = config.clone();
            c.seed = seed;
            run_forward_prop(&c)
        })
        .collect();
    let summary = summarize(&runs, seeds, config.kappa);
    Ok(EnsembleResult { runs, summary })
}

pub fn summarize(runs: &[Result<RunLog, RunError>], seeds: &[u64], kappa: f64) -> EnsembleSummary {
    let logs: Vec<&RunLog> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
    let norms: Vec<f64> = logs
        .iter()
        .filter_map(|l| l.summary.grad_j_hat_norm_final)
        .collect();
    let (median_grad_norm, success_fraction) = if norms.len() == logs.len() && !norms.is_empty() {
        let ok = norms.iter().filter(|n| **n < kappa).count();
        (Some(median(&norms)), Some(ok as f64 / seeds.len() as f64))
    } else {
        (None, None)
    };
    EnsembleSummary {
        seeds: seeds.to_vec(),
        n_diverged: runs.len() - logs.len(),
        kappa,
        median_grad_norm,
        success_fraction,
        terminal_thetas: logs.iter().map(|l| l.summary.theta_final.clone()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_ou_model;
    use crate::objective::TestFunction;
    use crate::Matrix;

    fn ou_config(t_end: f64) -> RunConfig {
        let model = Arc::new(make_ou_model(1.0, 0.5, 1).unwrap());
        let obj = ObjectiveSpec::new(TestFunction::coordinate(1, 0), 1.0);
        let mut c = RunConfig::new(model, obj, Schedule::new(1.0, 1.0), Vector::zeros(1), t_end);
        c.terminal.enabled = false;
        c
    }

    #[test]
    fn gradient_estimate_examples() {
        let obj = ObjectiveSpec::new(TestFunction::coordinate(1, 0), 1.0);
        let s = AlgorithmState::new(
            Vector::zeros(1),
            Vector::zeros(1),
            Matrix::from_element(1, 1, 0.5),
            Vector::from_element(1, 2.0),
        );
        assert_eq!(gradient_estimate(&s, &obj)[0], 1.0);
        let s = AlgorithmState::new(
            Vector::zeros(1),
            Vector::zeros(1),
            Matrix::from_element(1, 1, 3.0),
            Vector::from_element(1, 1.0),
        );
        assert_eq!(gradient_estimate(&s, &obj)[0], 0.0);
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut c = ou_config(10.0);
        c.schedule = Schedule::new(1.0, 0.4);
        assert!(matches!(c.validate(), Err(RunError::InvalidConfig(m)) if m.contains("∫α²")));
        let c = ou_config(0.5);
        assert!(c.validate().is_err());
        let mut c = ou_config(10.0);
        c.fluctuations = true;
        assert!(c.validate().is_err());
    }

    #[test]
    fn log_times_strictly_increase_and_end_at_t_end() {
        let mut c = ou_config(5.0);
        c.log_every = 7;
        let log = run_forward_prop(&c).unwrap();
        assert!(log.trajectory.windows(2).all(|w| w[0].t < w[1].t));
        let last = log.trajectory.last().unwrap();
        assert!((last.t - 5.0).abs() < 1e-9);
        assert_eq!(log.summary.steps, 500);
    }

    #[test]
    fn same_seed_same_log() {
        let c = ou_config(5.0);
        let a = run_forward_prop(&c).unwrap();
        let b = run_forward_prop(&c).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
    }

    #[test]
    fn divergence_keeps_partial_log() {
        let mut c = ou_config(10.0);
        c.initial.theta = Vector::from_element(1, 50.0);
        c.divergence_bound = 10.0;
        match run_forward_prop(&c) {
            Err(RunError::Diverged { partial, t, .. }) => {
                assert!(partial.summary.diverged);
                assert!(!partial.trajectory.is_empty());
                assert!(t < 10.0);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
