//! Explicit Euler-Maruyama stepping of the coupled system and of frozen-θ
//! paths.
//!
//! All coefficients are evaluated at the pre-step state. `X` and `X̃` consume
//! the same increment `dW`; `X̄` consumes the independent increment `dW̄`.

use thiserror::Error;

use crate::model::SdeModel;
use crate::noise::NoiseStream;
use crate::objective::ObjectiveSpec;
use crate::{Matrix, Vector};

/// Default divergence threshold on `|θ|`, `|X|`, `|X̃|`, `|X̄|`.
pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e6;

/// Full coupled state `(t, θ, X, X̃, X̄)`. `x_tilde` is `d × ℓ`, column `k`
/// being the sensitivity of `X` to `θ_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmState {
    pub t: f64,
    pub theta: Vector,
    pub x: Vector,
    pub x_tilde: Matrix,
    pub x_bar: Vector,
}

impl AlgorithmState {
    pub fn new(theta: Vector, x: Vector, x_tilde: Matrix, x_bar: Vector) -> Self {
        Self {
            t: 0.0,
            theta,
            x,
            x_tilde,
            x_bar,
        }
    }

    /// `X₀ = X̄₀ = 0`, `X̃₀ = 0` at the given parameter.
    pub fn at_rest(d: usize, theta: Vector) -> Self {
        let ell = theta.len();
        Self::new(
            theta,
            Vector::zeros(d),
            Matrix::zeros(d, ell),
            Vector::zeros(d),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.x.len()
    }

    pub fn param_dim(&self) -> usize {
        self.theta.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.theta.iter().all(|v| v.is_finite())
            && self.x.iter().all(|v| v.is_finite())
            && self.x_tilde.iter().all(|v| v.is_finite())
            && self.x_bar.iter().all(|v| v.is_finite())
    }
}

/// The increments `(dW, dW̄)` of one step, each `N(0, dt·I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePair {
    pub dw: Vector,
    pub dw_bar: Vector,
}

impl NoisePair {
    pub fn zeros(d: usize) -> Self {
        Self {
            dw: Vector::zeros(d),
            dw_bar: Vector::zeros(d),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegratorError {
    #[error("divergence at t = {t}: {reason}")]
    Diverged {
        t: f64,
        reason: String,
        /// State before the failing step.
        state: Box<AlgorithmState>,
    },
    #[error("invalid step size dt = {0}")]
    InvalidStep(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Preallocated buffers for coefficient evaluation.
#[derive(Debug, Clone)]
pub struct Workspace {
    mu: Vector,
    sigma: Matrix,
    mu_x: Matrix,
    mu_theta: Matrix,
    sigma_x: Vec<Matrix>,
    sigma_theta: Vec<Matrix>,
    mu_bar: Vector,
    sigma_bar: Matrix,
    diff_col: Matrix,
    grad_buf: Vec<f64>,
    grad_tan: Vector,
    gradient: Vector,
    dx: Vector,
    dx_tilde: Matrix,
    dx_bar: Vector,
}

impl Workspace {
    pub fn new(d: usize, ell: usize) -> Self {
        Self {
            mu: Vector::zeros(d),
            sigma: Matrix::zeros(d, d),
            mu_x: Matrix::zeros(d, d),
            mu_theta: Matrix::zeros(d, ell),
            sigma_x: vec![Matrix::zeros(d, d); d],
            sigma_theta: vec![Matrix::zeros(d, d); ell],
            mu_bar: Vector::zeros(d),
            sigma_bar: Matrix::zeros(d, d),
            diff_col: Matrix::zeros(d, d),
            grad_buf: vec![0.0; d],
            grad_tan: Vector::zeros(ell),
            gradient: Vector::zeros(ell),
            dx: Vector::zeros(d),
            dx_tilde: Matrix::zeros(d, ell),
            dx_bar: Vector::zeros(d),
        }
    }

    /// Increment of `X` into `dx`.
    fn state_increment(
        &mut self,
        model: &dyn SdeModel,
        x: &Vector,
        theta: &Vector,
        dt: f64,
        dw: &Vector,
    ) {
        model.drift(x, theta, &mut self.mu);
        model.diffusion(x, theta, &mut self.sigma);
        self.dx.copy_from(&self.mu);
        self.dx *= dt;
        self.dx.gemv(1.0, &self.sigma, dw, 1.0);
    }

    /// Increment of `X̃` into `dx_tilde`.
    fn tangent_increment(
        &mut self,
        model: &dyn SdeModel,
        x: &Vector,
        theta: &Vector,
        x_tilde: &Matrix,
        dt: f64,
        dw: &Vector,
    ) {
        model.drift_jac_x(x, theta, &mut self.mu_x);
        model.drift_jac_theta(x, theta, &mut self.mu_theta);
        model.diffusion_jac_x(x, theta, &mut self.sigma_x);
        model.diffusion_jac_theta(x, theta, &mut self.sigma_theta);

        self.dx_tilde.copy_from(&self.mu_theta);
        self.dx_tilde.gemm(dt, &self.mu_x, x_tilde, dt);
        for j in 0..x_tilde.ncols() {
            self.diff_col.copy_from(&self.sigma_theta[j]);
            for (k, slice) in self.sigma_x.iter().enumerate() {
                let w = x_tilde[(k, j)];
                if w != 0.0 {
                    self.diff_col.zip_apply(slice, |a, b| *a += w * b);
                }
            }
            self.dx_tilde
                .column_mut(j)
                .gemv(1.0, &self.diff_col, dw, 1.0);
        }
    }

    /// Increment of `X̄` into `dx_bar`.
    fn bar_increment(
        &mut self,
        model: &dyn SdeModel,
        x_bar: &Vector,
        theta: &Vector,
        dt: f64,
        dw_bar: &Vector,
    ) {
        model.drift(x_bar, theta, &mut self.mu_bar);
        model.diffusion(x_bar, theta, &mut self.sigma_bar);
        self.dx_bar.copy_from(&self.mu_bar);
        self.dx_bar *= dt;
        self.dx_bar.gemv(1.0, &self.sigma_bar, dw_bar, 1.0);
    }

    /// Last gradient estimate computed by [`Stepper::step`].
    pub fn last_gradient(&self) -> &Vector {
        &self.gradient
    }
}

/// `G = 2 (f(X̄) - β) (∇f(X) X̃)ᵀ` written into `out`.
pub(crate) fn gradient_into(
    state: &AlgorithmState,
    objective: &ObjectiveSpec,
    grad_buf: &mut [f64],
    grad_tan: &mut Vector,
    out: &mut Vector,
) {
    let gap = objective.f.value(&state.x_bar) - objective.beta_target;
    objective
        .f
        .grad_times_tangent(&state.x, &state.x_tilde, grad_buf, grad_tan);
    out.copy_from(grad_tan);
    *out *= 2.0 * gap;
}

/// True when `a + b` has a non-finite entry or one larger than `bound`.
fn sum_exceeds(a: &[f64], b: &[f64], bound: f64) -> bool {
    a.iter().zip(b).any(|(x, dx)| {
        let v = x + dx;
        !v.is_finite() || v.abs() > bound
    })
}

/// In-place stepper for the coupled system.
#[derive(Debug, Clone)]
pub struct Stepper {
    ws: Workspace,
    bound: f64,
}

impl Stepper {
    pub fn new(d: usize, ell: usize) -> Self {
        Self {
            ws: Workspace::new(d, ell),
            bound: DEFAULT_DIVERGENCE_BOUND,
        }
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = bound;
        self
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    /// Advances `state` by one explicit step. On error `state` is left at its
    /// pre-step value.
    pub fn step(
        &mut self,
        state: &mut AlgorithmState,
        model: &dyn SdeModel,
        objective: &ObjectiveSpec,
        alpha: f64,
        dt: f64,
        noise: &NoisePair,
    ) -> Result<(), IntegratorError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(IntegratorError::InvalidStep(dt));
        }
        let ws = &mut self.ws;
        gradient_into(
            state,
            objective,
            &mut ws.grad_buf,
            &mut ws.grad_tan,
            &mut ws.gradient,
        );
        ws.tangent_increment(model, &state.x, &state.theta, &state.x_tilde, dt, &noise.dw);
        ws.state_increment(model, &state.x, &state.theta, dt, &noise.dw);
        ws.bar_increment(model, &state.x_bar, &state.theta, dt, &noise.dw_bar);

        let scale = -alpha * dt;
        let bound = self.bound;
        let bad_theta = state.theta.iter().zip(ws.gradient.iter()).any(|(t, g)| {
            let v = t + scale * g;
            !v.is_finite() || v.abs() > bound
        });
        let bad = bad_theta
            || sum_exceeds(state.x.as_slice(), ws.dx.as_slice(), bound)
            || sum_exceeds(state.x_tilde.as_slice(), ws.dx_tilde.as_slice(), bound)
            || sum_exceeds(state.x_bar.as_slice(), ws.dx_bar.as_slice(), bound);
        if bad {
            return Err(IntegratorError::Diverged {
                t: state.t,
                reason: format!("state left the ball of radius {bound} or became non-finite"),
                state: Box::new(state.clone()),
            });
        }

        state.theta.axpy(scale, &ws.gradient, 1.0);
        state.x += &ws.dx;
        state.x_tilde += &ws.dx_tilde;
        state.x_bar += &ws.dx_bar;
        state.t += dt;
        Ok(())
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }
}

/// One explicit Euler-Maruyama step of the coupled system.
///
/// `θ⁺ = θ - α dt G` with `G` from the pre-step `(X, X̃, X̄)`; every other line
/// also reads only pre-step values.
pub fn em_step(
    state: &AlgorithmState,
    model: &dyn SdeModel,
    objective: &ObjectiveSpec,
    alpha: f64,
    dt: f64,
    noise: &NoisePair,
) -> Result<AlgorithmState, IntegratorError> {
    check_shapes(state, model)?;
    let mut next = state.clone();
    Stepper::new(state.state_dim(), state.param_dim())
        .step(&mut next, model, objective, alpha, dt, noise)?;
    Ok(next)
}

pub(crate) fn check_shapes(
    state: &AlgorithmState,
    model: &dyn SdeModel,
) -> Result<(), IntegratorError> {
    let (d, ell) = (model.state_dim(), model.param_dim());
    if state.x.len() != d
        || state.x_bar.len() != d
        || state.theta.len() != ell
        || state.x_tilde.shape() != (d, ell)
    {
        return Err(IntegratorError::Shape(format!(
            "model expects d = {d}, ℓ = {ell}; state has x: {}, x_bar: {}, theta: {}, x_tilde: {:?}",
            state.x.len(),
            state.x_bar.len(),
            state.theta.len(),
            state.x_tilde.shape()
        )));
    }
    Ok(())
}

/// A frozen-θ path `X^{θ,x}` with optional tangent `X̃^{θ,x,x̃}` driven by a
/// single noise stream.
///
/// The simulator is a plain value: cloning it mid-run and continuing both
/// copies yields identical paths.
#[derive(Debug, Clone)]
pub struct FrozenSimulator<'m> {
    model: &'m dyn SdeModel,
    theta: Vector,
    x: Vector,
    x_tilde: Option<Matrix>,
    dt: f64,
    sqrt_dt: f64,
    steps: u64,
    stream: NoiseStream,
    dw: Vector,
    ws: Workspace,
    bound: f64,
}

impl<'m> FrozenSimulator<'m> {
    pub fn new(
        model: &'m dyn SdeModel,
        theta: Vector,
        x0: Vector,
        x_tilde0: Option<Matrix>,
        dt: f64,
        stream: NoiseStream,
    ) -> Result<Self, IntegratorError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(IntegratorError::InvalidStep(dt));
        }
        let (d, ell) = (model.state_dim(), model.param_dim());
        if x0.len() != d || theta.len() != ell {
            return Err(IntegratorError::Shape(format!(
                "model expects d = {d}, ℓ = {ell}; got x0: {}, theta: {}",
                x0.len(),
                theta.len()
            )));
        }
        if let Some(xt) = &x_tilde0 {
            if xt.shape() != (d, ell) {
                return Err(IntegratorError::Shape(format!(
                    "x_tilde0 must be {d} × {ell}, got {:?}",
                    xt.shape()
                )));
            }
        }
        Ok(Self {
            model,
            theta,
            x: x0,
            x_tilde: x_tilde0,
            dt,
            sqrt_dt: dt.sqrt(),
            steps: 0,
            stream,
            dw: Vector::zeros(d),
            ws: Workspace::new(d, ell),
            bound: DEFAULT_DIVERGENCE_BOUND,
        })
    }

    pub fn t(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    pub fn x(&self) -> &Vector {
        &self.x
    }

    pub fn x_tilde(&self) -> Option<&Matrix> {
        self.x_tilde.as_ref()
    }

    pub fn theta(&self) -> &Vector {
        &self.theta
    }

    /// Increment consumed by the most recent step.
    pub fn last_increment(&self) -> &Vector {
        &self.dw
    }

    pub fn step(&mut self) -> Result<(), IntegratorError> {
        self.stream.fill_increment(self.sqrt_dt, &mut self.dw);
        self.step_with(None)
    }

    /// Steps with an externally supplied increment instead of the stream.
    pub fn step_with_increment(&mut self, dw: &Vector) -> Result<(), IntegratorError> {
        self.step_with(Some(dw))
    }

    fn step_with(&mut self, dw: Option<&Vector>) -> Result<(), IntegratorError> {
        if let Some(dw) = dw {
            self.dw.copy_from(dw);
        }
        let ws = &mut self.ws;
        if let Some(xt) = &self.x_tilde {
            ws.tangent_increment(self.model, &self.x, &self.theta, xt, self.dt, &self.dw);
        }
        ws.state_increment(self.model, &self.x, &self.theta, self.dt, &self.dw);
        let diverged = sum_exceeds(self.x.as_slice(), ws.dx.as_slice(), self.bound)
            || self
                .x_tilde
                .as_ref()
                .is_some_and(|xt| sum_exceeds(xt.as_slice(), ws.dx_tilde.as_slice(), self.bound));
        if diverged {
            let d = self.x.len();
            let ell = self.theta.len();
            return Err(IntegratorError::Diverged {
                t: self.t(),
                reason: "frozen path left the divergence ball".into(),
                state: Box::new(AlgorithmState {
                    t: self.t(),
                    theta: self.theta.clone(),
                    x: self.x.clone(),
                    x_tilde: self
                        .x_tilde
                        .clone()
                        .unwrap_or_else(|| Matrix::zeros(d, ell)),
                    x_bar: Vector::zeros(d),
                }),
            });
        }
        self.x += &ws.dx;
        if let Some(xt) = &mut self.x_tilde {
            *xt += &ws.dx_tilde;
        }
        self.steps += 1;
        Ok(())
    }
}

/// Sampled frozen-θ trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenTrajectory {
    pub times: Vec<f64>,
    pub x: Vec<Vector>,
    pub x_tilde: Vec<Matrix>,
}

/// Simulates `(X^{θ,x}, X̃^{θ,x,x̃})` on `[0, T]`, recording every `stride`
/// steps (and always the initial and terminal points).
#[allow(clippy::too_many_arguments)]
pub fn simulate_frozen(
    model: &dyn SdeModel,
    theta: &Vector,
    x0: &Vector,
    x_tilde0: &Matrix,
    dt: f64,
    t_end: f64,
    rng_seed: u64,
    stride: usize,
) -> Result<FrozenTrajectory, IntegratorError> {
    if !(t_end >= dt) {
        return Err(IntegratorError::InvalidStep(dt));
    }
    let n = (t_end / dt).round() as u64;
    let stride = stride.max(1) as u64;
    let mut sim = FrozenSimulator::new(
        model,
        theta.clone(),
        x0.clone(),
        Some(x_tilde0.clone()),
        dt,
        NoiseStream::new(rng_seed, 0),
    )?;
    let mut traj = FrozenTrajectory {
        times: vec![0.0],
        x: vec![x0.clone()],
        x_tilde: vec![x_tilde0.clone()],
    };
    for k in 1..=n {
        sim.step()?;
        if k % stride == 0 || k == n {
            traj.times.push(sim.t());
            traj.x.push(sim.x().clone());
            traj.x_tilde
                .push(sim.x_tilde().expect("tangent enabled").clone());
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_ou_model, OuModel};
    use crate::objective::TestFunction;

    fn scalar(v: f64) -> Vector {
        Vector::from_element(1, v)
    }

    fn ou_state(theta: f64, x: f64, xt: f64, xb: f64) -> AlgorithmState {
        AlgorithmState::new(
            scalar(theta),
            scalar(x),
            Matrix::from_element(1, 1, xt),
            scalar(xb),
        )
    }

    #[test]
    fn identity_dynamics_only_advance_time() {
        // a = 0, σ = 0: zero drift and zero diffusion
        let m = OuModel::new_unchecked(0.0, 0.0, 1);
        let obj = ObjectiveSpec::new(TestFunction::coordinate(1, 0), 1.0);
        let s = ou_state(0.3, 1.2, -0.7, 2.0);
        let noise = NoisePair {
            dw: scalar(0.4),
            dw_bar: scalar(-0.2),
        };
        let next = em_step(&s, &m, &obj, 0.0, 0.05, &noise).unwrap();
        assert_eq!(next.theta, s.theta);
        assert_eq!(next.x, s.x);
        assert_eq!(next.x_tilde, s.x_tilde);
        assert_eq!(next.x_bar, s.x_bar);
        assert_eq!(next.t, 0.05);
    }

    #[test]
    fn one_step_ou_arithmetic() {
        let m = make_ou_model(1.0, 0.5, 1).unwrap();
        let obj = ObjectiveSpec::new(TestFunction::coordinate(1, 0), 1.0);
        let s = ou_state(0.0, 1.0, 0.0, 0.0);
        let next = em_step(&s, &m, &obj, 0.0, 0.01, &NoisePair::zeros(1)).unwrap();
        assert!((next.x[0] - 0.99).abs() < 1e-15);
        assert!((next.x_tilde[(0, 0)] - 0.01).abs() < 1e-15);
        assert_eq!(next.x_bar[0], 0.0);
    }

    #[test]
    fn theta_update_uses_pre_step_values() {
        let m = make_ou_model(1.0, 0.5, 1).unwrap();
        let obj = ObjectiveSpec::new(TestFunction::coordinate(1, 0), 1.0);
        let s = ou_state(0.0, 0.0, 0.5, 2.0);
        // G = 2 (2 - 1) (1 · 0.5) = 1
        let next = em_step(&s, &m, &obj, 0.5, 0.1, &NoisePair::zeros(1)).unwrap();
        assert!((next.theta[0] - (-0.05)).abs() < 1e-15);
    }

    #[test]
    fn divergence_reports_pre_step_state() {
        let m = make_ou_model(1.0, 0.5, 1).unwrap();
        let obj = ObjectiveSpec::new(TestFunction::coordinate(1, 0), 1.0);
        let s = ou_state(0.0, 1.0, 0.0, 0.0);
        let noise = NoisePair {
            dw: scalar(f64::INFINITY),
            dw_bar: scalar(0.0),
        };
        match em_step(&s, &m, &obj, 0.0, 0.01, &noise) {
            Err(IntegratorError::Diverged { t, state, .. }) => {
                assert_eq!(t, 0.0);
                assert_eq!(*state, s);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_dt_and_shapes() {
        let m = make_ou_model(1.0, 0.5, 1).unwrap();
        let obj = ObjectiveSpec::new(TestFunction::coordinate(1, 0), 1.0);
        let s = ou_state(0.0, 1.0, 0.0, 0.0);
        assert!(matches!(
            em_step(&s, &m, &obj, 0.0, 0.0, &NoisePair::zeros(1)),
            Err(IntegratorError::InvalidStep(_))
        ));
        let m2 = make_ou_model(1.0, 0.5, 2).unwrap();
        assert!(matches!(
            em_step(&s, &m2, &obj, 0.0, 0.01, &NoisePair::zeros(1)),
            Err(IntegratorError::Shape(_))
        ));
    }

    #[test]
    fn zero_diffusion_ou_is_exponential() {
        let m = OuModel::new_unchecked(1.0, 0.0, 1);
        let traj = simulate_frozen(
            &m,
            &scalar(0.0),
            &scalar(2.0),
            &Matrix::zeros(1, 1),
            0.001,
            2.0,
            0,
            100,
        )
        .unwrap();
        for (t, x) in traj.times.iter().zip(&traj.x) {
            let exact = 2.0 * (-t).exp();
            assert!((x[0] - exact).abs() < 2e-3, "t={t}");
        }
    }

    #[test]
    fn resumed_simulation_matches_single_run() {
        let m = make_ou_model(1.0, 0.5, 1).unwrap();
        let mut a = FrozenSimulator::new(
            &m,
            scalar(0.5),
            scalar(1.0),
            Some(Matrix::zeros(1, 1)),
            0.01,
            NoiseStream::new(9, 0),
        )
        .unwrap();
        for _ in 0..300 {
            a.step().unwrap();
        }
        let mut b = a.clone();
        for _ in 0..200 {
            a.step().unwrap();
            b.step().unwrap();
        }
        let mut c = FrozenSimulator::new(
            &m,
            scalar(0.5),
            scalar(1.0),
            Some(Matrix::zeros(1, 1)),
            0.01,
            NoiseStream::new(9, 0),
        )
        .unwrap();
        for _ in 0..500 {
            c.step().unwrap();
        }
        assert_eq!(a.x()[0].to_bits(), c.x()[0].to_bits());
        assert_eq!(b.x()[0].to_bits(), c.x()[0].to_bits());
        assert_eq!(a.t(), c.t());
    }
}
