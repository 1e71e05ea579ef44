//! Parameterized SDE models `dX = μ(X, θ) dt + σ(X, θ) dW`.
//!
//! Jacobians follow the row convention: the Jacobian of `g: ℝⁿ → ℝᵐ` is an
//! `m × n` matrix. Derivatives of the diffusion matrix are stored as a list
//! of `d × d` slices, slice `k` holding `∂σ/∂x_k` (resp. `∂σ/∂θ_k`).

mod checks;
mod ou;
mod tanh;

use std::fmt;

use thiserror::Error;

use crate::{Matrix, Vector};

pub use checks::{
    check_dissipativity, check_lipschitz_and_growth, jacobian_consistency, AssumptionReport,
    CheckOptions, LipschitzReport, Witness, DEFAULT_DISSIPATIVITY_FACTOR,
};
pub use ou::{make_ou_model, OuModel};
pub use tanh::{make_tanh_model, TanhModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

/// A parameterized drift/diffusion pair with analytic first derivatives.
///
/// Implementations fill caller-provided buffers so that the integrator can
/// step without allocating. Every method must be a pure function of its
/// inputs.
pub trait SdeModel: Send + Sync + fmt::Debug {
    /// Dimension `d` of the state.
    fn state_dim(&self) -> usize;

    /// Dimension `ℓ` of the parameter.
    fn param_dim(&self) -> usize;

    fn drift(&self, x: &Vector, theta: &Vector, out: &mut Vector);

    fn diffusion(&self, x: &Vector, theta: &Vector, out: &mut Matrix);

    /// `μ_x`, shape `d × d`.
    fn drift_jac_x(&self, x: &Vector, theta: &Vector, out: &mut Matrix);

    /// `μ_θ`, shape `d × ℓ`.
    fn drift_jac_theta(&self, x: &Vector, theta: &Vector, out: &mut Matrix);

    /// `σ_x` as `d` slices of shape `d × d`.
    fn diffusion_jac_x(&self, x: &Vector, theta: &Vector, out: &mut [Matrix]);

    /// `σ_θ` as `ℓ` slices of shape `d × d`.
    fn diffusion_jac_theta(&self, x: &Vector, theta: &Vector, out: &mut [Matrix]);

    /// Short identifier used in logs and reports.
    fn name(&self) -> &str;
}

/// Allocating convenience wrappers around [`SdeModel`].
pub trait SdeModelExt: SdeModel {
    fn eval_drift(&self, x: &Vector, theta: &Vector) -> Vector {
        let mut out = Vector::zeros(self.state_dim());
        self.drift(x, theta, &mut out);
        out
    }

    fn eval_diffusion(&self, x: &Vector, theta: &Vector) -> Matrix {
        let d = self.state_dim();
        let mut out = Matrix::zeros(d, d);
        self.diffusion(x, theta, &mut out);
        out
    }

    fn eval_drift_jac_x(&self, x: &Vector, theta: &Vector) -> Matrix {
        let d = self.state_dim();
        let mut out = Matrix::zeros(d, d);
        self.drift_jac_x(x, theta, &mut out);
        out
    }

    fn eval_drift_jac_theta(&self, x: &Vector, theta: &Vector) -> Matrix {
        let mut out = Matrix::zeros(self.state_dim(), self.param_dim());
        self.drift_jac_theta(x, theta, &mut out);
        out
    }

    fn eval_diffusion_jac_x(&self, x: &Vector, theta: &Vector) -> Vec<Matrix> {
        let d = self.state_dim();
        let mut out = vec![Matrix::zeros(d, d); d];
        self.diffusion_jac_x(x, theta, &mut out);
        out
    }

    fn eval_diffusion_jac_theta(&self, x: &Vector, theta: &Vector) -> Vec<Matrix> {
        let d = self.state_dim();
        let mut out = vec![Matrix::zeros(d, d); self.param_dim()];
        self.diffusion_jac_theta(x, theta, &mut out);
        out
    }
}

impl<M: SdeModel + ?Sized> SdeModelExt for M {}

pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            reason: format!("must be positive and finite, got {value}"),
        })
    }
}

pub(crate) fn require_dim(name: &'static str, value: usize) -> Result<(), ModelError> {
    if value == 0 {
        Err(ModelError::InvalidParameter {
            name,
            reason: "dimension must be at least 1".into(),
        })
    } else {
        Ok(())
    }
}
