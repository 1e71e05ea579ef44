//! Online forward-propagation optimization over the stationary distribution
//! of dissipative stochastic differential equations.
//!
//! The crate simulates the coupled system
//!
//! ```text
//! dθ_t  = -2 α_t (f(X̄_t) - β) (∇f(X_t) X̃_t)ᵀ dt
//! dX̃_t = (μ_x X̃_t + μ_θ) dt + (σ_x X̃_t + σ_θ) dW_t
//! dX_t  = μ(X_t, θ_t) dt + σ(X_t, θ_t) dW_t
//! dX̄_t = μ(X̄_t, θ_t) dt + σ(X̄_t, θ_t) dW̄_t
//! ```
//!
//! and ships the machinery needed to check it numerically: brute-force
//! frozen-parameter oracles for `J(θ) = (E_π f - β)²` and its gradient,
//! statistical validators for the dissipativity and Lipschitz conditions on
//! the model, and diagnostics for the fluctuation terms, stopping-time
//! cycles, moment growth, decay rates and Poisson-equation solutions that
//! appear in the convergence argument.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithm;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod integrator;
pub mod model;
pub mod noise;
pub mod objective;
pub mod oracle;
pub mod report;
pub mod schedule;
pub mod stats;

pub use algorithm::{
    frozen_gradient_average, gradient_estimate, run_ensemble, run_forward_prop, EnsembleResult,
    RunConfig, RunError, RunLog,
};
pub use integrator::{em_step, simulate_frozen, AlgorithmState, FrozenSimulator, NoisePair};
pub use model::{make_ou_model, make_tanh_model, SdeModel};
pub use objective::{ObjectiveSpec, TestFunction};
pub use oracle::{ErgodicEstimate, OracleBudget};
pub use schedule::Schedule;

/// Column vector of dynamic length.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix of dynamic shape.
pub type Matrix = nalgebra::DMatrix<f64>;
