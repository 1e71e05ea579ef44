//! Statistical falsification of the structural conditions on `(μ, σ)`.
//!
//! The conditions are global, so they can only be refuted by sampling. All
//! checkers draw points uniformly from a ball of the given radius and report
//! the worst sample they saw.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{SdeModel, SdeModelExt};
use crate::{Matrix, Vector};

/// Weight on `|σ(x₁) - σ(x₂)|²` in the dissipativity inequality.
pub const DEFAULT_DISSIPATIVITY_FACTOR: f64 = 3.5;

const JACOBIAN_TOLERANCE: f64 = 1e-4;

/// Sampled points at which a checker found its extreme value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Outcome of a sampled assumption check.
///
/// `worst_violation` is the largest observed residual `LHS - RHS` of the
/// checked inequality (normalized per check); it is `≤ 0` exactly when
/// `holds` is true.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub holds: bool,
    pub worst_violation: f64,
    pub witness: Option<Witness>,
    /// Fitted constant: the dissipativity rate for `check_dissipativity`, the
    /// Lipschitz constant for `check_lipschitz_and_growth`, the worst
    /// relative error for `jacobian_consistency`.
    pub beta_hat: f64,
    pub samples_used: usize,
}

/// Lipschitz/growth check with the per-coefficient constants broken out.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub report: AssumptionReport,
    pub drift_constant: f64,
    pub diffusion_constant: f64,
    /// `max |μ(0, θ)|, |σ(0, θ)|` over the sampled `θ`.
    pub origin_bound: f64,
}

/// Sampling budget shared by the quick checks run at config load time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct CheckOptions {
    pub n_pairs: usize,
    pub radius: f64,
    pub factor: f64,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            n_pairs: 10_000,
            radius: 5.0,
            factor: DEFAULT_DISSIPATIVITY_FACTOR,
            seed: 0,
        }
    }
}

fn sample_in_ball<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Vector {
    loop {
        let dir = Vector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = dir.norm();
        if norm > 0.0 {
            let u: f64 = rng.random();
            let r = radius * u.powf(1.0 / dim as f64);
            return dir * (r / norm);
        }
    }
}

fn witness(x1: &Vector, x2: &Vector, theta: &Vector) -> Witness {
    Witness {
        x1: x1.as_slice().to_vec(),
        x2: x2.as_slice().to_vec(),
        theta: theta.as_slice().to_vec(),
    }
}

/// Checks `⟨μ(x₁,θ) - μ(x₂,θ), x₁ - x₂⟩ + factor |σ(x₁,θ) - σ(x₂,θ)|² ≤ -β |x₁ - x₂|²`.
///
/// `beta_hat` is the infimum over samples of `-LHS / |x₁ - x₂|²`. Pairs with
/// `x₁ = x₂` carry no information and are skipped.
pub fn check_dissipativity(
    model: &dyn SdeModel,
    n_pairs: usize,
    radius: f64,
    factor: f64,
    rng_seed: u64,
) -> AssumptionReport {
    let d = model.state_dim();
    let ell = model.param_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut beta_hat = f64::INFINITY;
    let mut worst = None;
    let mut used = 0;

    for _ in 0..n_pairs.max(1) {
        let x1 = sample_in_ball(&mut rng, d, radius);
        let x2 = sample_in_ball(&mut rng, d, radius);
        let theta = sample_in_ball(&mut rng, ell, radius);
        let dx = &x1 - &x2;
        let dx2 = dx.norm_squared();
        if dx2 == 0.0 {
            continue;
        }
        used += 1;
        let dmu = model.eval_drift(&x1, &theta) - model.eval_drift(&x2, &theta);
        let dsig = model.eval_diffusion(&x1, &theta) - model.eval_diffusion(&x2, &theta);
        let lhs = dmu.dot(&dx) + factor * dsig.norm_squared();
        let rate = -lhs / dx2;
        if rate < beta_hat || rate.is_nan() {
            beta_hat = rate;
            worst = Some(witness(&x1, &x2, &theta));
        }
    }

    let holds = used > 0 && beta_hat > 0.0;
    let worst_violation = if holds {
        -beta_hat
    } else if beta_hat.is_nan() {
        f64::INFINITY
    } else {
        // a zero rate is a violation, keep the residual strictly positive
        (-beta_hat).max(f64::MIN_POSITIVE)
    };
    AssumptionReport {
        holds,
        worst_violation,
        witness: worst,
        beta_hat,
        samples_used: used,
    }
}

/// Estimates the Lipschitz constant `C` of `(x, θ) ↦ (μ, σ)` and the bound
/// on `|μ(0, θ)|, |σ(0, θ)|` over the sampled parameters.
///
/// On a bounded sampling domain both are always finite for continuous
/// coefficients; `holds` is false only when a non-finite value is observed.
pub fn check_lipschitz_and_growth(
    model: &dyn SdeModel,
    n_pairs: usize,
    radius: f64,
    rng_seed: u64,
) -> LipschitzReport {
    let d = model.state_dim();
    let ell = model.param_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut joint = 0.0_f64;
    let mut drift_c = 0.0_f64;
    let mut diff_c = 0.0_f64;
    let mut origin = 0.0_f64;
    let mut worst = None;
    let mut used = 0;
    let mut finite = true;
    let zero = Vector::zeros(d);

    for _ in 0..n_pairs.max(1) {
        let x1 = sample_in_ball(&mut rng, d, radius);
        let x2 = sample_in_ball(&mut rng, d, radius);
        let t1 = sample_in_ball(&mut rng, ell, radius);
        let t2 = sample_in_ball(&mut rng, ell, radius);

        let origin_here = model
            .eval_drift(&zero, &t1)
            .norm()
            .max(model.eval_diffusion(&zero, &t1).norm());
        finite &= origin_here.is_finite();
        origin = origin.max(origin_here);

        let denom = (&x1 - &x2).norm() + (&t1 - &t2).norm();
        if denom == 0.0 {
            continue;
        }
        used += 1;
        let dmu = (model.eval_drift(&x1, &t1) - model.eval_drift(&x2, &t2)).norm();
        let dsig = (model.eval_diffusion(&x1, &t1) - model.eval_diffusion(&x2, &t2)).norm();
        finite &= dmu.is_finite() && dsig.is_finite();
        drift_c = drift_c.max(dmu / denom);
        diff_c = diff_c.max(dsig / denom);
        let ratio = (dmu + dsig) / denom;
        if ratio > joint {
            joint = ratio;
            worst = Some(Witness {
                x1: x1.as_slice().to_vec(),
                x2: x2.as_slice().to_vec(),
                theta: t1.iter().chain(t2.iter()).copied().collect(),
            });
        }
    }

    let holds = finite && joint.is_finite() && origin.is_finite();
    LipschitzReport {
        report: AssumptionReport {
            holds,
            // the fitted constant is the sampled supremum, so the residual
            // LHS - C·RHS is zero at the witness
            worst_violation: if holds { 0.0 } else { f64::INFINITY },
            witness: worst,
            beta_hat: joint,
            samples_used: used,
        },
        drift_constant: drift_c,
        diffusion_constant: diff_c,
        origin_bound: origin,
    }
}

fn relative_error(analytic: &Matrix, fd: &Matrix) -> f64 {
    let diff = (analytic - fd).amax();
    diff / analytic.amax().max(1.0)
}

/// Compares the analytic Jacobians against central finite differences.
///
/// `fd_step = None` uses `1e-6 (1 + |x|)` (and `1e-6 (1 + |θ|)` for parameter
/// derivatives). `beta_hat` carries the worst relative error; the check holds
/// when it is at most `1e-4`.
pub fn jacobian_consistency(
    model: &dyn SdeModel,
    n_points: usize,
    radius: f64,
    fd_step: Option<f64>,
    rng_seed: u64,
) -> AssumptionReport {
    let d = model.state_dim();
    let ell = model.param_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut worst_err = 0.0_f64;
    let mut worst = None;

    for _ in 0..n_points.max(1) {
        let x = sample_in_ball(&mut rng, d, radius);
        let theta = sample_in_ball(&mut rng, ell, radius);
        let hx = fd_step.unwrap_or(1e-6 * (1.0 + x.norm()));
        let ht = fd_step.unwrap_or(1e-6 * (1.0 + theta.norm()));

        let mu_x = model.eval_drift_jac_x(&x, &theta);
        let mu_t = model.eval_drift_jac_theta(&x, &theta);
        let sig_x = model.eval_diffusion_jac_x(&x, &theta);
        let sig_t = model.eval_diffusion_jac_theta(&x, &theta);

        let mut fd_mu_x = Matrix::zeros(d, d);
        let mut fd_mu_t = Matrix::zeros(d, ell);
        let mut err = 0.0_f64;
        for k in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += hx;
            xm[k] -= hx;
            let col = (model.eval_drift(&xp, &theta) - model.eval_drift(&xm, &theta)) / (2.0 * hx);
            fd_mu_x.set_column(k, &col);
            let fd_sig = (model.eval_diffusion(&xp, &theta) - model.eval_diffusion(&xm, &theta))
                / (2.0 * hx);
            err = err.max(relative_error(&sig_x[k], &fd_sig));
        }
        for k in 0..ell {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += ht;
            tm[k] -= ht;
            let col = (model.eval_drift(&x, &tp) - model.eval_drift(&x, &tm)) / (2.0 * ht);
            fd_mu_t.set_column(k, &col);
            let fd_sig =
                (model.eval_diffusion(&x, &tp) - model.eval_diffusion(&x, &tm)) / (2.0 * ht);
            err = err.max(relative_error(&sig_t[k], &fd_sig));
        }
        err = err
            .max(relative_error(&mu_x, &fd_mu_x))
            .max(relative_error(&mu_t, &fd_mu_t));
        if err > worst_err || err.is_nan() {
            worst_err = err;
            worst = Some(witness(&x, &x, &theta));
        }
    }

    let holds = worst_err <= JACOBIAN_TOLERANCE;
    AssumptionReport {
        holds,
        worst_violation: if worst_err.is_nan() {
            f64::INFINITY
        } else {
            worst_err - JACOBIAN_TOLERANCE
        },
        witness: worst,
        beta_hat: worst_err,
        samples_used: n_points.max(1),
    }
}
