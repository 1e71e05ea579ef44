//! Fluctuation terms `Z¹`, `Z²` and their `α`-weighted window integrals.

use serde::{Deserialize, Serialize};

use super::DiagnosticError;
use crate::integrator::AlgorithmState;
use crate::objective::ObjectiveSpec;
use crate::oracle::OracleValues;

/// Minimum number of samples inside a window for quadrature.
pub const MIN_WINDOW_SAMPLES: usize = 10;

/// Split of the realized update direction `G` into the oracle descent
/// direction and the two fluctuation terms:
/// `G = ∇̂J + 2 Z¹ + 2 Z²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationSample {
    pub t: f64,
    pub alpha: f64,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    /// `∇̂J = 2 (Ê - β) ∇̂Ê`.
    pub descent: Vec<f64>,
    pub gradient: Vec<f64>,
    /// Oracle `Ê_π f` the sample was computed with.
    pub mean_f: f64,
    /// Oracle `∇̂_θ Ê_π f` the sample was computed with.
    pub grad_mean_f: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl FluctuationSample {
    pub fn z1_norm(&self) -> f64 {
        norm(&self.z1)
    }

    pub fn z2_norm(&self) -> f64 {
        norm(&self.z2)
    }

    /// Max-norm of `G - (∇̂J + 2 Z¹ + 2 Z²)`.
    pub fn reconstruction_residual(&self) -> f64 {
        (0..self.gradient.len())
            .map(|k| {
                (self.gradient[k] - (self.descent[k] + 2.0 * self.z1[k] + 2.0 * self.z2[k])).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// `Z¹ = (Ê - β)(∇f(X) X̃ - ∇̂Ê)ᵀ`, `Z² = (f(X̄) - Ê)(∇f(X) X̃)ᵀ` using the
/// cached oracle values. A missing cache is an error; nothing is recomputed.
pub fn fluctuation_terms(
    state: &AlgorithmState,
    objective: &ObjectiveSpec,
    cache: Option<&OracleValues>,
    alpha: f64,
) -> Result<FluctuationSample, DiagnosticError> {
    let oracle = cache.ok_or(DiagnosticError::CacheMiss)?;
    let ell = state.param_dim();
    if oracle.grad_mean_f.len() != ell {
        return Err(DiagnosticError::InvalidInput(format!(
            "cached gradient has length {}, parameter has {ell}",
            oracle.grad_mean_f.len()
        )));
    }
    let beta = objective.beta_target;
    let e = oracle.mean_f;
    let mut buf = vec![0.0; state.state_dim()];
    let mut tan = crate::Vector::zeros(ell);
    objective
        .f
        .grad_times_tangent(&state.x, &state.x_tilde, &mut buf, &mut tan);
    let f_bar = objective.f.value(&state.x_bar);

    let z1 = (0..ell)
        .map(|k| (e - beta) * (tan[k] - oracle.grad_mean_f[k]))
        .collect();
    let z2 = (0..ell).map(|k| (f_bar - e) * tan[k]).collect();
    let descent = oracle.grad_objective(beta);
    let gradient = (0..ell).map(|k| 2.0 * (f_bar - beta) * tan[k]).collect();
    Ok(FluctuationSample {
        t: state.t,
        alpha,
        z1,
        z2,
        descent,
        gradient,
        mean_f: e,
        grad_mean_f: oracle.grad_mean_f.clone(),
    })
}

/// `Δ^i = ∫ α_s Z^i_s ds` over one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowIntegral {
    pub t_start: f64,
    pub t_end: f64,
    pub delta1: Vec<f64>,
    pub delta2: Vec<f64>,
    pub samples: usize,
}

impl WindowIntegral {
    /// `max(|Δ¹|, |Δ²|)`.
    pub fn max_norm(&self) -> f64 {
        norm(&self.delta1).max(norm(&self.delta2))
    }
}

/// Trapezoidal `∫ α Z ds` over each window, using the samples whose times
/// fall inside it.
pub fn windowed_fluctuation_integral(
    samples: &[FluctuationSample],
    windows: &[(f64, f64)],
) -> Result<Vec<WindowIntegral>, DiagnosticError> {
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return Err(DiagnosticError::InvalidInput(
            "no fluctuation samples".into(),
        ));
    };
    let slack = 1e-9 * last.t.abs().max(1.0);
    let ell = first.z1.len();
    windows
        .iter()
        .map(|&(a, b)| {
            if !(a < b) || a < first.t - slack || b > last.t + slack {
                return Err(DiagnosticError::InvalidInput(format!(
                    "window [{a}, {b}] outside the logged range [{}, {}]",
                    first.t, last.t
                )));
            }
            let inside: Vec<&FluctuationSample> = samples
                .iter()
                .filter(|s| s.t >= a - slack && s.t <= b + slack)
                .collect();
            if inside.len() < MIN_WINDOW_SAMPLES {
                return Err(DiagnosticError::SparseWindow {
                    t_start: a,
                    t_end: b,
                    samples: inside.len(),
                    required: MIN_WINDOW_SAMPLES,
                });
            }
            let mut delta1 = vec![0.0; ell];
            let mut delta2 = vec![0.0; ell];
            for w in inside.windows(2) {
                let h = 0.5 * (w[1].t - w[0].t);
                for k in 0..ell {
                    delta1[k] += h * (w[0].alpha * w[0].z1[k] + w[1].alpha * w[1].z1[k]);
                    delta2[k] += h * (w[0].alpha * w[0].z2[k] + w[1].alpha * w[1].z2[k]);
                }
            }
            Ok(WindowIntegral {
                t_start: a,
                t_end: b,
                delta1,
                delta2,
                samples: inside.len(),
            })
        })
        .collect()
}

/// Windows `[2^k, 2^{k+1}]` contained in `[t_min, t_max]`.
pub fn dyadic_windows(t_min: f64, t_max: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut k = t_min.max(f64::MIN_POSITIVE).log2().ceil() as i32;
    loop {
        let (a, b) = (2f64.powi(k), 2f64.powi(k + 1));
        if b > t_max {
            break;
        }
        out.push((a, b));
        k += 1;
    }
    out
}
