//! Monte-Carlo solutions of the Poisson equations behind the fluctuation
//! terms.
//!
//! For frozen θ and oracle values `(Ê, ∇̂Ê)`:
//!
//! - `v¹(x, x̃) = -∫₀^∞ E[(Ê - β)(∇f(X_t) X̃_t - ∇̂Ê)ᵀ] dt`
//! - `v²(x, x̃, x̄) = -∫₀^∞ E[(f(X̄_t) - Ê)(∇f(X_t) X̃_t)ᵀ] dt`
//!
//! with `(X, X̃)` started at `(x, x̃)` and `X̄` an independent copy started at
//! `x̄`. The integral is truncated at `T` and the remainder bounded by an
//! exponential fitted to the ensemble-mean integrand.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DiagnosticError;
use crate::integrator::FrozenSimulator;
use crate::model::SdeModel;
use crate::noise::NoiseStream;
use crate::objective::ObjectiveSpec;
use crate::oracle::OracleValues;
use crate::stats::linear_fit;
use crate::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoissonVariant {
    V1,
    V2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonOptions {
    /// Initial truncation time, doubled until the tail is small enough.
    pub t_trunc: f64,
    pub t_cap: f64,
    pub n_replicas: usize,
    pub dt: f64,
    pub seed: u64,
    /// Target `tail_bound / |v̂|`.
    pub tail_fraction: f64,
    /// Tails below this are accepted regardless of `|v̂|`.
    pub abs_floor: f64,
}

impl Default for PoissonOptions {
    fn default() -> Self {
        Self {
            t_trunc: 10.0,
            t_cap: 200.0,
            n_replicas: 1000,
            dt: 0.01,
            seed: 0,
            tail_fraction: 0.1,
            abs_floor: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonEstimate {
    pub variant: PoissonVariant,
    pub v_hat: Vec<f64>,
    pub truncation_t: f64,
    pub tail_bound: f64,
    /// Fitted exponential rate of the integrand norm.
    pub decay_rate: Option<f64>,
    /// Tail within `tail_fraction·|v̂|` (or below the absolute floor).
    pub tail_ok: bool,
    pub theta: Vec<f64>,
    pub x: Vec<f64>,
    /// Column-major `d × ℓ`.
    pub x_tilde: Vec<f64>,
    pub x_bar: Option<Vec<f64>>,
    pub n_replicas: usize,
}

impl PoissonEstimate {
    pub fn norm(&self) -> f64 {
        self.v_hat.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

const CHUNKS: u64 = 16;

/// Sum and sum of squares of the integrand over a block of replicas, per
/// time step and component.
#[allow(clippy::too_many_arguments)]
fn integrand_moments(
    model: &dyn SdeModel,
    objective: &ObjectiveSpec,
    oracle: &OracleValues,
    theta: &Vector,
    x: &Vector,
    x_tilde: &Matrix,
    x_bar: Option<&Vector>,
    n_steps: usize,
    opts: &PoissonOptions,
    replicas: std::ops::Range<u64>,
) -> Result<(Vec<f64>, Vec<f64>), DiagnosticError> {
    let ell = theta.len();
    let len = (n_steps + 1) * ell;
    let (mut sum, mut sq) = (vec![0.0; len], vec![0.0; len]);
    let beta = objective.beta_target;
    let e = oracle.mean_f;
    let mut buf = vec![0.0; x.len()];
    let mut tan = Vector::zeros(ell);
    for r in replicas {
        let mut main = FrozenSimulator::new(
            model,
            theta.clone(),
            x.clone(),
            Some(x_tilde.clone()),
            opts.dt,
            NoiseStream::new(opts.seed, 2 * r),
        )?;
        let mut bar = match x_bar {
            Some(xb) => Some(FrozenSimulator::new(
                model,
                theta.clone(),
                xb.clone(),
                None,
                opts.dt,
                NoiseStream::new(opts.seed, 2 * r + 1),
            )?),
            None => None,
        };
        for k in 0..=n_steps {
            if k > 0 {
                main.step()?;
                if let Some(b) = bar.as_mut() {
                    b.step()?;
                }
            }
            objective.f.grad_times_tangent(
                main.x(),
                main.x_tilde().expect("tangent enabled"),
                &mut buf,
                &mut tan,
            );
            let gap = match &bar {
                Some(b) => objective.f.value(b.x()) - e,
                None => e - beta,
            };
            for i in 0..ell {
                let g = match bar {
                    Some(_) => gap * tan[i],
                    None => gap * (tan[i] - oracle.grad_mean_f[i]),
                };
                sum[k * ell + i] += g;
                sq[k * ell + i] += g * g;
            }
        }
    }
    Ok((sum, sq))
}

struct Attempt {
    v_hat: Vec<f64>,
    tail: f64,
    rate: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn attempt(
    model: &dyn SdeModel,
    objective: &ObjectiveSpec,
    oracle: &OracleValues,
    theta: &Vector,
    x: &Vector,
    x_tilde: &Matrix,
    x_bar: Option<&Vector>,
    t_trunc: f64,
    opts: &PoissonOptions,
) -> Result<Attempt, DiagnosticError> {
    let ell = theta.len();
    let n_steps = (t_trunc / opts.dt).round() as usize;
    let n = opts.n_replicas as u64;
    let bounds: Vec<(u64, u64)> = (0..CHUNKS)
        .map(|c| (c * n / CHUNKS, (c + 1) * n / CHUNKS))
        .filter(|(a, b)| a < b)
        .collect();
    let parts = bounds
        .par_iter()
        .map(|&(a, b)| {
            integrand_moments(
                model,
                objective,
                oracle,
                theta,
                x,
                x_tilde,
                x_bar,
                n_steps,
                opts,
                a..b,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let len = (n_steps + 1) * ell;
    let (mut sum, mut sq) = (vec![0.0; len], vec![0.0; len]);
    for (s, q) in &parts {
        for j in 0..len {
            sum[j] += s[j];
            sq[j] += q[j];
        }
    }
    let nf = opts.n_replicas as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let se: Vec<f64> = (0..len)
        .map(|j| {
            let var = ((sq[j] - nf * mean[j] * mean[j]) / (nf - 1.0)).max(0.0);
            (var / nf).sqrt()
        })
        .collect();

    let mut v_hat = vec![0.0; ell];
    for k in 0..n_steps {
        for i in 0..ell {
            v_hat[i] -= 0.5 * opts.dt * (mean[k * ell + i] + mean[(k + 1) * ell + i]);
        }
    }

    let norm_at = |v: &[f64], k: usize| {
        v[k * ell..(k + 1) * ell]
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    };
    let signal: Vec<f64> = (0..=n_steps).map(|k| norm_at(&mean, k)).collect();
    let noise: Vec<f64> = (0..=n_steps).map(|k| norm_at(&se, k)).collect();
    if signal.iter().all(|s| *s == 0.0) {
        return Ok(Attempt {
            v_hat,
            tail: 0.0,
            rate: None,
        });
    }
    let peak = (0..=n_steps)
        .max_by(|a, b| signal[*a].total_cmp(&signal[*b]))
        .unwrap();
    let end = (peak..=n_steps)
        .take_while(|&k| signal[k] > 3.0 * noise[k] && signal[k] > 0.0)
        .last()
        .unwrap_or(peak);
    if end < peak + 2 {
        return Err(DiagnosticError::EstimationFailure(
            "integrand never rises above its Monte-Carlo noise".into(),
        ));
    }
    let ts: Vec<f64> = (peak..=end).map(|k| k as f64 * opts.dt).collect();
    let ly: Vec<f64> = (peak..=end).map(|k| signal[k].ln()).collect();
    let fit = linear_fit(&ts, &ly);
    if !(fit.slope < 0.0) {
        return Err(DiagnosticError::EstimationFailure(format!(
            "integrand does not decay (fitted rate {})",
            fit.slope
        )));
    }
    let t_end = n_steps as f64 * opts.dt;
    let tail = (fit.intercept + fit.slope * t_end).exp() / -fit.slope;
    Ok(Attempt {
        v_hat,
        tail,
        rate: Some(fit.slope),
    })
}

/// Estimates `v¹` or `v²` at `(x, x̃[, x̄])`.
///
/// The truncation time starts at `options.t_trunc` and doubles until the
/// tail bound is below `tail_fraction·|v̂|` or the cap is reached.
#[allow(clippy::too_many_arguments)]
pub fn estimate_poisson_solution(
    model: &dyn SdeModel,
    objective: &ObjectiveSpec,
    oracle: &OracleValues,
    theta: &Vector,
    x: &Vector,
    x_tilde: &Matrix,
    x_bar: Option<&Vector>,
    variant: PoissonVariant,
    options: &PoissonOptions,
) -> Result<PoissonEstimate, DiagnosticError> {
    let (d, ell) = (model.state_dim(), model.param_dim());
    if x.len() != d || theta.len() != ell || x_tilde.shape() != (d, ell) {
        return Err(DiagnosticError::InvalidInput(
            "state shapes do not match the model".into(),
        ));
    }
    if oracle.grad_mean_f.len() != ell {
        return Err(DiagnosticError::InvalidInput(
            "oracle gradient has the wrong length".into(),
        ));
    }
    if options.n_replicas < 2 || !(options.t_trunc > options.dt) {
        return Err(DiagnosticError::InvalidInput(
            "need two replicas and a truncation time above dt".into(),
        ));
    }
    let bar = match (variant, x_bar) {
        (PoissonVariant::V1, _) => None,
        (PoissonVariant::V2, Some(xb)) if xb.len() == d => Some(xb),
        (PoissonVariant::V2, _) => {
            return Err(DiagnosticError::InvalidInput(
                "the second Poisson solution needs x_bar of the state dimension".into(),
            ))
        }
    };

    let mut t = options.t_trunc.min(options.t_cap);
    loop {
        let a = attempt(model, objective, oracle, theta, x, x_tilde, bar, t, options)?;
        let size: f64 = a.v_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
        let tail_ok = a.tail <= (options.tail_fraction * size).max(options.abs_floor);
        if tail_ok || t >= options.t_cap {
            return Ok(PoissonEstimate {
                variant,
                v_hat: a.v_hat,
                truncation_t: t,
                tail_bound: a.tail,
                decay_rate: a.rate,
                tail_ok,
                theta: theta.as_slice().to_vec(),
                x: x.as_slice().to_vec(),
                x_tilde: x_tilde.as_slice().to_vec(),
                x_bar: bar.map(|v| v.as_slice().to_vec()),
                n_replicas: options.n_replicas,
            });
        }
        t = (2.0 * t).min(options.t_cap);
    }
}

/// Fit of a sweep of estimates against a growth envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    /// Smallest `C` with `|v̂_i| ≤ C·bound_i` for every sweep point.
    pub c: f64,
    pub ratios: Vec<f64>,
    /// `C` finite and the last ratio no larger than the earlier maximum, so
    /// the envelope is not outgrown along the sweep.
    pub holds: bool,
}

/// `ratios_i = |v̂_i| / bound_i`; `bounds` must be positive.
pub fn growth_fit(values: &[f64], bounds: &[f64]) -> GrowthFit {
    let ratios: Vec<f64> = values
        .iter()
        .zip(bounds)
        .map(|(v, b)| v.abs() / b)
        .collect();
    let c = ratios.iter().cloned().fold(0.0, f64::max);
    let holds = match ratios.split_last() {
        Some((last, rest)) if !rest.is_empty() => {
            c.is_finite() && *last <= rest.iter().cloned().fold(0.0, f64::max)
        }
        _ => c.is_finite(),
    };
    GrowthFit { c, ratios, holds }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_ou_model;
    use crate::objective::TestFunction;

    fn ou_oracle(theta: f64) -> OracleValues {
        OracleValues {
            theta: vec![theta],
            mean_f: theta,
            grad_mean_f: vec![1.0],
        }
    }

    fn s(v: f64) -> Vector {
        Vector::from_element(1, v)
    }

    #[test]
    fn minimizer_gives_zero_first_solution() {
        let m = make_ou_model(1.0, 0.5, 1).unwrap();
        let obj = ObjectiveSpec::new(TestFunction::coordinate(1, 0), 1.0);
        let est = estimate_poisson_solution(
            &m,
            &obj,
            &ou_oracle(1.0),
            &s(1.0),
            &s(0.3),
            &Matrix::from_element(1, 1, 2.0),
            None,
            PoissonVariant::V1,
            &PoissonOptions {
                n_replicas: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(est.v_hat, vec![0.0]);
        assert!(est.tail_ok);
    }

    #[test]
    fn first_solution_matches_closed_form() {
        // v¹ = -(θ - β)(x̃ - 1)/a for OU with f(x) = x
        let m = make_ou_model(1.0, 0.5, 1).unwrap();
        let obj = ObjectiveSpec::new(TestFunction::coordinate(1, 0), 1.0);
        let est = estimate_poisson_solution(
            &m,
            &obj,
            &ou_oracle(1.5),
            &s(1.5),
            &s(0.0),
            &Matrix::from_element(1, 1, 3.0),
            None,
            PoissonVariant::V1,
            &PoissonOptions {
                n_replicas: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((est.v_hat[0] + 1.0).abs() < 0.01, "{:?}", est.v_hat);
        assert!(est.tail_ok);
        assert!((est.decay_rate.unwrap() + 1.0).abs() < 0.01);
    }

    #[test]
    fn second_solution_needs_x_bar() {
        let m = make_ou_model(1.0, 0.5, 1).unwrap();
        let obj = ObjectiveSpec::new(TestFunction::coordinate(1, 0), 1.0);
        let r = estimate_poisson_solution(
            &m,
            &obj,
            &ou_oracle(1.5),
            &s(1.5),
            &s(0.0),
            &Matrix::zeros(1, 1),
            None,
            PoissonVariant::V2,
            &PoissonOptions::default(),
        );
        assert!(matches!(r, Err(DiagnosticError::InvalidInput(_))));
    }

    #[test]
    fn growth_fit_flags_outgrowing_sweeps() {
        let ok = growth_fit(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]);
        assert!(ok.holds);
        assert_eq!(ok.c, 1.0);
        let bad = growth_fit(&[1.0, 4.0, 16.0], &[1.0, 2.0, 4.0]);
        assert!(!bad.holds);
    }
}
