//! Exponential decay rates of frozen-θ ensembles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DiagnosticError;
use crate::integrator::FrozenSimulator;
use crate::model::SdeModel;
use crate::noise::NoiseStream;
use crate::stats::linear_fit;
use crate::Vector;

/// What decays, and what rate it must reach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DecayMode {
    /// `E|X_t^{x1} - X_t^{x2}|²` under shared noise; passes when
    /// `rate ≤ -beta_hat + tol`.
    Contraction { beta_hat: f64 },
    /// `|E f(X_t^{x1}) - reference|`; passes when `rate ≤ -beta_hat/2 + tol`.
    Ergodic { reference: f64, beta_hat: f64 },
    /// `|∂_{x_0} E f(X_t^{x1})|` by central differences with step `h`;
    /// passes when `rate < 0`.
    DerivativeX { h: f64 },
    /// `|∂_{θ_0} E f(X_t^{θ,x1}) - reference|`; passes when `rate < 0`.
    DerivativeTheta { h: f64, reference: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayOptions {
    pub t_end: f64,
    pub dt: f64,
    pub n_replicas: usize,
    /// Number of equally spaced sampling times on `[0, t_end]`.
    pub samples: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for DecayOptions {
    fn default() -> Self {
        Self {
            t_end: 10.0,
            dt: 0.01,
            n_replicas: 200,
            samples: 100,
            tolerance: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub r_squared: f64,
    /// Fitted window `[t0, t1]`.
    pub window: (f64, f64),
    pub n_points: usize,
    /// Rate the fit had to reach, when the mode has one.
    pub required_rate: Option<f64>,
    pub passed: bool,
    pub times: Vec<f64>,
    pub signal: Vec<f64>,
    pub noise_floor: Vec<f64>,
}

type Observable<'a> = &'a (dyn Fn(&Vector) -> f64 + Sync);

/// Per-replica observations at the sampling times.
#[allow(clippy::too_many_arguments)]
fn replica_path(
    model: &dyn SdeModel,
    theta: &Vector,
    x1: &Vector,
    x2: &Vector,
    f: Observable<'_>,
    mode: &DecayMode,
    opts: &DecayOptions,
    stride: u64,
    n_samples: usize,
    replica: u64,
) -> Result<Vec<f64>, DiagnosticError> {
    let mut theta_a = theta.clone();
    let mut theta_b = theta.clone();
    let (xa, xb) = match mode {
        DecayMode::Contraction { .. } => (x1.clone(), x2.clone()),
        DecayMode::Ergodic { .. } => (x1.clone(), x1.clone()),
        DecayMode::DerivativeX { h } => {
            let (mut a, mut b) = (x1.clone(), x1.clone());
            a[0] += h;
            b[0] -= h;
            (a, b)
        }
        DecayMode::DerivativeTheta { h, .. } => {
            theta_a[0] += h;
            theta_b[0] -= h;
            (x1.clone(), x1.clone())
        }
    };
    let mut stream = NoiseStream::new(opts.seed, replica);
    let mut a = FrozenSimulator::new(model, theta_a, xa, None, opts.dt, NoiseStream::new(0, 0))?;
    let mut b = FrozenSimulator::new(model, theta_b, xb, None, opts.dt, NoiseStream::new(0, 0))?;
    let mut dw = Vector::zeros(model.state_dim());
    let sqrt_dt = opts.dt.sqrt();
    let observe = |a: &FrozenSimulator, b: &FrozenSimulator| match mode {
        DecayMode::Contraction { .. } => (a.x() - b.x()).norm_squared(),
        DecayMode::Ergodic { .. } => f(a.x()),
        DecayMode::DerivativeX { h } | DecayMode::DerivativeTheta { h, .. } => {
            (f(a.x()) - f(b.x())) / (2.0 * h)
        }
    };
    let paired = !matches!(mode, DecayMode::Ergodic { .. });
    let mut out = Vec::with_capacity(n_samples);
    out.push(observe(&a, &b));
    for k in 1..=stride * (n_samples as u64 - 1) {
        stream.fill_increment(sqrt_dt, &mut dw);
        a.step_with_increment(&dw)?;
        if paired {
            b.step_with_increment(&dw)?;
        }
        if k % stride == 0 {
            out.push(observe(&a, &b));
        }
    }
    Ok(out)
}

/// Fits `log signal(t) ≈ c + rate·t` on the initial stretch where the
/// ensemble-mean signal exceeds three standard errors.
///
/// `x2` is only used by [`DecayMode::Contraction`]. A window whose signal
/// spans less than one decade is an insufficient-signal error.
#[allow(clippy::too_many_arguments)]
pub fn decay_rate_fit(
    model: &dyn SdeModel,
    theta: &Vector,
    x1: &Vector,
    x2: &Vector,
    f: Observable<'_>,
    mode: &DecayMode,
    options: &DecayOptions,
) -> Result<DecayFit, DiagnosticError> {
    if options.samples < 3 || options.n_replicas < 2 {
        return Err(DiagnosticError::InvalidInput(
            "need at least 3 sampling times and 2 replicas".into(),
        ));
    }
    if matches!(mode, DecayMode::Contraction { .. }) && x1 == x2 {
        return Err(DiagnosticError::InsufficientSignal(
            "x1 = x2 gives an identically zero difference".into(),
        ));
    }
    let n_steps = (options.t_end / options.dt).round() as u64;
    let stride = (n_steps / (options.samples as u64 - 1)).max(1);
    let n_samples = (n_steps / stride) as usize + 1;
    let paths = (0..options.n_replicas as u64)
        .into_par_iter()
        .map(|r| replica_path(model, theta, x1, x2, f, mode, options, stride, n_samples, r))
        .collect::<Result<Vec<_>, _>>()?;

    let n = paths.len() as f64;
    let times: Vec<f64> = (0..n_samples)
        .map(|i| i as f64 * stride as f64 * options.dt)
        .collect();
    let reference = match mode {
        DecayMode::Ergodic { reference, .. } | DecayMode::DerivativeTheta { reference, .. } => {
            *reference
        }
        _ => 0.0,
    };
    let mut signal = Vec::with_capacity(n_samples);
    let mut noise_floor = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let m = paths.iter().map(|p| p[i]).sum::<f64>() / n;
        let var = paths.iter().map(|p| (p[i] - m).powi(2)).sum::<f64>() / (n - 1.0);
        signal.push((m - reference).abs());
        noise_floor.push((var / n).sqrt());
    }

    let len = signal
        .iter()
        .zip(&noise_floor)
        .take_while(|(s, se)| **s > 3.0 * **se && **s > 0.0)
        .count();
    let window = &signal[..len];
    let decades = if len >= 3 {
        let max = window.iter().cloned().fold(f64::MIN, f64::max);
        let min = window.iter().cloned().fold(f64::MAX, f64::min);
        (max / min).log10()
    } else {
        0.0
    };
    if decades < 1.0 {
        return Err(DiagnosticError::InsufficientSignal(format!(
            "signal above 3·SE spans {decades:.2} decades over {len} points"
        )));
    }
    let ly: Vec<f64> = window.iter().map(|s| s.ln()).collect();
    let fit = linear_fit(&times[..len], &ly);
    let required_rate = match mode {
        DecayMode::Contraction { beta_hat } => Some(-beta_hat),
        DecayMode::Ergodic { beta_hat, .. } => Some(-beta_hat / 2.0),
        _ => None,
    };
    let passed = match required_rate {
        Some(r) => fit.slope <= r + options.tolerance,
        None => fit.slope < 0.0,
    };
    Ok(DecayFit {
        rate: fit.slope,
        r_squared: fit.r_squared,
        window: (times[0], times[len - 1]),
        n_points: len,
        required_rate,
        passed,
        times,
        signal,
        noise_floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_ou_model;

    fn first(x: &Vector) -> f64 {
        x[0]
    }

    #[test]
    fn identical_starts_have_no_signal() {
        let m = make_ou_model(1.0, 0.5, 1).unwrap();
        let x = Vector::from_element(1, 1.0);
        let r = decay_rate_fit(
            &m,
            &Vector::zeros(1),
            &x,
            &x,
            &first,
            &DecayMode::Contraction { beta_hat: 1.0 },
            &DecayOptions::default(),
        );
        assert!(matches!(r, Err(DiagnosticError::InsufficientSignal(_))));
    }

    #[test]
    fn ou_contraction_is_deterministic() {
        // shared noise and additive diffusion: ΔX_t = (1 - a dt)^n ΔX_0
        let m = make_ou_model(1.0, 0.5, 1).unwrap();
        let fit = decay_rate_fit(
            &m,
            &Vector::zeros(1),
            &Vector::from_element(1, 1.0),
            &Vector::from_element(1, -1.0),
            &first,
            &DecayMode::Contraction { beta_hat: 1.0 },
            &DecayOptions {
                n_replicas: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let exact = 2.0 * (1.0f64 - 0.01).ln() / 0.01;
        assert!((fit.rate - exact).abs() < 1e-9);
        assert!(fit.passed);
        assert_eq!(fit.n_points, fit.times.len());
    }

    #[test]
    fn ou_derivative_in_theta_decays() {
        // ∂_θ E X_t = 1 - e^{-at}
        let m = make_ou_model(1.0, 0.5, 1).unwrap();
        let fit = decay_rate_fit(
            &m,
            &Vector::zeros(1),
            &Vector::from_element(1, 2.0),
            &Vector::zeros(1),
            &first,
            &DecayMode::DerivativeTheta {
                h: 0.1,
                reference: 1.0,
            },
            &DecayOptions {
                n_replicas: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((fit.rate + 1.0).abs() < 0.02);
        assert!(fit.passed);
    }
}
