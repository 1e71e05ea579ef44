//! Moment growth of frozen-θ paths: plateau of `E|X_t|^p` and the growth
//! exponent of `E sup_{s≤t} |X_s|⁴`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DiagnosticError;
use crate::integrator::FrozenSimulator;
use crate::model::SdeModel;
use crate::noise::NoiseStream;
use crate::stats::{linear_fit, mean};
use crate::Vector;

pub const ORDERS: [i32; 3] = [2, 4, 8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentOptions {
    pub t_end: f64,
    pub dt: f64,
    pub n_replicas: usize,
    pub x0: Option<Vec<f64>>,
    pub seed: u64,
    /// First time of the sup-growth fit grid.
    pub fit_start: f64,
}

impl Default for MomentOptions {
    fn default() -> Self {
        Self {
            t_end: 1e4,
            dt: 0.01,
            n_replicas: 200,
            x0: None,
            seed: 0,
            fit_start: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub orders: Vec<i32>,
    /// `E|X|^p` averaged over `[0.4T, 0.5T]`, one entry per order.
    pub midpoint: Vec<f64>,
    /// `E|X|^p` averaged over `[0.9T, T]`.
    pub terminal: Vec<f64>,
    /// `terminal / midpoint`; `1` when both vanish.
    pub ratio: Vec<f64>,
    pub sup4_times: Vec<f64>,
    pub sup4_values: Vec<f64>,
    /// Log-log slope of `E sup|X|⁴` against `t` on `sup4_times`.
    pub sup4_exponent: Option<f64>,
    pub sup4_r_squared: Option<f64>,
    pub n_replicas: usize,
    pub t_end: f64,
}

impl MomentReport {
    /// Terminal/midpoint ratio of the eighth moment inside `[0.5, 2]`.
    pub fn plateaus(&self) -> bool {
        let r = self.ratio[ORDERS.iter().position(|&p| p == 8).unwrap()];
        (0.5..=2.0).contains(&r)
    }

    /// Eighth moment still rising at the end of the run.
    pub fn increasing_at_terminal(&self) -> bool {
        !self.plateaus() && self.ratio[2] > 2.0
    }
}

/// Dyadic grid `fit_start·2^k` below `t_end`, plus `t_end`.
fn sup_grid(fit_start: f64, t_end: f64) -> Vec<f64> {
    let mut g = Vec::new();
    let mut t = fit_start;
    while t < t_end * (1.0 - 1e-12) {
        g.push(t);
        t *= 2.0;
    }
    g.push(t_end);
    g
}

/// Streaming per-replica statistics of a sampled `|X_t|` path.
struct Accumulator {
    mid: [f64; 3],
    term: [f64; 3],
    n_mid: usize,
    n_term: usize,
    sup4: f64,
    sup_at: Vec<f64>,
}

impl Accumulator {
    fn new(grid_len: usize) -> Self {
        Self {
            mid: [0.0; 3],
            term: [0.0; 3],
            n_mid: 0,
            n_term: 0,
            sup4: 0.0,
            sup_at: Vec::with_capacity(grid_len),
        }
    }

    fn push(&mut self, t: f64, norm: f64, t_end: f64, grid: &[f64]) {
        let n2 = norm * norm;
        let p = [n2, n2 * n2, n2 * n2 * n2 * n2];
        self.sup4 = self.sup4.max(p[1]);
        let slack = 1e-9 * t_end;
        if t >= 0.4 * t_end - slack && t <= 0.5 * t_end + slack {
            for (m, v) in self.mid.iter_mut().zip(p) {
                *m += v;
            }
            self.n_mid += 1;
        }
        if t >= 0.9 * t_end - slack {
            for (m, v) in self.term.iter_mut().zip(p) {
                *m += v;
            }
            self.n_term += 1;
        }
        while self.sup_at.len() < grid.len() && t >= grid[self.sup_at.len()] - slack {
            self.sup_at.push(self.sup4);
        }
    }
}

fn report(
    accs: Vec<Accumulator>,
    grid: Vec<f64>,
    t_end: f64,
) -> Result<MomentReport, DiagnosticError> {
    if accs
        .iter()
        .any(|a| a.n_mid == 0 || a.n_term == 0 || a.sup_at.len() != grid.len())
    {
        return Err(DiagnosticError::InvalidInput(
            "paths do not cover the moment windows".into(),
        ));
    }
    let per = |f: &dyn Fn(&Accumulator) -> f64| mean(&accs.iter().map(f).collect::<Vec<_>>());
    let midpoint: Vec<f64> = (0..3)
        .map(|k| per(&|a| a.mid[k] / a.n_mid as f64))
        .collect();
    let terminal: Vec<f64> = (0..3)
        .map(|k| per(&|a| a.term[k] / a.n_term as f64))
        .collect();
    let ratio = midpoint
        .iter()
        .zip(&terminal)
        .map(|(m, t)| if *m == 0.0 && *t == 0.0 { 1.0 } else { t / m })
        .collect();
    let sup4_values: Vec<f64> = (0..grid.len()).map(|i| per(&|a| a.sup_at[i])).collect();
    let (sup4_exponent, sup4_r_squared) = if grid.len() < 2 {
        (None, None)
    } else if sup4_values.iter().all(|v| *v == 0.0) {
        (Some(0.0), Some(1.0))
    } else {
        let lx: Vec<f64> = grid.iter().map(|t| t.ln()).collect();
        let ly: Vec<f64> = sup4_values.iter().map(|v| v.ln()).collect();
        let fit = linear_fit(&lx, &ly);
        (Some(fit.slope), Some(fit.r_squared))
    };
    Ok(MomentReport {
        orders: ORDERS.to_vec(),
        midpoint,
        terminal,
        ratio,
        sup4_times: grid,
        sup4_values,
        sup4_exponent,
        sup4_r_squared,
        n_replicas: accs.len(),
        t_end,
    })
}

/// Moment report from an ensemble of frozen-θ paths simulated from `x0`.
pub fn moment_tracker(
    model: &dyn SdeModel,
    theta: &Vector,
    options: &MomentOptions,
) -> Result<MomentReport, DiagnosticError> {
    if options.n_replicas == 0 || !(options.t_end > options.fit_start) {
        return Err(DiagnosticError::InvalidInput(
            "need at least one replica and t_end > fit_start".into(),
        ));
    }
    let d = model.state_dim();
    let x0 = options
        .x0
        .as_ref()
        .map(|v| Vector::from_column_slice(v))
        .unwrap_or_else(|| Vector::zeros(d));
    let n = (options.t_end / options.dt).round() as u64;
    let t_end = n as f64 * options.dt;
    let grid = sup_grid(options.fit_start, t_end);
    let accs = (0..options.n_replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut sim = FrozenSimulator::new(
                model,
                theta.clone(),
                x0.clone(),
                None,
                options.dt,
                NoiseStream::new(options.seed, r),
            )?;
            let mut acc = Accumulator::new(grid.len());
            acc.push(0.0, x0.norm(), t_end, &grid);
            for _ in 0..n {
                sim.step()?;
                acc.push(sim.t(), sim.x().norm(), t_end, &grid);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>, DiagnosticError>>()?;
    report(accs, grid, t_end)
}

/// Moment report from sampled `|X_t|` paths, e.g. the `norm_x` columns of
/// several run logs. Every path uses the same `times`.
pub fn moments_from_paths(
    times: &[f64],
    norms: &[Vec<f64>],
    fit_start: f64,
) -> Result<MomentReport, DiagnosticError> {
    let Some(&t_end) = times.last() else {
        return Err(DiagnosticError::InvalidInput("empty time grid".into()));
    };
    if norms.is_empty() || norms.iter().any(|p| p.len() != times.len()) {
        return Err(DiagnosticError::InvalidInput(
            "every path must have one value per time".into(),
        ));
    }
    let grid = sup_grid(fit_start, t_end);
    let accs = norms
        .iter()
        .map(|path| {
            let mut acc = Accumulator::new(grid.len());
            for (t, x) in times.iter().zip(path) {
                acc.push(*t, *x, t_end, &grid);
            }
            acc
        })
        .collect();
    report(accs, grid, t_end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OuModel;

    #[test]
    fn grid_is_dyadic_plus_end() {
        assert_eq!(
            sup_grid(100.0, 1000.0),
            vec![100.0, 200.0, 400.0, 800.0, 1000.0]
        );
        assert_eq!(sup_grid(100.0, 400.0), vec![100.0, 200.0, 400.0]);
    }

    #[test]
    fn zero_diffusion_from_origin_has_zero_moments() {
        let m = OuModel::new_unchecked(1.0, 0.0, 1);
        let opts = MomentOptions {
            t_end: 200.0,
            n_replicas: 4,
            ..Default::default()
        };
        let r = moment_tracker(&m, &Vector::zeros(1), &opts).unwrap();
        assert!(r.terminal.iter().chain(&r.midpoint).all(|v| *v == 0.0));
        assert!(r.sup4_values.iter().all(|v| *v == 0.0));
        assert!(r.plateaus());
    }

    #[test]
    fn paths_and_simulation_agree_on_constant_paths() {
        let times: Vec<f64> = (0..=400).map(|i| i as f64).collect();
        let norms = vec![vec![2.0; times.len()]; 3];
        let r = moments_from_paths(&times, &norms, 100.0).unwrap();
        assert_eq!(r.terminal, vec![4.0, 16.0, 256.0]);
        assert_eq!(r.ratio, vec![1.0; 3]);
        assert!(r.sup4_exponent.unwrap().abs() < 1e-12);
    }
}
