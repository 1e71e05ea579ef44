//! Stopping-time cycles `τ_n`, `σ_n` of the oracle gradient norm.
//!
//! `τ_n` is the first time after `σ_{n-1}` at which `|∇̂J| ≥ κ`; `σ_n` is the
//! first exit from the band `[g/2, 2g]` around `g = |∇̂J(θ_{τ_n})|` or the time
//! at which `∫_{τ_n} α ds` reaches `μ`, whichever comes first. Both curves are
//! linearly interpolated between grid points.

use serde::{Deserialize, Serialize};

use crate::algorithm::RunLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleExit {
    Band,
    Budget,
    /// The data ended before either exit.
    Censored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub n: usize,
    pub tau: f64,
    pub sigma: f64,
    /// Gradient norm at the first grid point at or after `τ_n`.
    pub grad_at_tau: f64,
    /// `∫_{τ_n}^{σ_n} α ds`.
    pub alpha_integral: f64,
    pub exit: CycleExit,
    /// Largest spacing of the gradient grid.
    pub grid_resolution: f64,
}

/// Piecewise-linear curve through `(t, y)` points with strictly increasing `t`.
struct Curve<'a> {
    pts: &'a [(f64, f64)],
}

impl Curve<'_> {
    fn value(&self, t: f64) -> f64 {
        let p = self.pts;
        let i = p.partition_point(|q| q.0 <= t);
        if i == 0 {
            return p[0].1;
        }
        if i == p.len() {
            return p[p.len() - 1].1;
        }
        let (a, b) = (p[i - 1], p[i]);
        a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
    }

    /// Exact trapezoid integral of the interpolant over `[a, b]`.
    fn integral(&self, a: f64, b: f64) -> f64 {
        let p = self.pts;
        let mut acc = 0.0;
        let mut lo = a;
        let mut i = p.partition_point(|q| q.0 <= a);
        while lo < b {
            let hi = if i < p.len() { p[i].0.min(b) } else { b };
            acc += 0.5 * (hi - lo) * (self.value(lo) + self.value(hi));
            lo = hi;
            i += 1;
        }
        acc
    }
}

/// Cycles from a run log, using checkpoint gradient norms and the logged
/// learning rate.
pub fn detect_cycles(log: &RunLog, kappa: f64, mu: f64) -> Vec<CycleRecord> {
    let grad: Vec<(f64, f64)> = log
        .checkpoints
        .iter()
        .map(|c| (c.record.t, c.grad_j_hat_norm))
        .collect();
    let alpha: Vec<(f64, f64)> = log.trajectory.iter().map(|r| (r.t, r.alpha)).collect();
    detect_cycles_from(&grad, &alpha, kappa, mu)
}

/// Cycles from explicit `(t, |∇̂J|)` and `(t, α)` grids.
pub fn detect_cycles_from(
    grad: &[(f64, f64)],
    alpha: &[(f64, f64)],
    kappa: f64,
    mu: f64,
) -> Vec<CycleRecord> {
    let mut out = Vec::new();
    if grad.is_empty() || alpha.is_empty() {
        return out;
    }
    let resolution = grad.windows(2).map(|w| w[1].0 - w[0].0).fold(0.0, f64::max);
    let g = Curve { pts: grad };
    let a = Curve { pts: alpha };
    let t_last = grad[grad.len() - 1].0;
    let mut p = grad[0].0;

    loop {
        // τ: first grid index at or after p with g ≥ κ
        let start = grad.partition_point(|q| q.0 < p);
        let Some(i) = (start..grad.len()).find(|&i| grad[i].1 >= kappa) else {
            break;
        };
        let tau = if i == start && g.value(p) >= kappa {
            p
        } else {
            let (t0, g0) = (grad[i - 1].0.max(p), g.value(grad[i - 1].0.max(p)));
            let (t1, g1) = grad[i];
            if g1 == g0 {
                t0
            } else {
                (t0 + (kappa - g0) / (g1 - g0) * (t1 - t0)).clamp(t0, t1)
            }
        };
        let g_tau = grad[i].1;
        let (lo, hi) = (0.5 * g_tau, 2.0 * g_tau);

        // band exit
        let mut band_exit = None;
        for j in i + 1..grad.len() {
            let v = grad[j].1;
            if v < lo || v > hi {
                let (t0, g0) = grad[j - 1];
                let edge = if v < lo { lo } else { hi };
                let s = if v == g0 { 0.0 } else { (edge - g0) / (v - g0) };
                band_exit = Some(t0 + s.clamp(0.0, 1.0) * (grad[j].0 - t0));
                break;
            }
        }

        // budget exit, bisection on the monotone cumulative integral
        let horizon = band_exit.unwrap_or(t_last);
        let budget_exit = if a.integral(tau, horizon) >= mu {
            let (mut l, mut r) = (tau, horizon);
            for _ in 0..200 {
                let m = 0.5 * (l + r);
                if a.integral(tau, m) < mu {
                    l = m;
                } else {
                    r = m;
                }
            }
            Some(l)
        } else {
            None
        };

        let (sigma, exit) = match (budget_exit, band_exit) {
            (Some(s), _) => (s, CycleExit::Budget),
            (None, Some(s)) => (s, CycleExit::Band),
            (None, None) => (t_last, CycleExit::Censored),
        };
        out.push(CycleRecord {
            n: out.len() + 1,
            tau,
            sigma,
            grad_at_tau: g_tau,
            alpha_integral: a.integral(tau, sigma),
            exit,
            grid_resolution: resolution,
        });
        if exit == CycleExit::Censored || sigma >= t_last {
            break;
        }
        p = if sigma > tau {
            sigma
        } else {
            grad[i].0.max(tau + resolution * 1e-9)
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(f: impl Fn(f64) -> f64, t_end: f64, dt: f64) -> Vec<(f64, f64)> {
        let n = (t_end / dt).round() as usize;
        (0..=n).map(|i| (i as f64 * dt, f(i as f64 * dt))).collect()
    }

    #[test]
    fn quiet_log_has_no_cycles() {
        let g = grid(|_| 0.01, 50.0, 1.0);
        let a = grid(|t| 1.0 / (1.0 + t), 50.0, 1.0);
        assert!(detect_cycles_from(&g, &a, 0.1, 1.0).is_empty());
    }

    #[test]
    fn synthetic_single_cycle() {
        let g = grid(
            |t| if (10.0..30.0).contains(&t) { 0.2 } else { 0.05 },
            50.0,
            0.01,
        );
        let a = grid(|t| 1.0 / (1.0 + t), 50.0, 0.01);
        let c = detect_cycles_from(&g, &a, 0.1, 1e9);
        assert_eq!(c.len(), 1);
        assert!((c[0].tau - 10.0).abs() < 0.011);
        assert!((c[0].sigma - 30.0).abs() < 0.011);
        assert_eq!(c[0].exit, CycleExit::Band);
        assert_eq!(c[0].grad_at_tau, 0.2);
    }

    #[test]
    fn budget_cuts_cycles_and_is_respected() {
        let g = grid(|_| 0.5, 20.0, 0.1);
        let a = grid(|t| 1.0 / (1.0 + t), 20.0, 0.1);
        let mu = 0.5;
        let c = detect_cycles_from(&g, &a, 0.1, mu);
        assert!(c.len() > 1);
        for w in c.windows(2) {
            assert!(w[0].sigma <= w[1].tau);
        }
        for r in &c {
            assert!(r.tau <= r.sigma);
            assert!(r.alpha_integral <= mu);
            assert!(r.grad_at_tau >= 0.1);
        }
        assert_eq!(c.last().unwrap().exit, CycleExit::Censored);
    }

    #[test]
    fn piecewise_linear_integral_matches_trapezoid() {
        let a = grid(|t| t, 4.0, 1.0);
        let c = Curve { pts: &a };
        assert!((c.integral(0.5, 3.5) - (3.5f64 * 3.5 - 0.25) / 2.0).abs() < 1e-12);
    }
}
