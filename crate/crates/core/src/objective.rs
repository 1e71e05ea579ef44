//! Test functions `f` and the objective `J(θ) = (E_π f - β)²`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Matrix, Vector};

type ValueFn = dyn Fn(&Vector) -> f64 + Send + Sync;
type GradFn = dyn Fn(&Vector, &mut [f64]) + Send + Sync;

/// A scalar function of the state with uniformly bounded gradient.
#[derive(Clone)]
pub enum TestFunction {
    /// `f(x) = w·x`.
    Linear { weights: Vec<f64> },
    /// `f(x) = tanh(scale · x_index)`.
    Tanh { index: usize, scale: f64 },
    /// User-supplied function with declared gradient bound.
    Custom {
        value: Arc<ValueFn>,
        grad: Arc<GradFn>,
        grad_bound: f64,
    },
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear { weights } => f.debug_struct("Linear").field("weights", weights).finish(),
            Self::Tanh { index, scale } => f
                .debug_struct("Tanh")
                .field("index", index)
                .field("scale", scale)
                .finish(),
            Self::Custom { grad_bound, .. } => f
                .debug_struct("Custom")
                .field("grad_bound", grad_bound)
                .finish_non_exhaustive(),
        }
    }
}

impl TestFunction {
    /// `f(x) = x_index`.
    pub fn coordinate(d: usize, index: usize) -> Self {
        let mut weights = vec![0.0; d];
        weights[index] = 1.0;
        Self::Linear { weights }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        match self {
            Self::Linear { weights } => weights.iter().zip(x.iter()).map(|(w, v)| w * v).sum(),
            Self::Tanh { index, scale } => (scale * x[*index]).tanh(),
            Self::Custom { value, .. } => value(x),
        }
    }

    /// Writes the row gradient `∇f(x)` into `out` (length `d`).
    pub fn grad_into(&self, x: &Vector, out: &mut [f64]) {
        match self {
            Self::Linear { weights } => out.copy_from_slice(weights),
            Self::Tanh { index, scale } => {
                out.fill(0.0);
                let c = (scale * x[*index]).cosh();
                out[*index] = scale / (c * c);
            }
            Self::Custom { grad, .. } => grad(x, out),
        }
    }

    pub fn grad(&self, x: &Vector) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.grad_into(x, &mut out);
        out
    }

    /// Declared bound `B ≥ |∇f|` over the whole state space.
    pub fn grad_bound(&self) -> f64 {
        match self {
            Self::Linear { weights } => weights.iter().map(|w| w * w).sum::<f64>().sqrt(),
            Self::Tanh { scale, .. } => scale.abs(),
            Self::Custom { grad_bound, .. } => *grad_bound,
        }
    }

    /// `(∇f(x) X̃)ᵀ` as an `ℓ`-vector. `grad_buf` must have length `d`.
    pub fn grad_times_tangent(
        &self,
        x: &Vector,
        x_tilde: &Matrix,
        grad_buf: &mut [f64],
        out: &mut Vector,
    ) {
        self.grad_into(x, grad_buf);
        for j in 0..x_tilde.ncols() {
            let col = x_tilde.column(j);
            out[j] = grad_buf.iter().zip(col.iter()).map(|(g, v)| g * v).sum();
        }
    }

    /// Worst relative disagreement between `grad` and central differences of
    /// `value` over the given points.
    pub fn gradient_fd_error(&self, points: &[Vector]) -> f64 {
        let mut worst = 0.0_f64;
        for x in points {
            let g = self.grad(x);
            let h = 1e-6 * (1.0 + x.norm());
            for k in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let fd = (self.value(&xp) - self.value(&xm)) / (2.0 * h);
                worst = worst.max((fd - g[k]).abs() / g[k].abs().max(1.0));
            }
        }
        worst
    }
}

/// Serializable description of the built-in test functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TestFunctionSpec {
    Linear { weights: Vec<f64> },
    Tanh { index: usize, scale: f64 },
}

impl From<&TestFunctionSpec> for TestFunction {
    fn from(spec: &TestFunctionSpec) -> Self {
        match spec {
            TestFunctionSpec::Linear { weights } => Self::Linear {
                weights: weights.clone(),
            },
            TestFunctionSpec::Tanh { index, scale } => Self::Tanh {
                index: *index,
                scale: *scale,
            },
        }
    }
}

/// Test function plus target: `J(θ) = (E_{π_θ} f - beta_target)²`.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    pub f: TestFunction,
    pub beta_target: f64,
}

impl ObjectiveSpec {
    pub fn new(f: TestFunction, beta_target: f64) -> Self {
        Self { f, beta_target }
    }

    /// `J` as a function of the stationary mean of `f`.
    pub fn objective_from_mean(&self, mean_f: f64) -> f64 {
        let e = mean_f - self.beta_target;
        e * e
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradient_times_tangent() {
        let f = TestFunction::Linear {
            weights: vec![1.0, -2.0],
        };
        let x = Vector::from_vec(vec![0.3, 0.1]);
        let xt = Matrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.5, 1.0, -1.0]);
        let mut buf = [0.0; 2];
        let mut out = Vector::zeros(3);
        f.grad_times_tangent(&x, &xt, &mut buf, &mut out);
        assert_eq!(out.as_slice(), &[0.0, -2.0, 4.0]);
        assert!((f.value(&x) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn builtin_gradients_match_fd() {
        let pts: Vec<Vector> = (-5..=5)
            .map(|i| Vector::from_vec(vec![0.4 * i as f64, -0.3 * i as f64]))
            .collect();
        let lin = TestFunction::coordinate(2, 1);
        assert!(lin.gradient_fd_error(&pts) < 1e-4);
        let th = TestFunction::Tanh {
            index: 0,
            scale: 1.5,
        };
        assert!(th.gradient_fd_error(&pts) < 1e-4);
        assert_eq!(th.grad_bound(), 1.5);
    }

    #[test]
    fn objective_is_squared_gap() {
        let obj = ObjectiveSpec::new(TestFunction::coordinate(1, 0), 1.0);
        assert_eq!(obj.objective_from_mean(1.5), 0.25);
    }
}
