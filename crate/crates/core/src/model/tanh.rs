use super::{require_dim, require_positive, ModelError, SdeModel};
use crate::{Matrix, Vector};

/// Nonlinear dissipative model
///
/// ```text
/// μ(x, θ)_i = -a x_i + c tanh(x_i) + θ_i
/// σ(x, θ)   = (s0 + s1 tanh(x_1)) I
/// ```
///
/// with `ℓ = d`. Because `tanh` is 1-Lipschitz the dissipativity inequality
/// holds with rate `a - |c| - (7/2) s1² d`, which the constructor requires to
/// be positive.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhModel {
    a: f64,
    c: f64,
    s0: f64,
    s1: f64,
    dim: usize,
}

pub fn make_tanh_model(
    a: f64,
    c: f64,
    s0: f64,
    s1: f64,
    d: usize,
) -> Result<TanhModel, ModelError> {
    require_positive("a", a)?;
    require_positive("s0", s0)?;
    require_dim("dim", d)?;
    if !c.is_finite() || !s1.is_finite() {
        return Err(ModelError::InvalidParameter {
            name: "c",
            reason: "c and s1 must be finite".into(),
        });
    }
    let margin = TanhModel::margin_of(a, c, s1, d);
    if margin <= 0.0 {
        return Err(ModelError::InvalidParameter {
            name: "a",
            reason: format!(
                "dissipativity margin a - |c| - 3.5*s1^2*d > 0 violated: \
                 {a} - {} - 3.5*{}*{d} = {margin}",
                c.abs(),
                s1 * s1
            ),
        });
    }
    Ok(TanhModel {
        a,
        c,
        s0,
        s1,
        dim: d,
    })
}

impl TanhModel {
    /// Builds the model without checking the dissipativity margin. Used to
    /// exercise the assumption checkers on deliberately bad parameters.
    pub fn new_unchecked(a: f64, c: f64, s0: f64, s1: f64, d: usize) -> Self {
        Self {
            a,
            c,
            s0,
            s1,
            dim: d,
        }
    }

    fn margin_of(a: f64, c: f64, s1: f64, d: usize) -> f64 {
        a - c.abs() - 3.5 * s1 * s1 * d as f64
    }

    /// Analytic lower bound on the dissipativity rate.
    pub fn dissipativity_margin(&self) -> f64 {
        Self::margin_of(self.a, self.c, self.s1, self.dim)
    }
}

fn sech2(v: f64) -> f64 {
    let c = v.cosh();
    1.0 / (c * c)
}

impl SdeModel for TanhModel {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn param_dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, x: &Vector, theta: &Vector, out: &mut Vector) {
        for i in 0..self.dim {
            out[i] = -self.a * x[i] + self.c * x[i].tanh() + theta[i];
        }
    }

    fn diffusion(&self, x: &Vector, _theta: &Vector, out: &mut Matrix) {
        out.fill(0.0);
        out.fill_diagonal(self.s0 + self.s1 * x[0].tanh());
    }

    fn drift_jac_x(&self, x: &Vector, _theta: &Vector, out: &mut Matrix) {
        out.fill(0.0);
        for i in 0..self.dim {
            out[(i, i)] = -self.a + self.c * sech2(x[i]);
        }
    }

    fn drift_jac_theta(&self, _x: &Vector, _theta: &Vector, out: &mut Matrix) {
        out.fill(0.0);
        out.fill_diagonal(1.0);
    }

    fn diffusion_jac_x(&self, x: &Vector, _theta: &Vector, out: &mut [Matrix]) {
        for slice in out.iter_mut() {
            slice.fill(0.0);
        }
        out[0].fill_diagonal(self.s1 * sech2(x[0]));
    }

    fn diffusion_jac_theta(&self, _x: &Vector, _theta: &Vector, out: &mut [Matrix]) {
        for slice in out {
            slice.fill(0.0);
        }
    }

    fn name(&self) -> &str {
        "tanh"
    }
}
