use super::{require_dim, require_positive, ModelError, SdeModel};
use crate::{Matrix, Vector};

/// Ornstein-Uhlenbeck model `μ(x, θ) = a(θ - x)`, `σ = s·I`, with `ℓ = d`.
///
/// The stationary law is the product Gaussian `N(θ_i, s² / (2a))`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuModel {
    a: f64,
    sigma: f64,
    dim: usize,
}

pub fn make_ou_model(a: f64, sigma_const: f64, d: usize) -> Result<OuModel, ModelError> {
    require_positive("a", a)?;
    require_positive("sigma", sigma_const)?;
    require_dim("dim", d)?;
    Ok(OuModel {
        a,
        sigma: sigma_const,
        dim: d,
    })
}

impl OuModel {
    /// Builds the model without parameter validation. Used for degenerate
    /// fixtures such as the zero-diffusion limit.
    pub fn new_unchecked(a: f64, sigma_const: f64, d: usize) -> Self {
        Self {
            a,
            sigma: sigma_const,
            dim: d,
        }
    }

    pub fn rate(&self) -> f64 {
        self.a
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.a)
    }
}

impl SdeModel for OuModel {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn param_dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, x: &Vector, theta: &Vector, out: &mut Vector) {
        for i in 0..self.dim {
            out[i] = self.a * (theta[i] - x[i]);
        }
    }

    fn diffusion(&self, _x: &Vector, _theta: &Vector, out: &mut Matrix) {
        out.fill(0.0);
        out.fill_diagonal(self.sigma);
    }

    fn drift_jac_x(&self, _x: &Vector, _theta: &Vector, out: &mut Matrix) {
        out.fill(0.0);
        out.fill_diagonal(-self.a);
    }

    fn drift_jac_theta(&self, _x: &Vector, _theta: &Vector, out: &mut Matrix) {
        out.fill(0.0);
        out.fill_diagonal(self.a);
    }

    fn diffusion_jac_x(&self, _x: &Vector, _theta: &Vector, out: &mut [Matrix]) {
        for slice in out {
            slice.fill(0.0);
        }
    }

    fn diffusion_jac_theta(&self, _x: &Vector, _theta: &Vector, out: &mut [Matrix]) {
        for slice in out {
            slice.fill(0.0);
        }
    }

    fn name(&self) -> &str {
        "ou"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SdeModelExt;

    #[test]
    fn drift_values() {
        let m = make_ou_model(1.0, 0.5, 1).unwrap();
        let zero = Vector::from_element(1, 0.0);
        assert_eq!(m.eval_drift(&zero, &zero)[0], 0.0);

        let m = make_ou_model(1.5, 0.5, 1).unwrap();
        let theta = Vector::from_element(1, 2.0);
        assert_eq!(m.eval_drift(&zero, &theta)[0], 3.0);
    }

    #[test]
    fn stationary_variance_closed_form() {
        let m = make_ou_model(1.0, 0.5, 1).unwrap();
        assert_eq!(m.stationary_variance(), 0.125);
    }

    #[test]
    fn rejects_non_positive_parameters() {
        assert!(matches!(
            make_ou_model(0.0, 0.5, 1),
            Err(ModelError::InvalidParameter { name: "a", .. })
        ));
        assert!(matches!(
            make_ou_model(1.0, -0.5, 1),
            Err(ModelError::InvalidParameter { name: "sigma", .. })
        ));
        assert!(make_ou_model(1.0, 0.5, 0).is_err());
    }

    #[test]
    fn jacobian_shapes() {
        let m = make_ou_model(2.0, 0.3, 3).unwrap();
        let x = Vector::zeros(3);
        let jt = m.eval_drift_jac_theta(&x, &x);
        assert_eq!(jt.shape(), (3, 3));
        assert_eq!(m.eval_diffusion_jac_x(&x, &x).len(), 3);
    }
}
