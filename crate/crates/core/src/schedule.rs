//! Power-law learning rates `α_t = c (1 + t)^{-q}`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub c: f64,
    pub q: f64,
}

/// Which learning-rate condition failed first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScheduleViolation {
    /// `c ≤ 0`, `q ≤ 0` or a non-finite parameter.
    NotPositiveDecreasing,
    /// `∫ α dt < ∞` (q > 1).
    IntegralFinite,
    /// `∫ α² dt = ∞` (q ≤ 1/2).
    SquareIntegralDiverges,
    /// `∫ |α'| dt = ∞`.
    DerivativeNotIntegrable,
    /// No `p > 0` with `α_t² t^{1/2 + 2p} → 0`.
    NoRateWitness,
}

impl ScheduleViolation {
    pub fn message(self) -> &'static str {
        match self {
            Self::NotPositiveDecreasing => {
                "schedule: α must be positive and decreasing (c > 0, q > 0)"
            }
            Self::IntegralFinite => "schedule: ∫α is finite (q > 1)",
            Self::SquareIntegralDiverges => "schedule: ∫α² diverges",
            Self::DerivativeNotIntegrable => "schedule: ∫|α'| diverges",
            Self::NoRateWitness => "schedule: no p > 0 with α²·t^(1/2+2p) → 0",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleReport {
    pub valid: bool,
    pub violation: Option<ScheduleViolation>,
    /// A `p` with `α_t² t^{1/2 + 2p} → 0`, reported when valid.
    pub p_witness: Option<f64>,
}

impl Schedule {
    pub fn new(c: f64, q: f64) -> Self {
        Self { c, q }
    }

    pub fn alpha(&self, t: f64) -> f64 {
        self.c * (1.0 + t).powf(-self.q)
    }

    /// `∫_a^b α_s ds` in closed form.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if (self.q - 1.0).abs() < f64::EPSILON {
            self.c * ((1.0 + b) / (1.0 + a)).ln()
        } else {
            let e = 1.0 - self.q;
            self.c * ((1.0 + b).powf(e) - (1.0 + a).powf(e)) / e
        }
    }
}

/// Decides the four learning-rate conditions for the power-law family in
/// closed form.
///
/// For `α_t = c(1+t)^{-q}`: `∫α = ∞ ⇔ q ≤ 1`, `∫α² < ∞ ⇔ q > 1/2`,
/// `∫|α'| = α_0 - α_∞ < ∞` for every `q > 0`, and `α_t² t^{1/2+2p} → 0 ⇔
/// 2q > 1/2 + 2p`. The emitted witness is `p = (2q - 1/2)/4`, half of the
/// supremum of admissible `p`.
pub fn validate_schedule(s: &Schedule) -> ScheduleReport {
    let fail = |v| ScheduleReport {
        valid: false,
        violation: Some(v),
        p_witness: None,
    };
    if !(s.c.is_finite() && s.q.is_finite() && s.c > 0.0 && s.q > 0.0) {
        return fail(ScheduleViolation::NotPositiveDecreasing);
    }
    if s.q > 1.0 {
        return fail(ScheduleViolation::IntegralFinite);
    }
    if s.q <= 0.5 {
        return fail(ScheduleViolation::SquareIntegralDiverges);
    }
    // monotone with α_∞ = 0: ∫|α'| = c, always finite here
    let p_sup = (2.0 * s.q - 0.5) / 2.0;
    if p_sup <= 0.0 {
        return fail(ScheduleViolation::NoRateWitness);
    }
    ScheduleReport {
        valid: true,
        violation: None,
        p_witness: Some(p_sup / 2.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn harmonic_schedule_is_valid() {
        let r = validate_schedule(&Schedule::new(1.0, 1.0));
        assert!(r.valid);
        assert_eq!(r.p_witness, Some(0.375));
    }

    #[test]
    fn slow_decay_rejected() {
        let r = validate_schedule(&Schedule::new(1.0, 0.4));
        assert!(!r.valid);
        assert_eq!(r.violation, Some(ScheduleViolation::SquareIntegralDiverges));
        assert_eq!(r.violation.unwrap().message(), "schedule: ∫α² diverges");
    }

    #[test]
    fn interior_exponent_valid() {
        assert!(validate_schedule(&Schedule::new(1.0, 0.75)).valid);
    }

    #[test]
    fn boundary_exponents() {
        assert!(!validate_schedule(&Schedule::new(1.0, 0.5)).valid);
        assert!(validate_schedule(&Schedule::new(1.0, 1.0)).valid);
        assert_eq!(
            validate_schedule(&Schedule::new(1.0, 1.2)).violation,
            Some(ScheduleViolation::IntegralFinite)
        );
        assert!(!validate_schedule(&Schedule::new(0.0, 1.0)).valid);
    }

    #[test]
    fn closed_form_integral() {
        let s = Schedule::new(2.0, 1.0);
        assert!((s.integral(0.0, 1.0) - 2.0 * 2f64.ln()).abs() < 1e-14);
        let s = Schedule::new(1.0, 0.75);
        // ∫_0^15 (1+t)^{-3/4} dt = 4 (16^{1/4} - 1) = 4
        assert!((s.integral(0.0, 15.0) - 4.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn witness_certifies_rate(q in 0.5001f64..=1.0, c in 0.01f64..10.0) {
            let r = validate_schedule(&Schedule::new(c, q));
            let p = r.p_witness.unwrap();
            prop_assert!(p > 0.0);
            // exponent of t in α² t^{1/2+2p} must be negative
            prop_assert!(-2.0 * q + 0.5 + 2.0 * p < 0.0);
        }

        #[test]
        fn alpha_positive_decreasing(q in 0.01f64..1.5, c in 0.01f64..10.0, t in 0.0f64..1e4) {
            let s = Schedule::new(c, q);
            prop_assert!(s.alpha(t) > 0.0);
            prop_assert!(s.alpha(t + 1.0) < s.alpha(t));
        }
    }
}
