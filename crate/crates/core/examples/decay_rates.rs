//! Exponential decay rates of the frozen dynamics.
//!
//! Contraction of `E|X^{x₁} - X^{x₂}|²` under shared noise, ergodic decay of
//! `|E f(X_t) - E_π f|` and decay of the derivative processes.
//!
//! ```text
//! cargo run --release --example decay_rates
//! ```

use statflow::diagnostics::{decay_rate_fit, DecayMode, DecayOptions};
use statflow::model::{check_dissipativity, DEFAULT_DISSIPATIVITY_FACTOR};
use statflow::{make_ou_model, make_tanh_model, SdeModel, Vector};

fn main() {
    let ou = make_ou_model(1.0, 0.5, 1).unwrap();
    let tanh = make_tanh_model(1.0, 0.5, 0.5, 0.1, 1).unwrap();
    let f = |x: &Vector| x[0];
    let s = |v: f64| Vector::from_element(1, v);
    let opts = DecayOptions::default();

    for (model, theta) in [(&ou as &dyn SdeModel, 0.0), (&tanh, 0.3)] {
        let beta_hat =
            check_dissipativity(model, 10_000, 5.0, DEFAULT_DISSIPATIVITY_FACTOR, 0).beta_hat;
        println!("{} (beta_hat = {beta_hat:.4})", model.name());
        let modes = [
            (
                "contraction",
                s(2.0),
                s(-2.0),
                DecayMode::Contraction { beta_hat },
            ),
            (
                "derivative in x",
                s(1.0),
                s(1.0),
                DecayMode::DerivativeX { h: 1e-4 },
            ),
        ];
        for (name, x1, x2, mode) in modes {
            match decay_rate_fit(model, &s(theta), &x1, &x2, &f, &mode, &opts) {
                Ok(fit) => println!(
                    "  {name:<16} rate {:+.4} over [{:.2}, {:.2}], R^2 {:.4}, passed {}",
                    fit.rate, fit.window.0, fit.window.1, fit.r_squared, fit.passed
                ),
                Err(e) => println!("  {name:<16} {e}"),
            }
        }
    }

    let fit = decay_rate_fit(
        &ou,
        &s(0.0),
        &s(3.0),
        &s(0.0),
        &f,
        &DecayMode::Ergodic {
            reference: 0.0,
            beta_hat: 1.0,
        },
        &DecayOptions {
            n_replicas: 1000,
            ..opts
        },
    )
    .unwrap();
    println!(
        "OU ergodic decay from x = 3: rate {:+.4} (exact -1)",
        fit.rate
    );
}
