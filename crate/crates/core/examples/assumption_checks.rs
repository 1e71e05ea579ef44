//! Sampled checks of the structural assumptions on a model and a schedule.
//!
//! Prints the dissipativity rate, the Lipschitz constants on the sampling
//! ball, the Jacobian consistency error and the schedule verdict. The second
//! tanh model has too much positive feedback and is rejected by its
//! constructor; it is checked here through `new_unchecked`.
//!
//! ```text
//! cargo run --release --example assumption_checks
//! ```

use statflow::model::{
    check_dissipativity, check_lipschitz_and_growth, jacobian_consistency, TanhModel,
    DEFAULT_DISSIPATIVITY_FACTOR,
};
use statflow::schedule::validate_schedule;
use statflow::{make_ou_model, make_tanh_model, Schedule, SdeModel};

fn report(model: &dyn SdeModel) {
    let diss = check_dissipativity(model, 10_000, 5.0, DEFAULT_DISSIPATIVITY_FACTOR, 0);
    let lip = check_lipschitz_and_growth(model, 10_000, 5.0, 0);
    let jac = jacobian_consistency(model, 200, 5.0, None, 0);
    println!("{}", model.name());
    println!(
        "  dissipative: {} (beta_hat = {:.4})",
        diss.holds, diss.beta_hat
    );
    if let Some(w) = diss.witness.as_ref().filter(|_| !diss.holds) {
        println!(
            "  violated at x1 = {:?}, x2 = {:?}, theta = {:?}",
            w.x1, w.x2, w.theta
        );
    }
    println!(
        "  Lipschitz: drift {:.3}, diffusion {:.3}, origin bound {:.3}",
        lip.drift_constant, lip.diffusion_constant, lip.origin_bound
    );
    println!("  Jacobians: worst relative error {:.2e}", jac.beta_hat);
}

fn main() {
    report(&make_ou_model(1.0, 0.5, 2).unwrap());
    report(&make_tanh_model(1.0, 0.5, 0.5, 0.1, 1).unwrap());
    report(&TanhModel::new_unchecked(1.0, 2.0, 0.5, 0.1, 1));

    for q in [0.4, 0.5, 0.75, 1.0, 1.2] {
        let r = validate_schedule(&Schedule::new(1.0, q));
        match r.violation {
            None => println!("q = {q}: valid, p = {:.3}", r.p_witness.unwrap_or(f64::NAN)),
            Some(v) => println!("q = {q}: {}", v.message()),
        }
    }
}
