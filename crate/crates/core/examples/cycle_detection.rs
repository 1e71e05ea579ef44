//! Cycles of large gradient norm along an optimizer run.
//!
//! A cycle opens when the checkpoint gradient norm crosses `κ` and closes when
//! the norm leaves `[g/2, 2g]` or the learning-rate budget `μ` is spent.
//!
//! ```text
//! cargo run --release --example cycle_detection -- [kappa] [mu]
//! ```

use std::sync::Arc;

use statflow::diagnostics::detect_cycles;
use statflow::{
    make_ou_model, run_forward_prop, ObjectiveSpec, OracleBudget, RunConfig, Schedule,
    TestFunction, Vector,
};

fn main() {
    let mut args = std::env::args().skip(1);
    let kappa: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let mu: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1.0);

    let model = Arc::new(make_ou_model(1.0, 0.5, 1).unwrap());
    let objective = ObjectiveSpec::new(TestFunction::coordinate(1, 0), 1.0);
    let mut config = RunConfig::new(
        model,
        objective,
        Schedule::new(1.0, 1.0),
        Vector::from_element(1, -2.0),
        500.0,
    );
    config.log_every = config.steps_for(0.1);
    config.checkpoint_every = config.steps_for(2.0);
    config.checkpoint_budget = OracleBudget::default().with_t(100.0).with_replicas(4);
    config.terminal.enabled = false;

    let log = run_forward_prop(&config).unwrap();
    let cycles = detect_cycles(&log, kappa, mu);
    println!(" n     tau      sigma    |grad J|(tau)  int alpha  exit");
    for c in &cycles {
        println!(
            "{:>2}  {:7.2}  {:8.2}  {:12.4}  {:9.4}  {:?}",
            c.n, c.tau, c.sigma, c.grad_at_tau, c.alpha_integral, c.exit
        );
    }
    if cycles.is_empty() {
        println!("no cycles above kappa = {kappa}");
    }
}
