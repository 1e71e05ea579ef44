//! Decomposition of the online gradient into the true gradient and two
//! fluctuation terms, and their integrals over dyadic windows.
//!
//! ```text
//! cargo run --release --example fluctuation_diagnostics -- [seeds]
//! ```

use std::sync::Arc;

use statflow::diagnostics::run_dir::fluctuation_decay;
use statflow::{
    make_ou_model, run_ensemble, ObjectiveSpec, RunConfig, Schedule, TestFunction, Vector,
};

fn main() {
    let seeds: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(4);
    let model = Arc::new(make_ou_model(1.0, 0.5, 1).unwrap());
    let objective = ObjectiveSpec::new(TestFunction::coordinate(1, 0), 1.0);
    let mut config = RunConfig::new(
        model,
        objective,
        Schedule::new(1.0, 1.0),
        Vector::zeros(1),
        1024.0,
    );
    config.checkpoint_every = config.steps_for(64.0);
    config.fluctuations = true;
    config.terminal.enabled = false;

    let result = run_ensemble(&config, seeds).unwrap();
    let logs: Vec<_> = result.logs().cloned().collect();
    let worst = logs
        .iter()
        .flat_map(|l| &l.fluctuations)
        .map(|s| s.reconstruction_residual())
        .fold(0.0, f64::max);
    println!("max |G - grad J - 2 Z1 - 2 Z2| = {worst:.2e}");

    let (windows, _, medians) = fluctuation_decay(&logs).unwrap();
    for ((a, b), m) in windows.iter().zip(&medians) {
        println!("[{a:>4}, {b:>4}]  median max(|D1|, |D2|) = {m:.4}");
    }
}
