//! Online optimization of an Ornstein-Uhlenbeck drift target.
//!
//! `dX = a(θ - X)dt + σ dW` with `f(x) = x` and `β = 1`, so the stationary
//! mean is `θ` and the minimizer is `θ* = 1`.
//!
//! ```text
//! cargo run --release --example ou_convergence -- [seeds]
//! ```

use std::sync::Arc;
use std::time::Instant;

use statflow::{
    make_ou_model, run_ensemble, ObjectiveSpec, RunConfig, Schedule, TestFunction, Vector,
};

fn main() {
    let seeds: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(4);
    let model = Arc::new(make_ou_model(1.0, 0.5, 1).expect("valid parameters"));
    let objective = ObjectiveSpec::new(TestFunction::coordinate(1, 0), 1.0);
    let mut config = RunConfig::new(
        model,
        objective,
        Schedule::new(1.0, 1.0),
        Vector::zeros(1),
        1000.0,
    );
    config.checkpoint_every = config.steps_for(100.0);
    config.fluctuations = true;

    let start = Instant::now();
    let result = run_ensemble(&config, seeds).expect("valid config");
    for log in result.logs() {
        let s = &log.summary;
        println!(
            "seed {:>3}  theta_T = {:.4}  |grad J| = {:.4}",
            s.seed,
            s.theta_final[0],
            s.grad_j_hat_norm_final.unwrap_or(f64::NAN)
        );
    }
    let agg = &result.summary;
    println!(
        "median |grad J| = {:.4}, success fraction = {:.2}, {:.1}s",
        agg.median_grad_norm.unwrap_or(f64::NAN),
        agg.success_fraction.unwrap_or(0.0),
        start.elapsed().as_secs_f64()
    );
}
