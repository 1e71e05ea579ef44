//! Frozen-parameter oracles for the objective and its gradient.
//!
//! For OU with `f(x) = x` the objective is `(θ - β)²`, so both gradient
//! oracles can be compared with `2(θ - β)`. The single-path time average of
//! the online estimator `G` at `α = 0` is shown alongside.
//!
//! ```text
//! cargo run --release --example frozen_oracles
//! ```

use statflow::oracle::{gradient_fd, gradient_frozen_sensitivity, objective_value};
use statflow::{
    frozen_gradient_average, make_ou_model, ObjectiveSpec, OracleBudget, TestFunction, Vector,
};

fn main() {
    let model = make_ou_model(1.0, 0.5, 1).unwrap();
    let objective = ObjectiveSpec::new(TestFunction::coordinate(1, 0), 1.0);
    let budget = OracleBudget::default().with_t(500.0).with_replicas(16);

    println!("theta      J          fd         sensitivity  time-average  exact");
    for theta in [-0.5, 0.5, 1.0, 1.5, 2.5] {
        let th = Vector::from_element(1, theta);
        let j = objective_value(&model, &objective, &th, &budget, 1).unwrap();
        let fd = gradient_fd(&model, &objective, &th, 1e-2, &budget, 1).unwrap();
        let sens = gradient_frozen_sensitivity(&model, &objective, &th, &budget, 1).unwrap();
        let avg =
            frozen_gradient_average(&model, &objective, &th, 0.01, 1000.0, 0.0, 1, 0).unwrap();
        println!(
            "{theta:+.2}  {:8.4}   {:+8.4}   {:+8.4}     {:+8.4}      {:+.4}",
            j.value,
            fd.value[0],
            sens.gradient.value[0],
            avg[0],
            2.0 * (theta - 1.0)
        );
    }
}
