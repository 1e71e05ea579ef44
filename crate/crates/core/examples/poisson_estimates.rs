//! Truncated Monte Carlo solutions of the Poisson equations behind the
//! fluctuation terms, with their growth in the initial condition.
//!
//! For OU at `a = 1`, `θ = 1.5`, `β = 1` the solutions are
//! `v¹ = -(θ - β)(x̃ - 1)` and `v² = -(x̄ - θ)(1 + (x̃ - 1)/2)`.
//!
//! ```text
//! cargo run --release --example poisson_estimates
//! ```

use statflow::diagnostics::{
    estimate_poisson_solution, growth_fit, PoissonOptions, PoissonVariant,
};
use statflow::oracle::OracleValues;
use statflow::{make_ou_model, Matrix, ObjectiveSpec, TestFunction, Vector};

fn main() {
    let model = make_ou_model(1.0, 0.5, 1).unwrap();
    let objective = ObjectiveSpec::new(TestFunction::coordinate(1, 0), 1.0);
    let oracle = OracleValues {
        theta: vec![1.5],
        mean_f: 1.5,
        grad_mean_f: vec![1.0],
    };
    let theta = Vector::from_element(1, 1.5);
    let x = Vector::zeros(1);
    let opts = PoissonOptions::default();

    let sweep = [0.0, 1.0, 2.0, 4.0];
    let mut norms = Vec::new();
    for xt in sweep {
        let e = estimate_poisson_solution(
            &model,
            &objective,
            &oracle,
            &theta,
            &x,
            &Matrix::from_element(1, 1, xt),
            None,
            PoissonVariant::V1,
            &opts,
        )
        .unwrap();
        println!(
            "v1(x~ = {xt}) = {:+.4}  exact {:+.4}  T = {:.0}  tail {:.1e}",
            e.v_hat[0],
            -0.5 * (xt - 1.0),
            e.truncation_t,
            e.tail_bound
        );
        norms.push(e.norm());
    }
    let bounds: Vec<f64> = sweep.iter().map(|s| 1.0 + s).collect();
    let g = growth_fit(&norms, &bounds);
    println!(
        "v1 growth constant C = {:.3}, bound holds: {}",
        g.c, g.holds
    );

    for xb in sweep {
        let e = estimate_poisson_solution(
            &model,
            &objective,
            &oracle,
            &theta,
            &x,
            &Matrix::zeros(1, 1),
            Some(&Vector::from_element(1, xb)),
            PoissonVariant::V2,
            &opts,
        )
        .unwrap();
        println!(
            "v2(x- = {xb}) = {:+.4}  exact {:+.4}",
            e.v_hat[0],
            -0.5 * (xb - 1.5)
        );
    }
}
