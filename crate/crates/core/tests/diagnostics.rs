use std::sync::Arc;

use statflow::diagnostics::cycles::CycleExit;
use statflow::diagnostics::{
    decay_rate_fit, detect_cycles, estimate_poisson_solution, DecayMode, DecayOptions,
    PoissonOptions, PoissonVariant,
};
use statflow::model::check_dissipativity;
use statflow::oracle::OracleValues;
use statflow::{
    make_ou_model, make_tanh_model, run_forward_prop, Matrix, ObjectiveSpec, OracleBudget,
    RunConfig, Schedule, TestFunction, Vector,
};

fn scalar(v: f64) -> Vector {
    Vector::from_element(1, v)
}

fn ou_oracle() -> OracleValues {
    OracleValues {
        theta: vec![1.5],
        mean_f: 1.5,
        grad_mean_f: vec![1.0],
    }
}

#[test]
fn ou_poisson_estimates_follow_the_closed_forms() {
    // a = 1, θ = 1.5, β = 1:
    //   v¹ = -(θ - β)(x̃ - 1)
    //   v² = -(x̄ - θ)(1 + (x̃ - 1)/2)
    let model = make_ou_model(1.0, 0.5, 1).unwrap();
    let obj = ObjectiveSpec::new(TestFunction::coordinate(1, 0), 1.0);
    let opts = PoissonOptions {
        n_replicas: 1000,
        seed: 3,
        ..Default::default()
    };
    let theta = scalar(1.5);
    let x = Vector::zeros(1);
    let v1 = |xt: f64| {
        estimate_poisson_solution(
            &model,
            &obj,
            &ou_oracle(),
            &theta,
            &x,
            &Matrix::from_element(1, 1, xt),
            None,
            PoissonVariant::V1,
            &opts,
        )
        .unwrap()
    };
    let mut values = Vec::new();
    for xt in [0.0, 2.0, 4.0] {
        let e = v1(xt);
        let exact = -0.5 * (xt - 1.0);
        assert!(
            (e.v_hat[0] - exact).abs() <= 0.05 + e.tail_bound,
            "x̃ = {xt}: {e:?}"
        );
        values.push(e.v_hat[0]);
    }
    let bend = values[1] - 0.5 * (values[0] + values[2]);
    assert!(bend.abs() < 0.05, "v̂¹ not linear in x̃: {values:?}");

    for (xb, xt) in [(0.0, 0.0), (4.0, 0.0), (4.0, 3.0)] {
        let e = estimate_poisson_solution(
            &model,
            &obj,
            &ou_oracle(),
            &theta,
            &x,
            &Matrix::from_element(1, 1, xt),
            Some(&scalar(xb)),
            PoissonVariant::V2,
            &opts,
        )
        .unwrap();
        let exact = -(xb - 1.5) * (1.0 + 0.5 * (xt - 1.0));
        assert!(
            (e.v_hat[0] - exact).abs() <= 0.05 * exact.abs().max(1.0) + e.tail_bound,
            "x̄ = {xb}, x̃ = {xt}: {e:?} vs {exact}"
        );
    }
}

#[test]
fn cycles_from_a_run_are_consistent() {
    let schedule = Schedule::new(1.0, 1.0);
    let mut c = RunConfig::new(
        Arc::new(make_ou_model(1.0, 0.5, 1).unwrap()),
        ObjectiveSpec::new(TestFunction::coordinate(1, 0), 1.0),
        schedule,
        scalar(-1.0),
        400.0,
    );
    c.log_every = c.steps_for(0.02);
    c.checkpoint_every = c.steps_for(5.0);
    c.checkpoint_budget = OracleBudget::default().with_t(50.0).with_replicas(4);
    c.terminal.enabled = false;
    let log = run_forward_prop(&c).unwrap();
    let (kappa, mu) = (0.1, 1.0);
    let cycles = detect_cycles(&log, kappa, mu);
    assert!(!cycles.is_empty(), "starting at |∇J| = 4 must open a cycle");
    let mut last_end = f64::NEG_INFINITY;
    for (i, cy) in cycles.iter().enumerate() {
        assert_eq!(cy.n, i + 1);
        assert!(cy.tau >= last_end && cy.sigma > cy.tau, "{cy:?}");
        assert!(cy.grad_at_tau >= kappa);
        assert!(cy.alpha_integral <= mu + 1e-12, "{cy:?}");
        let exact = schedule.integral(cy.tau, cy.sigma);
        assert!(
            (cy.alpha_integral - exact).abs() <= 1e-3 * exact.max(1e-3),
            "{cy:?} vs {exact}"
        );
        if cy.exit == CycleExit::Budget {
            assert!(mu - cy.alpha_integral < 1e-3, "{cy:?}");
        }
        last_end = cy.sigma;
    }
}

#[test]
fn tanh_contraction_dominates_the_dissipativity_rate() {
    let model = make_tanh_model(1.0, 0.5, 0.5, 0.1, 1).unwrap();
    let beta_hat = check_dissipativity(&model, 10_000, 5.0, 3.5, 0).beta_hat;
    let opts = DecayOptions {
        n_replicas: 100,
        seed: 12,
        ..Default::default()
    };
    for (theta, x1, x2) in [(-1.0, 2.0, -2.0), (0.3, 3.0, 0.0), (1.0, -1.0, 1.5)] {
        let fit = decay_rate_fit(
            &model,
            &scalar(theta),
            &scalar(x1),
            &scalar(x2),
            &|x: &Vector| x[0],
            &DecayMode::Contraction { beta_hat },
            &opts,
        )
        .unwrap();
        assert!(fit.passed, "θ = {theta}, ({x1}, {x2}): {fit:?}");
        assert!(fit.rate <= -beta_hat + 0.3);
    }
}
