//! Acceptance criteria. Every test prints one `PASS`/`FAIL` line and then
//! asserts the criterion at its stated tolerance.

use std::io::Write;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use statflow::algorithm::EnsembleResult;
use statflow::diagnostics::run_dir::{final_three_non_increasing, fluctuation_decay};
use statflow::diagnostics::{
    decay_rate_fit, estimate_poisson_solution, growth_fit, moment_tracker, DecayMode, DecayOptions,
    MomentOptions, PoissonOptions, PoissonVariant,
};
use statflow::model::{check_dissipativity, DEFAULT_DISSIPATIVITY_FACTOR};
use statflow::oracle::{
    gradient_fd, gradient_frozen_sensitivity, stationary_expectation, OracleValues,
};
use statflow::schedule::validate_schedule;
use statflow::{
    frozen_gradient_average, make_ou_model, make_tanh_model, run_ensemble, Matrix, ObjectiveSpec,
    OracleBudget, RunConfig, Schedule, SdeModel, TestFunction, Vector,
};

fn report(n: u32, passed: bool, text: &str) {
    let tag = if passed { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n:>2}: {tag}  {text}");
}

fn ou() -> Arc<dyn SdeModel> {
    Arc::new(make_ou_model(1.0, 0.5, 1).unwrap())
}

fn tanh() -> Arc<dyn SdeModel> {
    Arc::new(make_tanh_model(1.0, 0.5, 0.5, 0.1, 1).unwrap())
}

fn x0() -> TestFunction {
    TestFunction::coordinate(1, 0)
}

fn first(x: &Vector) -> f64 {
    x[0]
}

/// `β = Ê_{π_θ*} x` at `θ* = 0.3` for the tanh model.
fn tanh_beta() -> f64 {
    static BETA: OnceLock<f64> = OnceLock::new();
    *BETA.get_or_init(|| {
        stationary_expectation(
            tanh().as_ref(),
            &Vector::from_element(1, 0.3),
            &first,
            &OracleBudget::terminal(),
            7,
        )
        .unwrap()
        .value
    })
}

/// The OU acceptance ensemble: 20 seeds, T = 1000, with oracle checkpoints
/// every 100 time units and fluctuation samples at every record.
fn ou_ensemble() -> &'static EnsembleResult {
    static RESULT: OnceLock<EnsembleResult> = OnceLock::new();
    RESULT.get_or_init(|| {
        let mut c = RunConfig::new(
            ou(),
            ObjectiveSpec::new(x0(), 1.0),
            Schedule::new(1.0, 1.0),
            Vector::zeros(1),
            1000.0,
        );
        c.checkpoint_every = c.steps_for(100.0);
        c.fluctuations = true;
        run_ensemble(&c, 20).unwrap()
    })
}

#[test]
fn criterion_01_ou_convergence() {
    let start = Instant::now();
    let r = ou_ensemble();
    assert_eq!(r.summary.n_diverged, 0);
    let logs: Vec<_> = r.logs().collect();
    let theta_ok = logs
        .iter()
        .filter(|l| (l.summary.theta_final[0] - 1.0).abs() < 0.1)
        .count();
    let grad_ok = logs
        .iter()
        .filter(|l| l.summary.grad_j_hat_norm_final.unwrap() < 0.1)
        .count();
    let passed = theta_ok >= 18 && grad_ok >= 18;
    report(
        1,
        passed,
        &format!(
            "OU: |θ_T - 1| < 0.1 in {theta_ok}/20, oracle |∇J| < 0.1 in {grad_ok}/20 (need 18), {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_02_tanh_convergence() {
    let start = Instant::now();
    let beta = tanh_beta();
    let c = RunConfig::new(
        tanh(),
        ObjectiveSpec::new(x0(), beta),
        Schedule::new(1.0, 1.0),
        Vector::from_element(1, -0.5),
        2000.0,
    );
    let r = run_ensemble(&c, 20).unwrap();
    let norms: Vec<f64> = r
        .logs()
        .map(|l| l.summary.grad_j_hat_norm_final.unwrap())
        .collect();
    let ok = norms.iter().filter(|n| **n < 0.15).count();
    let passed = ok >= 16 && r.summary.n_diverged == 0;
    report(
        2,
        passed,
        &format!(
            "tanh: oracle |∇J(θ_T)| < 0.15 in {ok}/20 (need 16), β = {beta:.4}, median θ_T = {:.3}, {:.0}s",
            statflow::stats::median(
                &r.summary.terminal_thetas.iter().map(|t| t[0]).collect::<Vec<_>>()
            ),
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_03_gradient_estimator_consistency() {
    let start = Instant::now();
    // OU at θ = 1.5, β = 1: ∇J = 2(θ - β) = 1
    let g = frozen_gradient_average(
        ou().as_ref(),
        &ObjectiveSpec::new(x0(), 1.0),
        &Vector::from_element(1, 1.5),
        0.01,
        2000.0,
        0.0,
        3,
        0,
    )
    .unwrap()[0];
    let ou_ok = (g - 1.0).abs() < 0.1;

    let model = tanh();
    let obj = ObjectiveSpec::new(x0(), tanh_beta());
    let budget = OracleBudget::terminal();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut agree = 0;
    let mut worst = 0.0f64;
    for i in 0..5 {
        let theta = Vector::from_element(1, rng.random_range(-1.0..1.0));
        let fd = gradient_fd(model.as_ref(), &obj, &theta, 1e-2, &budget, 100 + i).unwrap();
        let sens = gradient_frozen_sensitivity(model.as_ref(), &obj, &theta, &budget, 100 + i)
            .unwrap()
            .gradient;
        let gap = (fd.value[0] - sens.value[0]).abs();
        let joint = fd.ci_half_width[0] + sens.ci_half_width[0];
        worst = worst.max(gap / joint);
        if gap <= joint {
            agree += 1;
        }
    }
    let passed = ou_ok && agree == 5;
    report(
        3,
        passed,
        &format!(
            "OU time-average G = {g:.4} (target 1.0 ± 0.1); tanh FD vs sensitivity agree at {agree}/5 θ \
             (worst gap/joint CI = {worst:.2}), {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_04_contraction_rate() {
    let start = Instant::now();
    let opts = DecayOptions {
        t_end: 10.0,
        n_replicas: 200,
        seed: 4,
        ..Default::default()
    };
    let x1 = Vector::from_element(1, 2.0);
    let x2 = Vector::from_element(1, -2.0);
    let ou_model = ou();
    let b_ou = check_dissipativity(
        ou_model.as_ref(),
        10_000,
        5.0,
        DEFAULT_DISSIPATIVITY_FACTOR,
        0,
    );
    let f_ou = decay_rate_fit(
        ou_model.as_ref(),
        &Vector::zeros(1),
        &x1,
        &x2,
        &first,
        &DecayMode::Contraction {
            beta_hat: b_ou.beta_hat,
        },
        &opts,
    )
    .unwrap();
    let ou_ok = (f_ou.rate + 2.0).abs() <= 0.15 * 2.0 && f_ou.r_squared > 0.99;

    let tanh_model = tanh();
    let b = check_dissipativity(
        tanh_model.as_ref(),
        10_000,
        5.0,
        DEFAULT_DISSIPATIVITY_FACTOR,
        0,
    );
    let f_t = decay_rate_fit(
        tanh_model.as_ref(),
        &Vector::from_element(1, 0.3),
        &x1,
        &x2,
        &first,
        &DecayMode::Contraction {
            beta_hat: b.beta_hat,
        },
        &opts,
    )
    .unwrap();
    let tanh_ok = b.holds && f_t.rate <= -b.beta_hat + 0.3;
    let passed = ou_ok && tanh_ok;
    report(
        4,
        passed,
        &format!(
            "OU rate {:.4} (target -2 ± 0.3), R² = {:.5}; tanh rate {:.4} ≤ -β̂ + 0.3 = {:.4}, {:.1}s",
            f_ou.rate,
            f_ou.r_squared,
            f_t.rate,
            -b.beta_hat + 0.3,
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_05_ergodic_decay() {
    let model = ou();
    let theta = 0.0;
    let fit = decay_rate_fit(
        model.as_ref(),
        &Vector::from_element(1, theta),
        &Vector::from_element(1, 3.0),
        &Vector::zeros(1),
        &first,
        &DecayMode::Ergodic {
            reference: theta,
            beta_hat: 1.0,
        },
        &DecayOptions {
            n_replicas: 1000,
            seed: 5,
            ..Default::default()
        },
    )
    .unwrap();
    let passed = (fit.rate + 1.0).abs() <= 0.2;
    report(
        5,
        passed,
        &format!(
            "OU |E X_t - θ| from x = 3: rate {:.4} (target -1 ± 0.2) over t ∈ [{:.1}, {:.1}], R² = {:.4}",
            fit.rate, fit.window.0, fit.window.1, fit.r_squared
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_06_moment_growth() {
    let start = Instant::now();
    let opts = MomentOptions {
        t_end: 1e4,
        n_replicas: 200,
        seed: 6,
        ..Default::default()
    };
    let mut lines = Vec::new();
    let mut passed = true;
    for (name, model, theta) in [("OU", ou(), 1.0), ("tanh", tanh(), 0.3)] {
        let r = moment_tracker(model.as_ref(), &Vector::from_element(1, theta), &opts).unwrap();
        let exp = r.sup4_exponent.unwrap();
        passed &= r.plateaus() && exp <= 0.65;
        lines.push(format!(
            "{name}: E|X|⁸ terminal/midpoint = {:.3}, sup|X|⁴ exponent = {exp:.3}",
            r.ratio[2]
        ));
    }
    report(
        6,
        passed,
        &format!(
            "{} (need ratio ∈ [0.5, 2], exponent ≤ 0.65), {:.0}s",
            lines.join("; "),
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_07_schedule_validator() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for _ in 0..1000 {
        // (0, 10] × (0, 1.5]
        let c = 10.0 - rng.random_range(0.0..10.0);
        let q = 1.5 - rng.random_range(0.0..1.5);
        let analytic = q > 0.5 && q <= 1.0;
        if validate_schedule(&Schedule::new(c, q)).valid != analytic {
            mismatches += 1;
        }
    }
    // boundary points of the characterization
    for (q, expect) in [
        (0.5, false),
        (1.0, true),
        (1.0 + 1e-12, false),
        (0.5 + 1e-12, true),
    ] {
        if validate_schedule(&Schedule::new(1.0, q)).valid != expect {
            mismatches += 1;
        }
    }
    let passed = mismatches == 0;
    report(
        7,
        passed,
        &format!("schedule validity vs q ∈ (1/2, 1]: {mismatches} mismatches over 1000 random + 4 boundary cases"),
    );
    assert!(passed);
}

#[test]
fn criterion_08_poisson_growth_bounds() {
    let start = Instant::now();
    let model = ou();
    let theta = Vector::from_element(1, 1.5);
    let obj = ObjectiveSpec::new(x0(), 1.0);
    // closed-form OU oracle: E_π x = θ, ∂_θ E_π x = 1
    let oracle = OracleValues {
        theta: vec![1.5],
        mean_f: 1.5,
        grad_mean_f: vec![1.0],
    };
    let opts = PoissonOptions {
        n_replicas: 1000,
        seed: 8,
        ..Default::default()
    };
    let x = Vector::zeros(1);
    let sweep = [0.0, 1.0, 2.0, 4.0];
    let (mut v1, mut b1, mut v2, mut b2) = (vec![], vec![], vec![], vec![]);
    let mut tails_ok = true;
    let mut worst_tail = 0.0f64;
    for s in sweep {
        let xt = Matrix::from_element(1, 1, s);
        let e = estimate_poisson_solution(
            model.as_ref(),
            &obj,
            &oracle,
            &theta,
            &x,
            &xt,
            None,
            PoissonVariant::V1,
            &opts,
        )
        .unwrap();
        tails_ok &= e.tail_ok;
        if e.norm() > 0.0 {
            worst_tail = worst_tail.max(e.tail_bound / e.norm());
        }
        v1.push(e.norm());
        b1.push(1.0 + x.norm() + s);
    }
    let xt = Matrix::zeros(1, 1);
    for s in sweep {
        let xb = Vector::from_element(1, s);
        let e = estimate_poisson_solution(
            model.as_ref(),
            &obj,
            &oracle,
            &theta,
            &x,
            &xt,
            Some(&xb),
            PoissonVariant::V2,
            &opts,
        )
        .unwrap();
        tails_ok &= e.tail_ok;
        worst_tail = worst_tail.max(e.tail_bound / e.norm());
        v2.push(e.norm());
        b2.push((1.0 + s) * (1.0 + xt.norm()));
    }
    let g1 = growth_fit(&v1, &b1);
    let g2 = growth_fit(&v2, &b2);
    let passed = g1.holds && g2.holds && tails_ok;
    report(
        8,
        passed,
        &format!(
            "v̂¹ over x̃ ∈ {{0,1,2,4}}: C = {:.3} ratios {:.3?}; v̂² over x̄ ∈ {{0,1,2,4}}: C = {:.3} ratios {:.3?}; \
             worst tail/|v̂| = {worst_tail:.2e}, {:.0}s",
            g1.c,
            g1.ratios,
            g2.c,
            g2.ratios,
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_09_fluctuation_decay() {
    let r = ou_ensemble();
    let logs: Vec<_> = r.logs().cloned().collect();
    let (windows, _, medians) = fluctuation_decay(&logs).unwrap();
    let tail: Vec<String> = windows
        .iter()
        .zip(&medians)
        .rev()
        .take(3)
        .rev()
        .map(|(w, m)| format!("[{}, {}]: {m:.4}", w.0, w.1))
        .collect();
    let passed = final_three_non_increasing(&medians);
    report(
        9,
        passed,
        &format!(
            "median max(|Δ¹|, |Δ²|) on final dyadic windows {}",
            tail.join(", ")
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("det.toml");
    std::fs::write(
        &cfg,
        "[model]\nkind = \"tanh\"\na = 1.0\nc = 0.5\ns0 = 0.5\ns1 = 0.1\n\n\
         [objective]\nbeta_target = 0.3\n\n[run]\nt_end = 200.0\nseeds = 2\n\
         checkpoint_every = 50.0\n\n[oracle]\nterminal_t = 100.0\ncheckpoint_t = 50.0\n\n\
         [diagnostics]\nfluctuations = true\n",
    )
    .unwrap();
    let run = |out: &str| {
        let out = dir.path().join(out);
        let code = statflow::cli::main_with_args([
            "statflow",
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        out
    };
    let (a, b) = (run("a"), run("b"));
    let mut identical = true;
    for seed in ["seed_0", "seed_1"] {
        for file in ["trajectory.csv", "checkpoints.csv", "fluctuations.csv"] {
            let fa = std::fs::read(a.join(seed).join(file)).unwrap();
            let fb = std::fs::read(b.join(seed).join(file)).unwrap();
            identical &= fa == fb && !fa.is_empty();
        }
    }
    let ma: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let mb: serde_json::Value =
        serde_json::from_slice(&std::fs::read(b.join("manifest.json")).unwrap()).unwrap();
    identical &= ma["config_hash"] == mb["config_hash"];
    report(
        10,
        identical,
        "two runs from the same config and seeds give byte-identical trajectory, checkpoint and fluctuation CSVs",
    );
    assert!(identical);
}
