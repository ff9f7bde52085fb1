//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Every tolerance is pinned here; run with `cargo test --test acceptance`
//! (add `-- --nocapture` to see the per-criterion lines).

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use delaylab_core::delay::{build_lift, verify_resolvent_structure, DelayDescriptor, LiftedSystem};
use delaylab_core::matrix::{block_inverse, invert, BlockMatrix2x2, DenseMatrix};
use delaylab_core::population::{
    build_model, simulate, AgePopulationModel, BirthSpec, HarvestSignal, HistoryInit, ModelConfig,
    RateSpec,
};
use delaylab_core::spectral::{
    classify_stability, cross_check, dominant_real_root, sufficient_condition_holds,
    CharacteristicEvaluator, SpectralReport, StabilityClass, CRITICAL_GROWTH_TOL,
};
use delaylab_core::system::{
    random_state_space, verify_perturbation_identities, verify_system_axioms, Grid,
};

fn bisect_oracle(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    assert!(fa * f(b) < 0.0, "oracle bracket must straddle a root");
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let fm = f(mid);
        if fa * fm <= 0.0 {
            b = mid;
        } else {
            a = mid;
            fa = fm;
        }
    }
    0.5 * (a + b)
}

#[test]
fn criterion_1_perturbation_identity_suite() {
    let start = Instant::now();
    let grid = Grid { dt: 1e-3, horizon: 2.0 };
    let reports = verify_perturbation_identities(5, 20, 42, grid).unwrap();
    let worst = reports.iter().map(|r| r.relative_residual).fold(0.0f64, f64::max);
    for r in &reports {
        assert!(
            r.relative_residual <= 1e-6,
            "{} trial {}: residual {}",
            r.identity,
            r.trial,
            r.relative_residual
        );
    }

    let fine = Grid { dt: 5e-4, horizon: 2.0 };
    let reports_fine = verify_perturbation_identities(5, 20, 42, fine).unwrap();
    let worst_fine = reports_fine.iter().map(|r| r.relative_residual).fold(0.0f64, f64::max);
    assert!(
        worst_fine <= 0.5 * worst,
        "halving dt did not halve the worst residual: {worst_fine} vs {worst}"
    );

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() <= 60, "runtime budget exceeded: {elapsed:?}");
    println!(
        "criterion 1: PASS - worst residual {worst:.3e} (<= 1e-6), \
         halved to {worst_fine:.3e} at dt/2, {elapsed:.2?}"
    );
}

#[test]
fn criterion_2_axiom_suite() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let n = 1 + (trial as usize) % 5;
        let sys = random_state_space(&mut rng, n, 1 + (trial as usize) % 2, 1 + (trial as usize) % 3);
        let reports = verify_system_axioms(&sys, 1.0, 1.0, 1e-3, 1, 2000 + trial).unwrap();
        for r in &reports {
            worst = worst.max(r.relative_residual);
            assert!(
                r.relative_residual <= 1e-8,
                "{} trial {trial}: residual {}",
                r.identity,
                r.relative_residual
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() <= 30, "runtime budget exceeded: {elapsed:?}");
    println!("criterion 2: PASS - worst axiom residual {worst:.3e} (<= 1e-8), {elapsed:.2?}");
}

#[test]
fn criterion_3_block_inverse_vs_direct_solve() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for instance in 0..100 {
        let n = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=3);
        let mut rand_mat = |r: usize, c: usize, shift: f64| {
            let mut out = DenseMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..=1.0));
            for i in 0..r.min(c) {
                out[(i, i)] += shift;
            }
            out
        };
        let blocks = BlockMatrix2x2::new(
            rand_mat(n, n, 4.0),
            rand_mat(n, m, 0.0),
            rand_mat(m, n, 0.0),
            rand_mat(m, m, 4.0),
        )
        .unwrap();
        let via_lemma = block_inverse(&blocks).unwrap().assemble();
        let direct = invert(&blocks.assemble()).unwrap();
        let diff = (&via_lemma - &direct).max_abs();
        worst = worst.max(diff);
        assert!(diff <= 1e-9, "instance {instance} ({n}+{m}): diff {diff}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() <= 5, "runtime budget exceeded: {elapsed:?}");
    println!("criterion 3: PASS - worst block-inverse deviation {worst:.3e} (<= 1e-9), {elapsed:.2?}");
}

#[test]
fn criterion_4_delay_spectrum_convergence() {
    let start = Instant::now();
    // w' = w(t-1): the unique real root of l = e^{-l}.
    let root = bisect_oracle(|l| l - (-l).exp(), 0.0, 1.0);
    let descriptor = DelayDescriptor::scalar(0.0, 1.0, 1.0).unwrap();
    let growth_error = |points: usize| -> f64 {
        let lift = build_lift(&descriptor, points).unwrap();
        (delaylab_core::delay::lifted_growth(&lift, 0.1).unwrap() - root).abs()
    };
    let e200 = growth_error(200);
    let e400 = growth_error(400);
    assert!(e200 <= 1e-2, "error at 200 points: {e200}");
    assert!(e400 <= 0.6 * e200, "refinement ratio {}", e400 / e200);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() <= 30, "runtime budget exceeded: {elapsed:?}");
    println!(
        "criterion 4: PASS - lifted growth error {e200:.3e} at 200 points, \
         ratio {:.3} at 400 (<= 0.6), {elapsed:.2?}",
        e400 / e200
    );
}

#[test]
fn criterion_5_resolvent_structure_refinement() {
    let start = Instant::now();
    let scalar = |a0: f64, a1: f64, r: f64| DelayDescriptor::scalar(a0, a1, r).unwrap();
    let matrix2 = |a0: [[f64; 2]; 2], a1: [[f64; 2]; 2], r: f64| {
        DelayDescriptor::new(
            DenseMatrix::from_rows(&[a0[0].to_vec(), a0[1].to_vec()]).unwrap(),
            DenseMatrix::from_rows(&[a1[0].to_vec(), a1[1].to_vec()]).unwrap(),
            None,
            r,
        )
        .unwrap()
    };
    let cases: Vec<(DelayDescriptor, f64)> = vec![
        (scalar(-1.0, 0.3, 1.0), 1.0),
        (scalar(0.0, 0.5, 1.0), 2.0),
        (scalar(-0.5, -0.2, 0.5), 1.5),
        (matrix2([[-1.0, 0.2], [0.0, -0.8]], [[0.3, 0.0], [0.1, 0.2]], 1.0), 1.0),
        (matrix2([[-0.4, 0.5], [-0.3, -1.2]], [[0.2, -0.1], [0.0, 0.3]], 0.5), 2.0),
    ];
    let smooth_rhs = |ls: &LiftedSystem, case: usize| -> Vec<f64> {
        let n = ls.state_dim();
        let mut rhs = vec![0.0; ls.size()];
        for j in 0..=ls.history_points() {
            let theta = -((ls.history_points() - j) as f64) * ls.dt_theta();
            for i in 0..n {
                rhs[j * n + i] =
                    (1.3 * theta + 0.7 * i as f64 + 0.4 * case as f64).cos() + 0.1 * theta;
            }
        }
        rhs
    };
    for (case, (descriptor, lambda)) in cases.iter().enumerate() {
        let res = |points: usize| -> f64 {
            let lift = build_lift(descriptor, points).unwrap();
            verify_resolvent_structure(&lift, *lambda, &smooth_rhs(&lift, case)).unwrap()
        };
        let coarse = res(200);
        let fine = res(400);
        let ratio = fine / coarse;
        assert!(
            (0.4..=0.6).contains(&ratio),
            "case {case}: residual {coarse:.3e} -> {fine:.3e}, ratio {ratio:.3}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() <= 30, "runtime budget exceeded: {elapsed:?}");
    println!("criterion 5: PASS - resolvent residual halves (+/-20%) on 5 cases, {elapsed:.2?}");
}

fn constant_model(
    mu: f64,
    alpha: f64,
    beta2: f64,
    r: f64,
    a_max: f64,
    n_age: usize,
) -> AgePopulationModel {
    build_model(ModelConfig {
        a_max,
        n_age,
        dt: None,
        r,
        mu: RateSpec::Constant(mu),
        alpha: RateSpec::Constant(alpha),
        eta: RateSpec::Constant(0.0),
        birth: BirthSpec::B2Constant(beta2),
        mu_inf: mu,
    })
    .unwrap()
}

fn exp_history(model: &AgePopulationModel) -> HistoryInit {
    HistoryInit::ConstantInTime((0..model.nodes()).map(|j| (-model.age_node(j)).exp()).collect())
}

#[test]
fn criterion_6_constant_coefficient_cross_check() {
    let start = Instant::now();

    // Case A: mu=1, alpha=0, beta=2, r=0 - closed-form root 1.
    let model = constant_model(1.0, 0.0, 2.0, 0.0, 30.0, 3000);
    let report = cross_check(&model, &exp_history(&model), 20.0, 0.5).unwrap();
    let measured = report.measured_growth.unwrap();
    assert!(
        (measured - 1.0).abs() <= 0.05,
        "case A: measured {measured} vs closed-form root 1"
    );

    // Case B: r = 0.5, alpha = 0.5 against the located root of xi2.
    let model = constant_model(1.0, 0.5, 2.0, 0.5, 30.0, 3000);
    let report = cross_check(&model, &exp_history(&model), 20.0, 0.5).unwrap();
    let root = report.dominant_root.unwrap();
    let measured = report.measured_growth.unwrap();
    let tol = if root.abs() < 0.4 { 0.02 } else { 0.05 * root.abs() };
    assert!(
        (measured - root).abs() <= tol,
        "case B: measured {measured} vs root {root} (tol {tol})"
    );

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() <= 120, "runtime budget exceeded: {elapsed:?}");
    println!(
        "criterion 6: PASS - case A measured {:.6}, case B measured {measured:.6} vs root {root:.6}, {elapsed:.2?}",
        1.0
    );
}

struct GridCase {
    beta: f64,
    r: f64,
    expected_sign: i8,
    report: SpectralReport,
}

/// The 9-scenario trichotomy grid: ξ₂(0) < 0, = 0, > 0 at each r.
///
/// μ = 1, α = 0: β = 0.5 (stable), β = μ+α = 1 (critical), β = 2 (unstable).
/// With α = 0 every scheme update is a nonnegative combination, so these
/// runs are also the positivity fixture of criterion 9. A delayed death rate
/// α > 0 makes even the exact solution dip negative transiently for
/// incompatible histories (the simulator flags this); the delayed-α regime
/// is exercised by criterion 6 case B instead, where the growth comparison
/// is unaffected.
fn trichotomy_grid() -> Vec<GridCase> {
    let mut out = Vec::new();
    for &(beta, expected_sign) in &[(0.5f64, -1i8), (1.0, 0), (2.0, 1)] {
        for &r in &[0.25, 0.5, 1.0] {
            let model = constant_model(1.0, 0.0, beta, r, 20.0, 2000);
            let report = cross_check(&model, &exp_history(&model), 25.0, 0.6).unwrap();
            out.push(GridCase { beta, r, expected_sign, report });
        }
    }
    out
}

#[test]
fn criterion_7_trichotomy_grid() {
    let start = Instant::now();
    let mut worst_critical = 0.0f64;
    for case in trichotomy_grid() {
        let measured = case.report.measured_growth.unwrap();
        match case.expected_sign {
            0 => {
                worst_critical = worst_critical.max(measured.abs());
                assert!(
                    measured.abs() <= CRITICAL_GROWTH_TOL,
                    "critical case r={}: measured {measured}",
                    case.r
                );
            }
            s => {
                assert_eq!(
                    measured.signum() as i8,
                    s,
                    "beta={}, r={}: measured {measured} vs xi(0) {}",
                    case.beta,
                    case.r,
                    case.report.xi_at_zero
                );
                assert_eq!(
                    (case.report.xi_at_zero.signum()) as i8,
                    s,
                    "beta={}, r={}: xi(0) sign",
                    case.beta,
                    case.r
                );
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() <= 600, "runtime budget exceeded: {elapsed:?}");
    println!(
        "criterion 7: PASS - 9 scenarios, signs match, worst critical |growth| {worst_critical:.3e} (<= {CRITICAL_GROWTH_TOL}), {elapsed:.2?}"
    );
}

#[test]
fn criterion_8_corollary_soundness() {
    let start = Instant::now();
    // Full scenario suite: the trichotomy grid plus extra subcritical cases.
    let mut checked = 0;
    let mut cases = trichotomy_grid()
        .into_iter()
        .map(|c| (c.beta, c.r, c.report))
        .collect::<Vec<_>>();
    for &(beta, r) in &[(0.3, 0.5), (0.9, 0.25), (0.99, 1.0)] {
        let model = constant_model(1.0, 0.0, beta, r, 20.0, 2000);
        let report = cross_check(&model, &exp_history(&model), 25.0, 0.6).unwrap();
        cases.push((beta, r, report));
    }
    for (beta, r, report) in &cases {
        if report.sufficient_condition_holds {
            checked += 1;
            let measured = report.measured_growth.unwrap();
            assert!(
                measured < 0.0,
                "beta={beta}, r={r}: sufficient condition holds but growth {measured} >= 0"
            );
            assert_eq!(
                report.stability_class,
                StabilityClass::Stable,
                "beta={beta}, r={r}: class"
            );
        }
    }
    assert!(checked >= 6, "suite exercised only {checked} sufficient-condition cases");
    let elapsed = start.elapsed();
    println!(
        "criterion 8: PASS - {checked} sufficient-condition cases all stable with negative growth, {elapsed:.2?}"
    );
}

#[test]
fn criterion_9_positivity_linearity_gain() {
    let start = Instant::now();

    // Positivity on the nonnegative-data scenario runs (q = 0, step
    // restriction satisfied).
    for &(beta, r) in &[(0.5, 0.5), (1.0, 0.5), (2.0, 1.0)] {
        let model = constant_model(1.0, 0.0, beta, r, 20.0, 2000);
        let traj = simulate(&model, &exp_history(&model), 25.0, None, None).unwrap();
        assert!(
            traj.min_entry >= -1e-12,
            "beta={beta}, r={r}: min entry {}",
            traj.min_entry
        );
        assert!(traj.positivity_violation.is_none());
    }

    // History scaling by c in {2, 10} scales outputs by c to 1e-12 relative.
    let model = constant_model(1.0, 0.5, 1.5, 0.5, 20.0, 1000);
    let base_profile: Vec<f64> =
        (0..model.nodes()).map(|j| (-model.age_node(j)).exp()).collect();
    let base = simulate(
        &model,
        &HistoryInit::ConstantInTime(base_profile.clone()),
        10.0,
        None,
        None,
    )
    .unwrap();
    for c in [2.0, 10.0] {
        let scaled_profile: Vec<f64> = base_profile.iter().map(|v| c * v).collect();
        let scaled = simulate(
            &model,
            &HistoryInit::ConstantInTime(scaled_profile),
            10.0,
            None,
            None,
        )
        .unwrap();
        for (a, b) in base.total_population.iter().zip(&scaled.total_population) {
            assert!((c * a - b).abs() <= 1e-12 * b.abs().max(1e-300), "history scaling {c}");
        }
    }

    // Harvest scaling, from zero history.
    let harvest_model = build_model(ModelConfig {
        a_max: 10.0,
        n_age: 500,
        dt: None,
        r: 0.5,
        mu: RateSpec::Constant(1.0),
        alpha: RateSpec::Constant(0.2),
        eta: RateSpec::Constant(0.8),
        birth: BirthSpec::B2Constant(1.0),
        mu_inf: 1.0,
    })
    .unwrap();
    let zero = HistoryInit::ConstantInTime(vec![0.0; harvest_model.nodes()]);
    let steps = (4.0 / harvest_model.dt()).round() as usize;
    let slices = harvest_model.delay_steps() + steps + 1;
    let q = HarvestSignal::Separable {
        time: (0..slices).map(|i| 1.0 + 0.5 * (0.03 * i as f64).sin()).collect(),
        age: (0..harvest_model.nodes())
            .map(|j| (-0.3 * harvest_model.age_node(j)).exp())
            .collect(),
    };
    let base = simulate(&harvest_model, &zero, 4.0, Some(&q), None).unwrap();
    for c in [2.0, 10.0] {
        let scaled = simulate(&harvest_model, &zero, 4.0, Some(&q.scaled(c)), None).unwrap();
        for (a, b) in base.total_population.iter().zip(&scaled.total_population) {
            assert!((c * a - b).abs() <= 1e-12 * b.abs().max(1e-300), "harvest scaling {c}");
        }
    }

    // Empirical input gain stable within 10% under grid doubling.
    let gain_model = |n_age: usize| {
        build_model(ModelConfig {
            a_max: 10.0,
            n_age,
            dt: None,
            r: 0.5,
            mu: RateSpec::Constant(1.0),
            alpha: RateSpec::Constant(0.2),
            eta: RateSpec::Constant(0.8),
            birth: BirthSpec::B2Constant(1.0),
            mu_inf: 1.0,
        })
        .unwrap()
    };
    let (g_coarse, _) = delaylab_core::population::input_gain(&gain_model(400), 4.0, 5, 9).unwrap();
    let (g_fine, _) = delaylab_core::population::input_gain(&gain_model(800), 4.0, 5, 9).unwrap();
    let rel = (g_fine - g_coarse).abs() / g_coarse;
    assert!(rel <= 0.10, "gain changed {rel:.3} under grid doubling ({g_coarse} -> {g_fine})");

    let elapsed = start.elapsed();
    println!(
        "criterion 9: PASS - positivity, history/harvest linearity, gain drift {:.1}% under refinement, {elapsed:.2?}",
        rel * 100.0
    );
}

// Analysis-only spot checks shared by the criteria above: the located roots
// behave like the closed forms they discretize.
#[test]
fn grid_roots_match_constant_coefficient_oracles() {
    // For constant mu=1, alpha=0.5 the a_max -> infinity closed form is
    // xi2(l) = -1 + beta e^{-l r}/(l + 1 + 0.5 e^{-l r}); its root comes
    // from an independent bisection.
    for &(beta, r) in &[(3.0f64, 0.25f64), (3.0, 0.5), (3.0, 1.0)] {
        let oracle = bisect_oracle(
            |l| beta * (-l * r).exp() - (l + 1.0 + 0.5 * (-l * r).exp()),
            0.0,
            3.0,
        );
        let model = constant_model(1.0, 0.5, beta, r, 20.0, 2000);
        let eval = CharacteristicEvaluator::new(&model);
        let root = dominant_real_root(&eval).unwrap().unwrap();
        assert!(
            (root - oracle).abs() < 2e-3,
            "beta={beta}, r={r}: root {root} vs oracle {oracle}"
        );
        let rep = classify_stability(&eval).unwrap();
        assert_eq!(rep.stability_class, StabilityClass::Unstable);
        assert!(!sufficient_condition_holds(&model));
    }
}
