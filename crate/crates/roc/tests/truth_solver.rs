use roc::error::RocError;
use roc::fdm_core::Field;
use roc::problems::{Discretization, Parameter, ProblemId, ProblemSpec};
use roc::truth_solver::{error_profile_ex, solve_truth, solve_truth_unchecked, TruthOptions};

const PI: f64 = std::f64::consts::PI;

// Discretization error against a closed-form solution, via a forcing field
// chosen so that the solution is known exactly.
fn manufactured_error(id: ProblemId, mu: Parameter, k: usize) -> f64 {
    let spec = ProblemSpec::new(id);
    let probe = Discretization::new(spec, k).unwrap();
    let grid = probe.grid();
    let exact = |x1: f64, x2: f64| -> f64 {
        match id {
            // Zero on x1 = -1, mu2 on x1 = +1, zero normal derivative on
            // x2 = +-1.
            ProblemId::Pbe => {
                mu.mu2 * (x1 + 1.0) / 2.0 + (PI * (x1 + 1.0)).sin() * (PI * x2).cos()
            }
            // Zero on the whole boundary.
            _ => (PI * x1).sin() * (PI * x2).sin(),
        }
    };
    let forcing: Vec<f64> = (0..grid.node_count())
        .map(|i| {
            let (x1, x2) = grid.coords(i);
            let u = exact(x1, x2);
            match id {
                ProblemId::Pbe => {
                    let lap = -2.0 * PI * PI * (PI * (x1 + 1.0)).sin() * (PI * x2).cos();
                    mu.mu1 * mu.mu1 * lap - u.sinh()
                }
                ProblemId::Cubic => {
                    let lap = -2.0 * PI * PI * u;
                    let d = u - mu.mu1;
                    -mu.mu2 * lap + u * d * d
                }
                ProblemId::Convdiff => {
                    let lap = -2.0 * PI * PI * u;
                    let gx = PI * (PI * x1).cos() * (PI * x2).sin();
                    let gy = PI * (PI * x1).sin() * (PI * x2).cos();
                    let speed = (gx * gx + gy * gy).sqrt() + mu.mu1;
                    -mu.mu2 * lap + u * speed.powf(1.5)
                }
            }
        })
        .collect();
    let disc =
        Discretization::with_forcing(ProblemSpec::new(id), k, Field::from_values(forcing)).unwrap();
    let report = solve_truth(&disc, mu, TruthOptions::default()).unwrap();
    assert!(report.converged);
    let mut worst = 0.0f64;
    for i in 0..grid.node_count() {
        let (x1, x2) = grid.coords(i);
        worst = worst.max((report.solution.values[i] - exact(x1, x2)).abs());
    }
    worst
}

#[test]
fn newton_solution_converges_second_order_for_pbe() {
    let mu = Parameter::new(0.3, 2.0);
    let ratio = manufactured_error(ProblemId::Pbe, mu, 16)
        / manufactured_error(ProblemId::Pbe, mu, 32);
    assert!((3.2..=4.8).contains(&ratio), "ratio {ratio}");
}

#[test]
fn newton_solution_converges_second_order_for_cubic() {
    let mu = Parameter::new(2.6, 1.1);
    let ratio = manufactured_error(ProblemId::Cubic, mu, 16)
        / manufactured_error(ProblemId::Cubic, mu, 32);
    assert!((3.2..=4.8).contains(&ratio), "ratio {ratio}");
}

#[test]
fn fixed_point_solution_converges_second_order_for_convdiff() {
    let mu = Parameter::new(2.0, 3.0);
    let ratio = manufactured_error(ProblemId::Convdiff, mu, 16)
        / manufactured_error(ProblemId::Convdiff, mu, 32);
    assert!((3.2..=4.8).contains(&ratio), "ratio {ratio}");
}

#[test]
fn solves_are_bitwise_deterministic() {
    let disc = Discretization::new(ProblemSpec::new(ProblemId::Pbe), 24).unwrap();
    let mu = Parameter::new(0.12, 4.5);
    let a = solve_truth(&disc, mu, TruthOptions::default()).unwrap();
    let disc2 = Discretization::new(ProblemSpec::new(ProblemId::Pbe), 24).unwrap();
    let b = solve_truth(&disc2, mu, TruthOptions::default()).unwrap();
    assert_eq!(a.iterations, b.iterations);
    for (x, y) in a.solution.values.iter().zip(&b.solution.values) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn report_records_the_iteration_path() {
    let disc = Discretization::new(ProblemSpec::new(ProblemId::Cubic), 20).unwrap();
    let report = solve_truth(&disc, Parameter::new(1.0, 1.0), TruthOptions::default()).unwrap();
    assert!(report.converged);
    assert!(report.iterations >= 2);
    assert!(report.final_update_norm <= 1e-10);
    assert!(report.final_residual_norm.is_finite());
    assert!(report.wall_time.as_secs_f64() >= 0.0);
    assert!(report.solution.all_finite());
    // The residual of the returned iterate is small in the PDE rows.
    let r = disc.residual(&report.solution, Parameter::new(1.0, 1.0)).unwrap();
    assert!(r.inf_norm() < 1e-6, "residual {}", r.inf_norm());
}

#[test]
fn starved_iteration_budget_reports_failure() {
    let disc = Discretization::new(ProblemSpec::new(ProblemId::Pbe), 16).unwrap();
    let mu = Parameter::new(0.08, 5.0);
    let opts = TruthOptions {
        tol: 1e-14,
        max_iter: 2,
    };
    let err = solve_truth(&disc, mu, opts).unwrap_err();
    match err {
        RocError::TruthConvergenceFailure {
            iterations,
            final_update_norm,
            ..
        } => {
            assert_eq!(iterations, 2);
            assert!(final_update_norm > 1e-14);
        }
        other => panic!("unexpected error {other:?}"),
    }
    let report = solve_truth_unchecked(&disc, mu, opts).unwrap();
    assert!(!report.converged);
    assert_eq!(report.iterations, 2);
}

#[test]
fn two_grid_profile_compares_shared_nodes_per_line() {
    // Coarse 3x3 lattice against a fine 5x5 one: coarse (i1, i2) meets fine
    // (2*i1, 2*i2).
    let coarse = Field::zeros(9);
    let fine = Field::from_values(
        (0..25)
            .map(|idx| {
                let (i1, i2) = (idx / 5, idx % 5);
                if i1 % 2 == 0 && i2 % 2 == 0 {
                    (i1 / 2) as f64 * 10.0 + (i2 / 2) as f64
                } else {
                    999.0
                }
            })
            .collect(),
    );
    let profile = error_profile_ex(&coarse, 2, &fine, 4).unwrap();
    assert_eq!(profile, vec![2.0, 12.0, 22.0]);
}

#[test]
fn two_grid_profile_requires_nested_grids() {
    let coarse = Field::zeros(16);
    let fine = Field::zeros(64);
    assert!(error_profile_ex(&coarse, 3, &fine, 7).is_err());
}

#[test]
fn profile_of_identical_grids_is_zero() {
    let disc = Discretization::new(ProblemSpec::new(ProblemId::Cubic), 12).unwrap();
    let mu = Parameter::new(2.6, 1.1);
    let report = solve_truth(&disc, mu, TruthOptions::default()).unwrap();
    let profile = error_profile_ex(&report.solution, 12, &report.solution, 12).unwrap();
    assert_eq!(profile.len(), 13);
    assert!(profile.iter().all(|&v| v == 0.0));
}

#[test]
fn refinement_shrinks_the_profile_against_a_fine_reference() {
    let mu = Parameter::new(2.6, 1.1);
    let solve = |k: usize| {
        let disc = Discretization::new(ProblemSpec::new(ProblemId::Cubic), k).unwrap();
        solve_truth(&disc, mu, TruthOptions::default()).unwrap().solution
    };
    let reference = solve(64);
    let coarse = solve(16);
    let medium = solve(32);
    let e16 = error_profile_ex(&coarse, 16, &reference, 64)
        .unwrap()
        .into_iter()
        .fold(0.0f64, f64::max);
    let e32 = error_profile_ex(&medium, 32, &reference, 64)
        .unwrap()
        .into_iter()
        .fold(0.0f64, f64::max);
    // The reference is only 2x the fine grid, so the ratio sits below the
    // asymptotic 4.
    let ratio = e16 / e32;
    assert!((2.0..=6.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn sub_floor_tolerance_exits_at_the_rounding_floor() {
    // At this grid scale the update norm cannot reach 1e-15: linear-solve
    // rounding keeps it jittering around eps * ||A|| * ||u|| / lambda_min.
    // The solver must recognize the plateau, confirm the residual sits at
    // its rounding floor, and declare convergence instead of spinning to
    // the iteration cap.
    let disc = Discretization::new(ProblemSpec::new(ProblemId::Cubic), 128).unwrap();
    let mu = Parameter::new(2.6, 1.1);
    let opts = TruthOptions {
        tol: 1e-15,
        max_iter: 100,
    };
    let report = solve_truth(&disc, mu, opts).unwrap();
    assert!(report.converged);
    assert!(
        report.hit_rounding_floor,
        "expected a floor exit, got a plain convergence at update {:.3e}",
        report.final_update_norm
    );
    assert!(
        report.iterations < 40,
        "floor exit should fire early, took {} iterations",
        report.iterations
    );
    assert!(report.final_residual_norm <= 1e-9);

    // The floored answer agrees with the standard-tolerance answer to far
    // below discretization accuracy.
    let normal = solve_truth(&disc, mu, TruthOptions::default()).unwrap();
    assert!(!normal.hit_rounding_floor);
    let diff = report
        .solution
        .values
        .iter()
        .zip(&normal.solution.values)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(diff <= 1e-9, "floored vs normal solution differ by {diff:.3e}");
}
