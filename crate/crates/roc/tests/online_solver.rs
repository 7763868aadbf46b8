use roc::error::RocError;
use roc::offline_greedy::{
    greedy_build, offline_residual_with_coeffs, GreedyOptions, IndicatorKind, ReducedModel,
};
use roc::online_solver::{
    lift, reduced_residual_rows, solve_reduced, solve_reduced_unchecked, CollocationMode,
    ReducedOptions,
};
use roc::problems::{make_parameter_grids, Discretization, Parameter, ProblemId, ProblemSpec};
use roc::truth_solver::{solve_truth, TruthOptions};

fn build(id: ProblemId, k: usize, n: usize) -> (Discretization, ReducedModel) {
    let disc = Discretization::new(ProblemSpec::new(id), k).unwrap();
    let train = make_parameter_grids(id).train.coarsened().params;
    let opts = GreedyOptions::new(n, IndicatorKind::L1);
    let (model, _) = greedy_build(&disc, &train, &opts).unwrap();
    (disc, model)
}

#[test]
fn snapshots_are_reproduced_at_their_own_parameters() {
    let (disc, model) = build(ProblemId::Cubic, 24, 4);
    for (j, &mu) in model.snapshot_params.iter().enumerate() {
        let n = j + 1;
        let report = solve_reduced(&model, mu, n, &ReducedOptions::default()).unwrap();
        assert!(report.converged);
        let lifted = lift(&model, &report.coeffs).unwrap();
        let truth = solve_truth(&disc, mu, TruthOptions::default()).unwrap().solution;
        let worst = lifted
            .values
            .iter()
            .zip(&truth.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst <= 1e-8, "snapshot {j}: lifted error {worst}");
        assert!(
            report.residual_inf_norm() <= 1e-8,
            "snapshot {j}: row residual {}",
            report.residual_inf_norm()
        );
    }
}

#[test]
fn row_residuals_match_the_full_grid_restriction_bitwise() {
    for id in [ProblemId::Pbe, ProblemId::Cubic, ProblemId::Convdiff] {
        let (disc, model) = build(id, 20, 4);
        let grids = make_parameter_grids(id);
        for (qi, &mu) in grids.test.params.iter().step_by(97).enumerate() {
            let n = model.n_bases();
            let report = solve_reduced_unchecked(&model, mu, n, &ReducedOptions::default()).unwrap();
            let full = offline_residual_with_coeffs(&disc, &model, mu, &report.coeffs).unwrap();
            let active = model.active_rows(n).unwrap();
            assert_eq!(report.residual_rows.len(), active);
            for (r, &row_val) in report.residual_rows.iter().enumerate() {
                let full_val = full.values[model.xm[r]];
                assert_eq!(
                    row_val.to_bits(),
                    full_val.to_bits(),
                    "{id} query {qi} row {r}"
                );
            }
        }
    }
}

#[test]
fn lifted_residual_agrees_with_the_stencil_route() {
    // The per-basis-column evaluation and "lift, then apply the operators"
    // differ only in summation order; their gap is measurement noise far
    // below any indicator read from it.
    let (disc, model) = build(ProblemId::Cubic, 20, 4);
    let mu = Parameter::new(3.1, 0.9);
    let report = solve_reduced_unchecked(&model, mu, 4, &ReducedOptions::default()).unwrap();
    let by_columns = offline_residual_with_coeffs(&disc, &model, mu, &report.coeffs).unwrap();
    let lifted = lift(&model, &report.coeffs).unwrap();
    let direct = disc.residual(&lifted, mu).unwrap();
    let h = disc.grid().h();
    let tol = 1e-9 / (h * h);
    for (a, b) in by_columns.values.iter().zip(&direct.values) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }
}

#[test]
fn reduced_row_residuals_use_stored_restrictions() {
    let (_, model) = build(ProblemId::Cubic, 16, 3);
    let mu = Parameter::new(1.4, 1.6);
    let report = solve_reduced_unchecked(&model, mu, 3, &ReducedOptions::default()).unwrap();
    let rows: Vec<usize> = (0..model.active_rows(3).unwrap()).collect();
    let again = reduced_residual_rows(&model, mu, &report.coeffs, &rows);
    for (a, b) in report.residual_rows.iter().zip(&again) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn unit_coefficients_lift_to_a_basis_column() {
    let (_, model) = build(ProblemId::Cubic, 16, 3);
    let lifted = lift(&model, &[1.0]).unwrap();
    for (a, b) in lifted.values.iter().zip(&model.basis[0]) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert!(lift(&model, &[]).is_err());
    assert!(lift(&model, &[0.0; 9]).is_err());
}

#[test]
fn square_ablation_collocates_the_solution_track_only() {
    let (_, model) = build(ProblemId::Cubic, 20, 4);
    let mu = model.snapshot_params[3];
    let mut opts = ReducedOptions::default();
    opts.mode = CollocationMode::SquareSolutionTrack;
    let square = solve_reduced_unchecked(&model, mu, 4, &opts).unwrap();
    assert_eq!(square.residual_rows.len(), 4);
    let rect = solve_reduced_unchecked(&model, mu, 4, &ReducedOptions::default()).unwrap();
    assert_eq!(rect.residual_rows.len(), model.active_rows(4).unwrap());
    assert!(rect.residual_rows.len() > 4);
    // At a snapshot parameter both modes recover the interpolating
    // coefficients.
    assert!(square.converged && rect.converged);
    for (a, b) in square.coeffs.iter().zip(&rect.coeffs) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn starting_guesses_are_validated_and_padded() {
    let (_, model) = build(ProblemId::Cubic, 16, 3);
    let mu = Parameter::new(2.0, 1.0);
    let mut opts = ReducedOptions::default();
    opts.initial_guess = Some(vec![0.0; 5]);
    assert!(matches!(
        solve_reduced_unchecked(&model, mu, 3, &opts),
        Err(RocError::InvalidArgument(_))
    ));
    opts.initial_guess = Some(vec![0.1]);
    let padded = solve_reduced_unchecked(&model, mu, 3, &opts).unwrap();
    assert!(padded.converged);
    let plain = solve_reduced_unchecked(&model, mu, 3, &ReducedOptions::default()).unwrap();
    for (a, b) in padded.coeffs.iter().zip(&plain.coeffs) {
        assert!((a - b).abs() <= 1e-8, "guess changed the fixed point");
    }
}

#[test]
fn basis_count_bounds_are_enforced() {
    let (_, model) = build(ProblemId::Cubic, 16, 3);
    let mu = Parameter::new(2.0, 1.0);
    assert!(solve_reduced_unchecked(&model, mu, 0, &ReducedOptions::default()).is_err());
    assert!(solve_reduced_unchecked(&model, mu, 4, &ReducedOptions::default()).is_err());
    assert!(model.active_rows(0).is_err());
    assert!(model.active_rows(9).is_err());
}

#[test]
fn exhausted_iterations_surface_as_solver_failure() {
    let (_, model) = build(ProblemId::Cubic, 16, 3);
    let mu = Parameter::new(4.9, 0.21);
    let opts = ReducedOptions {
        tol: 1e-14,
        max_iter: 1,
        initial_guess: None,
        mode: CollocationMode::OverCollocated,
    };
    match solve_reduced(&model, mu, 3, &opts) {
        Err(RocError::ReducedConvergenceFailure { n, iterations, .. }) => {
            assert_eq!(n, 3);
            assert_eq!(iterations, 1);
        }
        other => panic!("expected a convergence failure, got {other:?}"),
    }
}

#[test]
fn reduced_solves_are_bitwise_deterministic() {
    let (_, model) = build(ProblemId::Convdiff, 16, 3);
    let mu = Parameter::new(7.0, 2.0);
    let a = solve_reduced_unchecked(&model, mu, 3, &ReducedOptions::default()).unwrap();
    let b = solve_reduced_unchecked(&model, mu, 3, &ReducedOptions::default()).unwrap();
    assert_eq!(a.iterations, b.iterations);
    for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    for (x, y) in a.residual_rows.iter().zip(&b.residual_rows) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn extreme_tolerance_converges_without_exhausting_the_budget() {
    // A tolerance at the edge of f64 either lands on an exact floating-point
    // fixed point of the iteration map (small well-conditioned systems) or
    // triggers the rounding-floor stall exit; neither may burn the whole
    // iteration budget or change the answer.
    let (_, model) = build(ProblemId::Cubic, 20, 4);
    let mu = Parameter::new(1.7, 0.9);
    let opts = ReducedOptions {
        tol: 1e-18,
        ..ReducedOptions::default()
    };
    let report = solve_reduced_unchecked(&model, mu, model.n_bases(), &opts).unwrap();
    assert!(report.converged);
    assert!(
        report.iterations < opts.max_iter,
        "expected early exit, took all {} iterations",
        report.iterations
    );
    let normal = solve_reduced_unchecked(&model, mu, model.n_bases(), &ReducedOptions::default())
        .unwrap();
    assert!(!normal.hit_rounding_floor);
    for (a, b) in report.coeffs.iter().zip(&normal.coeffs) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
    }
}
