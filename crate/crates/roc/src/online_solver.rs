//! Online reduced solves on the collocation rows. Every quantity touched
//! here lives on the restricted point set, so the per-iteration cost depends
//! on the number of collocation rows and basis vectors, never on the grid
//! size.

use std::time::{Duration, Instant};

use crate::error::{Result, RocError};
use crate::fdm_core::Field;
use crate::linalg::{
    dot, dot_columns, residual_rounding_floor, solve_lstsq_with, solve_square_with, RowMatrix,
    StallWindow,
};
use crate::offline_greedy::ReducedModel;
use crate::problems::{
    pointwise_linearized, pointwise_residual, Parameter, ProblemSpec, RowKind,
};

/// Which collocation rows the reduced system uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollocationMode {
    /// All active rows of both point tracks; rectangular least-squares
    /// system.
    OverCollocated,
    /// Solution-track rows only; square system. Kept for ablation studies,
    /// not for production use.
    SquareSolutionTrack,
}

/// Reduced-solve controls.
#[derive(Clone, Debug)]
pub struct ReducedOptions {
    /// Update infinity-norm threshold in coefficient space.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting coefficients; zero-padded when shorter than the basis count.
    pub initial_guess: Option<Vec<f64>>,
    pub mode: CollocationMode,
}

impl Default for ReducedOptions {
    fn default() -> Self {
        ReducedOptions {
            tol: 1e-10,
            max_iter: 100,
            initial_guess: None,
            mode: CollocationMode::OverCollocated,
        }
    }
}

/// Outcome of a reduced solve.
#[derive(Clone, Debug)]
pub struct ReducedSolveReport {
    pub coeffs: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_update_norm: f64,
    /// Residual of the final coefficients at the rows the solve used.
    pub residual_rows: Vec<f64>,
    /// True when convergence was declared because the update norm stalled at
    /// the floating-point floor with the collocated residual at its rounding
    /// floor; the requested tolerance was below what f64 admits here.
    pub hit_rounding_floor: bool,
    pub wall_time: Duration,
}

impl ReducedSolveReport {
    /// Infinity norm of the collocation-row residual; the grid-independent
    /// error indicator.
    pub fn residual_inf_norm(&self) -> f64 {
        self.residual_rows.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

/// Solves the reduced problem with n basis vectors; non-convergence is
/// reported through the `converged` flag and the last finite coefficients
/// are returned.
pub fn solve_reduced_unchecked(
    model: &ReducedModel,
    mu: Parameter,
    n: usize,
    opts: &ReducedOptions,
) -> Result<ReducedSolveReport> {
    let spec = ProblemSpec::new(model.problem);
    spec.validate(mu)?;
    if opts.max_iter == 0 {
        return Err(RocError::InvalidArgument(
            "max_iter must be positive".to_string(),
        ));
    }
    let active = model.active_rows(n)?;
    let rows: Vec<usize> = match opts.mode {
        CollocationMode::OverCollocated => (0..active).collect(),
        CollocationMode::SquareSolutionTrack => model.s_pos[..n].to_vec(),
    };
    let m = rows.len();
    let mut coeffs = match &opts.initial_guess {
        None => vec![0.0; n],
        Some(g) => {
            if g.len() > n {
                return Err(RocError::InvalidArgument(format!(
                    "initial guess has {} coefficients for a basis of {n}",
                    g.len()
                )));
            }
            let mut c = g.clone();
            c.resize(n, 0.0);
            c
        }
    };

    let start = Instant::now();
    let id = model.problem;
    let mut a = RowMatrix::zeros(m, n);
    let mut b = vec![0.0; m];
    let mut iterations = 0;
    let mut converged = false;
    let mut update_norm = f64::INFINITY;
    let mut stall = StallWindow::new();
    let mut hit_rounding_floor = false;

    for it in 1..=opts.max_iter {
        for (r, &p) in rows.iter().enumerate() {
            let w_row = &model.w_m.row(p)[..n];
            match model.row_kind[p] {
                RowKind::Pde => {
                    let u = dot(w_row, &coeffs);
                    let (gx, gy) = if model.uses_gradient {
                        (
                            dot(&model.gx_m.row(p)[..n], &coeffs),
                            dot(&model.gy_m.row(p)[..n], &coeffs),
                        )
                    } else {
                        (0.0, 0.0)
                    };
                    let lin = pointwise_linearized(id, mu, u, gx, gy, model.f_m[p]);
                    let lap_row = &model.lap_m.row(p)[..n];
                    for j in 0..n {
                        a.set(r, j, lin.lap_coeff * lap_row[j] + lin.diag * w_row[j]);
                    }
                    b[r] = lin.rhs;
                }
                kind => {
                    for j in 0..n {
                        a.set(r, j, w_row[j]);
                    }
                    b[r] = kind.bc_value(mu);
                }
            }
        }
        let next = match opts.mode {
            CollocationMode::OverCollocated => solve_lstsq_with(m, n, |i, j| a.get(i, j), &b),
            CollocationMode::SquareSolutionTrack => solve_square_with(n, |i, j| a.get(i, j), &b),
        };
        if !next.iter().all(|v| v.is_finite()) {
            // Keep the previous finite coefficients as the result.
            break;
        }
        update_norm = next
            .iter()
            .zip(&coeffs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        coeffs = next;
        iterations = it;
        if update_norm <= opts.tol {
            converged = true;
            break;
        }
        // Same safeguard as the full-grid iteration: a tolerance below the
        // floating-point floor of the collocated system shows up as a
        // stalled update norm with the residual at its rounding floor.
        if stall.push(update_norm) {
            let r = reduced_residual_rows(model, mu, &coeffs, &rows)
                .iter()
                .fold(0.0f64, |acc, &v| acc.max(v.abs()));
            let a_norm = (0..m)
                .map(|i| (0..n).map(|j| a.get(i, j).abs()).sum())
                .fold(0.0, f64::max);
            let c_norm = coeffs.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
            let b_norm = b.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
            if r <= residual_rounding_floor(a_norm, c_norm, b_norm) {
                converged = true;
                hit_rounding_floor = true;
                break;
            }
        }
    }

    let residual_rows = reduced_residual_rows(model, mu, &coeffs, &rows);
    Ok(ReducedSolveReport {
        coeffs,
        iterations,
        converged,
        final_update_norm: update_norm,
        residual_rows,
        hit_rounding_floor,
        wall_time: start.elapsed(),
    })
}

/// As [`solve_reduced_unchecked`] but a non-converged iteration is an error.
pub fn solve_reduced(
    model: &ReducedModel,
    mu: Parameter,
    n: usize,
    opts: &ReducedOptions,
) -> Result<ReducedSolveReport> {
    let report = solve_reduced_unchecked(model, mu, n, opts)?;
    if report.converged {
        Ok(report)
    } else {
        Err(RocError::ReducedConvergenceFailure {
            mu1: mu.mu1,
            mu2: mu.mu2,
            n,
            iterations: report.iterations,
            final_update_norm: report.final_update_norm,
        })
    }
}

/// Residual of the coefficients at the given collocation-row positions.
/// Row values come from the stored per-basis restrictions, so the result
/// matches the full-grid residual at those nodes exactly.
pub fn reduced_residual_rows(
    model: &ReducedModel,
    mu: Parameter,
    coeffs: &[f64],
    rows: &[usize],
) -> Vec<f64> {
    let n = coeffs.len();
    let id = model.problem;
    let mut out = Vec::with_capacity(rows.len());
    for &p in rows {
        let w_row = &model.w_m.row(p)[..n];
        let u = dot(w_row, coeffs);
        let v = match model.row_kind[p] {
            RowKind::Pde => {
                let lap = dot(&model.lap_m.row(p)[..n], coeffs);
                let (gx, gy) = if model.uses_gradient {
                    (
                        dot(&model.gx_m.row(p)[..n], coeffs),
                        dot(&model.gy_m.row(p)[..n], coeffs),
                    )
                } else {
                    (0.0, 0.0)
                };
                pointwise_residual(id, mu, u, lap, gx, gy, model.f_m[p])
            }
            kind => u - kind.bc_value(mu),
        };
        out.push(v);
    }
    out
}

/// Expands reduced coefficients to the full grid.
pub fn lift(model: &ReducedModel, coeffs: &[f64]) -> Result<Field> {
    if coeffs.is_empty() || coeffs.len() > model.n_bases() {
        return Err(RocError::InvalidArgument(format!(
            "coefficient count {} outside 1..={}",
            coeffs.len(),
            model.n_bases()
        )));
    }
    let total = model.basis[0].len();
    let mut values = vec![0.0; total];
    for (i, v) in values.iter_mut().enumerate() {
        *v = dot_columns(&model.basis, i, coeffs);
    }
    Ok(Field::from_values(values))
}
