//! Full-grid nonlinear solves: the linearized iteration driven to a small
//! update norm with a residual safeguard, reusing one sparse factorization
//! structure across iterations.

use std::time::{Duration, Instant};

use crate::error::{Result, RocError};
use crate::fdm_core::Field;
use crate::linalg::{residual_rounding_floor, SparseLu, StallWindow};
use crate::problems::{Discretization, Parameter};

/// Outcome of a nonlinear solve, truth or reduced-lifted.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub solution: Field,
    pub iterations: usize,
    pub converged: bool,
    pub final_update_norm: f64,
    pub final_residual_norm: f64,
    /// True when convergence was declared because the update norm stalled at
    /// the floating-point floor of the linear algebra with the residual at
    /// its rounding floor — the requested tolerance was below what the grid
    /// scale admits, and the iterate is as converged as f64 allows.
    pub hit_rounding_floor: bool,
    pub wall_time: Duration,
}

/// Truth-solve controls.
#[derive(Clone, Copy, Debug)]
pub struct TruthOptions {
    /// Update infinity-norm threshold.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TruthOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
        }
    }
}

/// Solves the full-grid problem at `mu`; a non-converged iteration is an
/// error.
pub fn solve_truth(disc: &Discretization, mu: Parameter, opts: TruthOptions) -> Result<SolveReport> {
    let report = solve_truth_unchecked(disc, mu, opts)?;
    if report.converged {
        Ok(report)
    } else {
        Err(RocError::TruthConvergenceFailure {
            iterations: report.iterations,
            final_update_norm: report.final_update_norm,
            final_residual_norm: report.final_residual_norm,
        })
    }
}

/// Solves the full-grid problem at `mu`, reporting non-convergence through
/// the `converged` flag instead of an error. The returned solution is the
/// last finite iterate.
///
/// Stopping: the update infinity-norm must fall below `tol`; after that the
/// iteration continues until the residual norm reaches `10 * tol` or stops
/// improving (at most `max_iter` iterations in total). The safeguard matters
/// for fixed-point problems, where the update contracts faster than the
/// residual.
pub fn solve_truth_unchecked(
    disc: &Discretization,
    mu: Parameter,
    opts: TruthOptions,
) -> Result<SolveReport> {
    disc.spec().validate(mu)?;
    if opts.max_iter == 0 {
        return Err(RocError::InvalidArgument(
            "max_iter must be positive".to_string(),
        ));
    }
    let start = Instant::now();
    let mut u = disc.initial_guess(mu);
    let mut lu: Option<SparseLu> = None;
    let mut iterations = 0;
    let mut update_norm = f64::INFINITY;
    let mut converged = false;
    let mut residual_norm = f64::NAN;
    let mut prev_residual: Option<f64> = None;
    let mut stagnant = 0usize;
    let mut stall = StallWindow::new();
    let mut hit_rounding_floor = false;

    for it in 1..=opts.max_iter {
        let (a, b) = disc.linearized_step(&u, mu)?;
        let next = match lu.as_mut() {
            None => {
                let factored = SparseLu::new(&a)?;
                let next = factored.solve(&b.values);
                lu = Some(factored);
                next
            }
            Some(factored) => {
                factored.refactor(&a)?;
                factored.solve(&b.values)
            }
        };
        if !next.iter().all(|v| v.is_finite()) {
            // Keep the previous finite iterate as the result.
            break;
        }
        update_norm = next
            .iter()
            .zip(&u.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        u = Field::from_values(next);
        iterations = it;
        if update_norm <= opts.tol {
            let r = disc.residual(&u, mu)?.inf_norm();
            residual_norm = r;
            if r <= 10.0 * opts.tol {
                converged = true;
                break;
            }
            if let Some(prev) = prev_residual {
                if r >= 0.9 * prev {
                    stagnant += 1;
                } else {
                    stagnant = 0;
                }
            }
            prev_residual = Some(r);
            if stagnant >= 2 {
                // Residual floor reached while updates are already tiny.
                converged = true;
                break;
            }
        } else {
            prev_residual = None;
            stagnant = 0;
            // Updates refusing to fall can mean the tolerance sits below the
            // floating-point floor of the grid scale. Accept the iterate only
            // if its residual has reached the rounding floor.
            if stall.push(update_norm) {
                let r = disc.residual(&u, mu)?.inf_norm();
                let floor =
                    residual_rounding_floor(a.inf_norm(), u.inf_norm(), b.inf_norm());
                if r <= floor {
                    residual_norm = r;
                    converged = true;
                    hit_rounding_floor = true;
                    break;
                }
            }
        }
    }

    if !converged && update_norm <= opts.tol {
        // Iteration budget ran out during residual polishing.
        converged = true;
    }
    if residual_norm.is_nan() {
        residual_norm = disc.residual(&u, mu)?.inf_norm();
    }
    Ok(SolveReport {
        solution: u,
        iterations,
        converged,
        final_update_norm: update_norm,
        final_residual_norm: residual_norm,
        hit_rounding_floor,
        wall_time: start.elapsed(),
    })
}

/// Per-x1-line error profile of a solution against a reference on a finer
/// grid whose interval count is a multiple of the coarse one: for each coarse
/// x1 index, the maximum absolute difference over the shared x2 nodes.
pub fn error_profile_ex(u: &Field, k: usize, u_ref: &Field, k_ref: usize) -> Result<Vec<f64>> {
    if k == 0 || k_ref == 0 || k_ref % k != 0 {
        return Err(RocError::InvalidArgument(format!(
            "reference interval count {k_ref} is not a multiple of {k}"
        )));
    }
    let np = k + 1;
    let np_ref = k_ref + 1;
    if u.len() != np * np || u_ref.len() != np_ref * np_ref {
        return Err(RocError::InvalidArgument(
            "field lengths do not match the stated grids".to_string(),
        ));
    }
    let stride = k_ref / k;
    let mut profile = vec![0.0; np];
    for i1 in 0..np {
        let mut worst = 0.0f64;
        for i2 in 0..np {
            let coarse = u.values[i1 * np + i2];
            let fine = u_ref.values[(i1 * stride) * np_ref + i2 * stride];
            worst = worst.max((coarse - fine).abs());
        }
        profile[i1] = worst;
    }
    Ok(profile)
}
