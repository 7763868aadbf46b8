//! Error type shared by all modules.

use crate::problems::ProblemId;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, RocError>;

/// Failure modes surfaced by the solvers, model I/O, and experiment drivers.
#[derive(Debug, thiserror::Error)]
pub enum RocError {
    /// A precondition on an argument was violated (sizes, ranges, indices).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A parameter lies outside the owning problem's domain.
    #[error("parameter ({mu1}, {mu2}) outside the {problem} domain")]
    DomainViolation {
        problem: ProblemId,
        mu1: f64,
        mu2: f64,
    },

    /// The full-grid nonlinear iteration exhausted `max_iter`.
    /// Carries the iteration state at the point of failure.
    #[error(
        "truth solve did not converge: {iterations} iterations, \
         final update {final_update_norm:.3e}, final residual {final_residual_norm:.3e}"
    )]
    TruthConvergenceFailure {
        iterations: usize,
        final_update_norm: f64,
        final_residual_norm: f64,
    },

    /// The reduced nonlinear iteration exhausted `max_iter` or produced
    /// non-finite iterates.
    #[error(
        "reduced solve did not converge at ({mu1}, {mu2}) with n={n}: \
         {iterations} iterations, final update {final_update_norm:.3e}"
    )]
    ReducedConvergenceFailure {
        mu1: f64,
        mu2: f64,
        n: usize,
        iterations: usize,
        final_update_norm: f64,
    },

    /// The sparse direct factorization failed (structurally or numerically
    /// singular system).
    #[error("linear solver failure: {0}")]
    LinearSolverFailure(String),

    /// A vector handed to the interpolatory orthonormalization is (numerically)
    /// in the span of the existing basis.
    #[error("linear dependence: remainder max {max_abs:.3e} below threshold")]
    LinearDependence { max_abs: f64 },

    /// Filesystem failure while reading or writing artifacts.
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),

    /// A model or CSV file does not match its documented format.
    #[error("format error: {0}")]
    Format(String),
}
