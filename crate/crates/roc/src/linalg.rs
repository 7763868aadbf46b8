//! Dense and sparse linear-algebra support: a small row-major matrix type,
//! the shared dot-product kernels, and wrappers around the direct solvers.
//!
//! The two dot kernels ([`dot`] and [`dot_columns`]) are the only code paths
//! used to contract basis values against coefficient vectors. Restricted rows
//! are copies of full-grid rows, so running both kernels with the same
//! summation order makes the reduced residual at a collocation point
//! bit-identical to the full-grid residual at that node.

use std::sync::Once;

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Result, RocError};
use crate::fdm_core::StencilOperator;

/// Dot product with a fixed left-to-right summation order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for j in 0..a.len() {
        acc += a[j] * b[j];
    }
    acc
}

/// Row dot product against a set of column vectors: contracts entry `row` of
/// each column with the matching coefficient, in column order. Summation order
/// matches [`dot`] exactly.
pub fn dot_columns(columns: &[Vec<f64>], row: usize, coeffs: &[f64]) -> f64 {
    debug_assert!(coeffs.len() <= columns.len());
    let mut acc = 0.0;
    for j in 0..coeffs.len() {
        acc += columns[j][row] * coeffs[j];
    }
    acc
}

/// Dense row-major matrix. Rows are contiguous, so a row slice doubles as the
/// per-collocation-point view used by the online solver, and a leading slice
/// of a row is the restriction to the first `n` basis columns.
#[derive(Clone, Debug, PartialEq)]
pub struct RowMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl RowMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn from_row_major(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(RocError::InvalidArgument(format!(
                "row-major data length {} does not match {}x{}",
                data.len(),
                nrows,
                ncols
            )));
        }
        Ok(Self { nrows, ncols, data })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.ncols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Appends a row; the slice length must equal the column count.
    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.ncols, "row length mismatch");
        self.data.extend_from_slice(row);
        self.nrows += 1;
    }

    /// Appends a column, one value per existing row. O(nrows * ncols) reshape;
    /// only used on the small restricted matrices.
    pub fn push_column(&mut self, col: &[f64]) {
        assert_eq!(col.len(), self.nrows, "column length mismatch");
        let ncols_new = self.ncols + 1;
        let mut data = Vec::with_capacity(self.nrows * ncols_new);
        for i in 0..self.nrows {
            data.extend_from_slice(self.row(i));
            data.push(col[i]);
        }
        self.data = data;
        self.ncols = ncols_new;
    }
}

static SEQ_PARALLELISM: Once = Once::new();

/// Forces the dense/sparse backends into sequential mode. Called before any
/// factorization so timings are attributable to one worker and results are
/// reproducible across machines with different core counts.
pub fn ensure_sequential_backend() {
    SEQ_PARALLELISM.call_once(|| {
        faer::set_global_parallelism(faer::Par::Seq);
    });
}

/// Direct sparse LU with a cached symbolic factorization.
///
/// The nonlinear truth iterations re-assemble the operator every step but the
/// sparsity pattern never changes, so the fill analysis is done once and only
/// the numeric factorization is repeated. The value scatter from the CSR
/// assembly order into the internal CSC storage is also precomputed.
pub struct SparseLu {
    csc: SparseColMat<usize, f64>,
    scatter: Vec<usize>,
    symbolic: SymbolicLu<usize>,
    lu: Lu<usize, f64>,
    dim: usize,
    nnz: usize,
}

impl SparseLu {
    /// Builds the pattern, the symbolic analysis, and the first numeric
    /// factorization from a square stencil operator.
    pub fn new(op: &StencilOperator) -> Result<Self> {
        ensure_sequential_backend();
        let (nrows, ncols) = (op.nrows(), op.ncols());
        if nrows != ncols {
            return Err(RocError::InvalidArgument(format!(
                "sparse LU expects a square operator, got {nrows}x{ncols}"
            )));
        }
        let nnz = op.nnz();
        // Encode each entry's position in the CSR value stream as its value so
        // the triplet sort yields the CSC slot -> CSR index scatter map.
        let mut trips: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(nnz);
        for i in 0..nrows {
            let (cols, _) = op.row(i);
            let base = op.row_start(i);
            for (k, &j) in cols.iter().enumerate() {
                trips.push(Triplet::new(i, j, (base + k) as f64));
            }
        }
        let mut csc = SparseColMat::<usize, f64>::try_new_from_triplets(nrows, ncols, &trips)
            .map_err(|e| RocError::LinearSolverFailure(format!("pattern creation: {e:?}")))?;
        let scatter: Vec<usize> = csc.val().iter().map(|v| *v as usize).collect();
        if scatter.len() != nnz {
            return Err(RocError::LinearSolverFailure(
                "duplicate entries in stencil operator".to_string(),
            ));
        }
        Self::fill_values(&mut csc, &scatter, op);
        let symbolic = SymbolicLu::try_new(csc.symbolic())
            .map_err(|e| RocError::LinearSolverFailure(format!("symbolic analysis: {e:?}")))?;
        let lu = Lu::try_new_with_symbolic(symbolic.clone(), csc.as_ref())
            .map_err(|e| RocError::LinearSolverFailure(format!("numeric factorization: {e:?}")))?;
        Ok(Self {
            csc,
            scatter,
            symbolic,
            lu,
            dim: nrows,
            nnz,
        })
    }

    fn fill_values(csc: &mut SparseColMat<usize, f64>, scatter: &[usize], op: &StencilOperator) {
        let vals = csc.val_mut();
        let src = op.values();
        for (slot, &k) in scatter.iter().enumerate() {
            vals[slot] = src[k];
        }
    }

    /// Re-runs the numeric factorization for an operator with the same
    /// sparsity pattern as the one this solver was built from.
    pub fn refactor(&mut self, op: &StencilOperator) -> Result<()> {
        if op.nnz() != self.nnz || op.nrows() != self.dim {
            return Err(RocError::InvalidArgument(
                "refactor called with a different sparsity pattern".to_string(),
            ));
        }
        Self::fill_values(&mut self.csc, &self.scatter, op);
        self.lu = Lu::try_new_with_symbolic(self.symbolic.clone(), self.csc.as_ref())
            .map_err(|e| RocError::LinearSolverFailure(format!("numeric factorization: {e:?}")))?;
        Ok(())
    }

    /// Solves A x = rhs with the current factorization.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.dim);
        let b = Mat::<f64>::from_fn(self.dim, 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        (0..self.dim).map(|i| x[(i, 0)]).collect()
    }
}

/// Least-squares solve of an m x n system (m >= n) by dense QR. Entries are
/// fetched through `get(i, j)`.
pub fn solve_lstsq_with(
    m: usize,
    n: usize,
    get: impl Fn(usize, usize) -> f64,
    rhs: &[f64],
) -> Vec<f64> {
    ensure_sequential_backend();
    debug_assert!(m >= n);
    debug_assert_eq!(rhs.len(), m);
    let a = Mat::<f64>::from_fn(m, n, |i, j| get(i, j));
    let b = Mat::<f64>::from_fn(m, 1, |i, _| rhs[i]);
    let x = a.qr().solve_lstsq(&b);
    (0..n).map(|i| x[(i, 0)]).collect()
}

/// Square solve by dense partial-pivoting LU. A singular system yields
/// non-finite entries which callers treat as a failed iteration.
pub fn solve_square_with(n: usize, get: impl Fn(usize, usize) -> f64, rhs: &[f64]) -> Vec<f64> {
    ensure_sequential_backend();
    debug_assert_eq!(rhs.len(), n);
    let a = Mat::<f64>::from_fn(n, n, |i, j| get(i, j));
    let b = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
    let x = a.partial_piv_lu().solve(&b);
    (0..n).map(|i| x[(i, 0)]).collect()
}

/// Eigendecomposition of a symmetric matrix given by its row-major data,
/// returned with eigenvalues (and matching eigenvector columns) in descending
/// order.
pub fn self_adjoint_eigen_desc(g: &RowMatrix) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    ensure_sequential_backend();
    let m = g.nrows();
    if g.ncols() != m {
        return Err(RocError::InvalidArgument(
            "eigendecomposition expects a square matrix".to_string(),
        ));
    }
    let a = Mat::<f64>::from_fn(m, m, |i, j| g.get(i, j));
    let evd = a
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| RocError::LinearSolverFailure(format!("eigendecomposition: {e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    // The backend returns eigenvalues in ascending order; reverse.
    let mut vals = Vec::with_capacity(m);
    let mut vecs = Vec::with_capacity(m);
    for idx in (0..m).rev() {
        vals.push(s[idx]);
        vecs.push((0..m).map(|i| u[(i, idx)]).collect());
    }
    Ok((vals, vecs))
}

/// Detects when an iteration's update norms stop making progress.
///
/// Absolute update tolerances below the floating-point floor of the linear
/// algebra (roughly eps * ||A|| * ||u||) are unreachable: the update norm
/// plateaus and jitters instead of decreasing. The window reports a stall
/// when it is full and the newest update has not at least halved relative
/// to the oldest retained one — which a convergent iteration, even a slowly
/// contracting fixed point, achieves and a floored one does not. Callers
/// confirm a reported stall against a residual-scale floor before accepting
/// the iterate.
#[derive(Clone, Debug)]
pub struct StallWindow {
    history: Vec<f64>,
}

/// Number of consecutive updates inspected for progress.
const STALL_WINDOW: usize = 5;

impl StallWindow {
    pub fn new() -> Self {
        StallWindow {
            history: Vec::with_capacity(STALL_WINDOW),
        }
    }

    /// Records an update norm; true means no meaningful progress across the
    /// whole window. The window drains on a stall report so the signal
    /// re-arms only after as many fresh iterations.
    pub fn push(&mut self, update_norm: f64) -> bool {
        self.history.push(update_norm);
        if self.history.len() < STALL_WINDOW {
            return false;
        }
        let oldest = self.history[self.history.len() - STALL_WINDOW];
        let stalled = update_norm > 0.5 * oldest;
        if stalled {
            self.history.clear();
        }
        stalled
    }
}

impl Default for StallWindow {
    fn default() -> Self {
        Self::new()
    }
}

/// Smallest residual norm meaningfully distinguishable from zero for a
/// system with operator norm `op_norm` and solution scale `sol_norm`:
/// a modest multiple of eps times the magnitude of the terms whose
/// cancellation produces the residual. Iterations whose updates stall above
/// tolerance are accepted as converged only below this floor.
pub fn residual_rounding_floor(op_norm: f64, sol_norm: f64, rhs_norm: f64) -> f64 {
    64.0 * f64::EPSILON * (op_norm * sol_norm.abs().max(1.0) + rhs_norm.abs())
}
