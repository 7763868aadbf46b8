//! Uniform second-order finite differences on [-1,1]^2: grid construction,
//! discrete Laplacian and gradient stencils, boundary classification, and
//! restriction of nodal fields to index subsets.
//!
//! Nodes are ordered x1-major: `index(i1, i2) = i1 * (K + 1) + i2`, so x2
//! varies fastest. All index sets elsewhere in the crate refer to this
//! ordering.

use crate::error::{Result, RocError};

/// Smallest supported interval count per direction; the one-sided boundary
/// gradient stencil needs three nodes per line.
pub const MIN_K: usize = 2;

/// Per-node boundary classification.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    Dirichlet,
    Neumann,
}

/// Condition imposed on one side of the square.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SideCondition {
    Dirichlet,
    Neumann,
}

/// Boundary conditions by side. Corners touching a Dirichlet side are
/// Dirichlet regardless of the other side (Dirichlet wins the tie).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryLayout {
    /// x1 = -1
    pub left: SideCondition,
    /// x1 = +1
    pub right: SideCondition,
    /// x2 = -1
    pub bottom: SideCondition,
    /// x2 = +1
    pub top: SideCondition,
}

impl BoundaryLayout {
    pub fn all_dirichlet() -> Self {
        Self {
            left: SideCondition::Dirichlet,
            right: SideCondition::Dirichlet,
            bottom: SideCondition::Dirichlet,
            top: SideCondition::Dirichlet,
        }
    }

    /// Dirichlet on the x1 = -1 and x1 = +1 sides, homogeneous Neumann on the
    /// x2 = -1 and x2 = +1 sides.
    pub fn dirichlet_x1_neumann_x2() -> Self {
        Self {
            left: SideCondition::Dirichlet,
            right: SideCondition::Dirichlet,
            bottom: SideCondition::Neumann,
            top: SideCondition::Neumann,
        }
    }
}

/// Uniform tensor grid on [-1,1]^2 with K intervals per direction and
/// (K+1)^2 nodes, each tagged with its boundary class.
#[derive(Clone, Debug)]
pub struct Grid {
    k: usize,
    h: f64,
    layout: BoundaryLayout,
    classes: Vec<NodeClass>,
}

/// Builds the grid for `k` intervals per direction under the given boundary
/// layout. Fails for `k < 2`.
pub fn build_grid(k: usize, layout: BoundaryLayout) -> Result<Grid> {
    if k < MIN_K {
        return Err(RocError::InvalidArgument(format!(
            "grid needs at least {MIN_K} intervals per direction, got {k}"
        )));
    }
    let np = k + 1;
    let mut classes = vec![NodeClass::Interior; np * np];
    for i1 in 0..np {
        for i2 in 0..np {
            let mut sides: Vec<SideCondition> = Vec::with_capacity(2);
            if i1 == 0 {
                sides.push(layout.left);
            }
            if i1 == k {
                sides.push(layout.right);
            }
            if i2 == 0 {
                sides.push(layout.bottom);
            }
            if i2 == k {
                sides.push(layout.top);
            }
            if sides.is_empty() {
                continue;
            }
            let class = if sides.contains(&SideCondition::Dirichlet) {
                NodeClass::Dirichlet
            } else {
                NodeClass::Neumann
            };
            classes[i1 * np + i2] = class;
        }
    }
    Ok(Grid {
        k,
        h: 2.0 / k as f64,
        layout,
        classes,
    })
}

impl Grid {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Nodes per direction (K + 1).
    pub fn points_per_dir(&self) -> usize {
        self.k + 1
    }

    /// Total node count (K + 1)^2; all nodes count, boundary included.
    pub fn node_count(&self) -> usize {
        (self.k + 1) * (self.k + 1)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn layout(&self) -> BoundaryLayout {
        self.layout
    }

    /// x1-major node index.
    pub fn index(&self, i1: usize, i2: usize) -> usize {
        debug_assert!(i1 <= self.k && i2 <= self.k);
        i1 * (self.k + 1) + i2
    }

    /// Inverse of [`Grid::index`].
    pub fn lattice(&self, idx: usize) -> (usize, usize) {
        let np = self.k + 1;
        (idx / np, idx % np)
    }

    pub fn coords(&self, idx: usize) -> (f64, f64) {
        let (i1, i2) = self.lattice(idx);
        (-1.0 + i1 as f64 * self.h, -1.0 + i2 as f64 * self.h)
    }

    pub fn class(&self, idx: usize) -> NodeClass {
        self.classes[idx]
    }

    pub fn classes(&self) -> &[NodeClass] {
        &self.classes
    }

    pub fn is_dirichlet(&self, idx: usize) -> bool {
        self.classes[idx] == NodeClass::Dirichlet
    }
}

/// Nodal values of a function on the full grid, ordered like [`Grid`] nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn inf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Sparse matrix of a linear finite-difference operator in CSR layout. Row i
/// holds the equation coefficients at node i; columns within a row are stored
/// in ascending order and are unique.
#[derive(Clone, Debug, PartialEq)]
pub struct StencilOperator {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl StencilOperator {
    /// Builds from per-row entry lists; each row's entries must have unique,
    /// ascending column indices.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nrows = rows.len();
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for row in &rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for &(j, v) in row {
                debug_assert!(j < ncols);
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// Offset of row i's first entry in the value stream.
    pub fn row_start(&self, i: usize) -> usize {
        self.row_ptr[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Operator infinity norm: the largest absolute row sum. Sets the scale
    /// of rounding errors in residual evaluations and linear solves.
    pub fn inf_norm(&self) -> f64 {
        (0..self.nrows)
            .map(|i| {
                let (_, vals) = self.row(i);
                vals.iter().map(|v| v.abs()).sum()
            })
            .fold(0.0, f64::max)
    }

    /// Matrix-vector product.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (j, v) in cols.iter().zip(vals) {
                acc += v * x[*j];
            }
            y[i] = acc;
        }
        y
    }

    /// Value of row i applied to x.
    pub fn apply_row(&self, i: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.row(i);
        let mut acc = 0.0;
        for (j, v) in cols.iter().zip(vals) {
            acc += v * x[*j];
        }
        acc
    }
}

/// Second-order 5-point Laplacian. Interior rows use the standard stencil;
/// Neumann rows eliminate the ghost node by mirroring (the zero normal
/// derivative folds the outside neighbor onto the inside one, preserving
/// second order); Dirichlet rows are identity so the problem modules can
/// impose boundary values.
pub fn assemble_laplacian(grid: &Grid) -> StencilOperator {
    let np = grid.points_per_dir();
    let k = grid.k();
    let n = grid.node_count();
    let ih2 = 1.0 / (grid.h() * grid.h());
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for i1 in 0..np {
        for i2 in 0..np {
            let idx = grid.index(i1, i2);
            if grid.class(idx) == NodeClass::Dirichlet {
                rows.push(vec![(idx, 1.0)]);
                continue;
            }
            // Start from the 5-point molecule and fold out-of-domain
            // neighbors back across the boundary (ghost elimination).
            let mut entries: Vec<(usize, f64)> = vec![(idx, -4.0 * ih2)];
            let add = |target: usize, coeff: f64, entries: &mut Vec<(usize, f64)>| {
                if let Some(e) = entries.iter_mut().find(|e| e.0 == target) {
                    e.1 += coeff;
                } else {
                    entries.push((target, coeff));
                }
            };
            let neighbors = [
                (i1 as isize - 1, i2 as isize),
                (i1 as isize + 1, i2 as isize),
                (i1 as isize, i2 as isize - 1),
                (i1 as isize, i2 as isize + 1),
            ];
            for (j1, j2) in neighbors {
                let m1 = reflect(j1, k);
                let m2 = reflect(j2, k);
                add(grid.index(m1, m2), ih2, &mut entries);
            }
            entries.sort_by_key(|e| e.0);
            rows.push(entries);
        }
    }
    StencilOperator::from_rows(n, rows)
}

/// Mirrors an out-of-range lattice coordinate back inside (ghost elimination
/// for a homogeneous Neumann condition): -1 -> 1 and K+1 -> K-1.
fn reflect(j: isize, k: usize) -> usize {
    if j < 0 {
        (-j) as usize
    } else if j as usize > k {
        2 * k - j as usize
    } else {
        j as usize
    }
}

/// Second-order first-derivative operators (d/dx1, d/dx2): central differences
/// at nodes with both neighbors, one-sided three-point stencils on the
/// boundary lines.
pub fn assemble_gradient(grid: &Grid) -> (StencilOperator, StencilOperator) {
    let np = grid.points_per_dir();
    let k = grid.k();
    let n = grid.node_count();
    let i2h = 1.0 / (2.0 * grid.h());
    let mut gx_rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut gy_rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for i1 in 0..np {
        for i2 in 0..np {
            let idx = grid.index(i1, i2);
            // d/dx1: neighbors stride by np.
            gx_rows.push(line_derivative_row(idx, i1, k, np, i2h));
            // d/dx2: neighbors stride by 1.
            gy_rows.push(line_derivative_row(idx, i2, k, 1, i2h));
        }
    }
    (
        StencilOperator::from_rows(n, gx_rows),
        StencilOperator::from_rows(n, gy_rows),
    )
}

fn line_derivative_row(
    idx: usize,
    pos: usize,
    k: usize,
    stride: usize,
    i2h: f64,
) -> Vec<(usize, f64)> {
    if pos == 0 {
        vec![
            (idx, -3.0 * i2h),
            (idx + stride, 4.0 * i2h),
            (idx + 2 * stride, -i2h),
        ]
    } else if pos == k {
        vec![
            (idx - 2 * stride, i2h),
            (idx - stride, -4.0 * i2h),
            (idx, 3.0 * i2h),
        ]
    } else {
        vec![(idx - stride, -i2h), (idx + stride, i2h)]
    }
}

/// Pure selection of field values at the given indices, in the given order.
pub fn restrict(field: &Field, indices: &[usize]) -> Result<Vec<f64>> {
    let n = field.len();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= n {
            return Err(RocError::InvalidArgument(format!(
                "restriction index {i} out of range for field of length {n}"
            )));
        }
        out.push(field.values[i]);
    }
    Ok(out)
}
