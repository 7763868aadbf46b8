//! The three benchmark parametrized PDEs behind one interface: residual
//! evaluation, linearized iteration operators, boundary handling, forcing
//! terms, and the training/test parameter grids.
//!
//! All problems live on [-1,1]^2:
//! - `pbe`: D lap(u) = sinh(u) + g, g a Gaussian source, u = 0 at x1 = -1,
//!   u = V at x1 = +1, zero Neumann at x2 = +-1, with mu = (sqrt(D), V).
//! - `cubic`: -mu2 lap(u) + u (u - mu1)^2 = f, homogeneous Dirichlet.
//! - `convdiff`: -mu2 lap(u) + u (|grad u| + mu1)^1.5 = f, homogeneous
//!   Dirichlet.
//!
//! The scalar kernels [`pointwise_residual`] and [`pointwise_linearized`] are
//! the single source of the nonlinear formulas; the full-grid and reduced
//! solvers both call them, so the two sides agree operation for operation.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Result, RocError};
use crate::fdm_core::{
    assemble_gradient, assemble_laplacian, build_grid, BoundaryLayout, Field, Grid, NodeClass,
    StencilOperator,
};

/// Stable problem identifiers; the strings double as the CLI vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProblemId {
    Pbe,
    Cubic,
    Convdiff,
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemId::Pbe => "pbe",
            ProblemId::Cubic => "cubic",
            ProblemId::Convdiff => "convdiff",
        })
    }
}

impl FromStr for ProblemId {
    type Err = RocError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pbe" => Ok(ProblemId::Pbe),
            "cubic" => Ok(ProblemId::Cubic),
            "convdiff" => Ok(ProblemId::Convdiff),
            other => Err(RocError::InvalidArgument(format!(
                "unknown problem id '{other}' (expected pbe|cubic|convdiff)"
            ))),
        }
    }
}

/// Nonlinear iteration family used by both the truth and the reduced solver.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IterationStyle {
    Newton,
    FixedPoint,
}

/// A point mu = (mu1, mu2) in a problem's parameter domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Parameter {
    pub mu1: f64,
    pub mu2: f64,
}

impl Parameter {
    pub fn new(mu1: f64, mu2: f64) -> Self {
        Self { mu1, mu2 }
    }
}

/// Closed parameter rectangle with a relative acceptance slack that absorbs
/// the rounding of `a + i*h` endpoint arithmetic.
#[derive(Clone, Copy, Debug)]
pub struct Domain {
    pub mu1_lo: f64,
    pub mu1_hi: f64,
    pub mu2_lo: f64,
    pub mu2_hi: f64,
}

impl Domain {
    pub fn contains(&self, p: Parameter) -> bool {
        let s1 = 1e-9 * (self.mu1_hi - self.mu1_lo);
        let s2 = 1e-9 * (self.mu2_hi - self.mu2_lo);
        p.mu1 >= self.mu1_lo - s1
            && p.mu1 <= self.mu1_hi + s1
            && p.mu2 >= self.mu2_lo - s2
            && p.mu2 <= self.mu2_hi + s2
    }
}

/// Collocation-row classification stored with reduced models so the online
/// solver can impose boundary values without touching the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum RowKind {
    /// Interior or Neumann node: the discretized PDE holds here.
    Pde = 0,
    /// Dirichlet node with boundary value 0.
    BcZero = 1,
    /// Dirichlet node whose boundary value is mu2 (the pbe voltage side).
    BcMu2 = 2,
}

impl RowKind {
    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(RowKind::Pde),
            1 => Ok(RowKind::BcZero),
            2 => Ok(RowKind::BcMu2),
            other => Err(RocError::Format(format!("unknown row kind {other}"))),
        }
    }

    /// Boundary value imposed at a Dirichlet row; zero for PDE rows.
    pub fn bc_value(&self, mu: Parameter) -> f64 {
        match self {
            RowKind::Pde | RowKind::BcZero => 0.0,
            RowKind::BcMu2 => mu.mu2,
        }
    }
}

/// Static description of one benchmark problem.
#[derive(Clone, Copy, Debug)]
pub struct ProblemSpec {
    pub id: ProblemId,
    pub domain: Domain,
    pub iteration_style: IterationStyle,
    pub layout: BoundaryLayout,
}

impl ProblemSpec {
    pub fn new(id: ProblemId) -> Self {
        match id {
            ProblemId::Pbe => ProblemSpec {
                id,
                domain: Domain {
                    mu1_lo: 0.08,
                    mu1_hi: 0.4,
                    mu2_lo: 0.0,
                    mu2_hi: 5.0,
                },
                iteration_style: IterationStyle::Newton,
                layout: BoundaryLayout::dirichlet_x1_neumann_x2(),
            },
            ProblemId::Cubic => ProblemSpec {
                id,
                domain: Domain {
                    mu1_lo: 0.2,
                    mu1_hi: 5.0,
                    mu2_lo: 0.2,
                    mu2_hi: 2.0,
                },
                iteration_style: IterationStyle::Newton,
                layout: BoundaryLayout::all_dirichlet(),
            },
            ProblemId::Convdiff => ProblemSpec {
                id,
                domain: Domain {
                    mu1_lo: 1.0,
                    mu1_hi: 33.0,
                    mu2_lo: 1.0,
                    mu2_hi: 5.0,
                },
                iteration_style: IterationStyle::FixedPoint,
                layout: BoundaryLayout::all_dirichlet(),
            },
        }
    }

    /// Validates a parameter against the domain.
    pub fn validate(&self, p: Parameter) -> Result<()> {
        if self.domain.contains(p) {
            Ok(())
        } else {
            Err(RocError::DomainViolation {
                problem: self.id,
                mu1: p.mu1,
                mu2: p.mu2,
            })
        }
    }

    /// Bounds-checked parameter construction.
    pub fn parameter(&self, mu1: f64, mu2: f64) -> Result<Parameter> {
        let p = Parameter::new(mu1, mu2);
        self.validate(p)?;
        Ok(p)
    }

    /// Collocation-row kind of a node under this problem's boundary layout.
    pub fn row_kind(&self, grid: &Grid, node: usize) -> RowKind {
        if grid.class(node) != NodeClass::Dirichlet {
            return RowKind::Pde;
        }
        match self.id {
            // Voltage side x1 = +1 carries u = mu2; the x1 = -1 side is zero.
            ProblemId::Pbe => {
                let (i1, _) = grid.lattice(node);
                if i1 == grid.k() {
                    RowKind::BcMu2
                } else {
                    RowKind::BcZero
                }
            }
            ProblemId::Cubic | ProblemId::Convdiff => RowKind::BcZero,
        }
    }
}

/// Argument bound for sinh/cosh evaluation. Solutions stay far below this;
/// the clamp only protects diverging iterates from overflowing to infinity.
pub const HYPERBOLIC_CLAMP: f64 = 700.0;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of sinh/cosh arguments clamped since the last reset.
pub fn clamp_event_count() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

pub fn reset_clamp_event_count() {
    CLAMP_EVENTS.store(0, Ordering::Relaxed);
}

fn clamped(u: f64) -> f64 {
    if u.abs() > HYPERBOLIC_CLAMP {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
        u.clamp(-HYPERBOLIC_CLAMP, HYPERBOLIC_CLAMP)
    } else {
        u
    }
}

/// Nodal residual value from local quantities: the solution value, its
/// discrete Laplacian and gradient components, and the forcing value at the
/// node. Dirichlet rows are handled by the caller via [`RowKind::bc_value`].
pub fn pointwise_residual(
    id: ProblemId,
    mu: Parameter,
    u: f64,
    lap: f64,
    gx: f64,
    gy: f64,
    f: f64,
) -> f64 {
    match id {
        ProblemId::Pbe => mu.mu1 * mu.mu1 * lap - clamped(u).sinh() - f,
        ProblemId::Cubic => {
            let d = u - mu.mu1;
            -mu.mu2 * lap + u * (d * d) - f
        }
        ProblemId::Convdiff => {
            let speed = (gx * gx + gy * gy).sqrt() + mu.mu1;
            -mu.mu2 * lap + u * speed.powf(1.5) - f
        }
    }
}

/// Coefficients of one linearized-iteration row: the next iterate solves
/// `lap_coeff * lap(u_next) + diag * u_next = rhs` at this node, built from
/// the previous iterate's local values.
#[derive(Clone, Copy, Debug)]
pub struct LinearizedPoint {
    pub lap_coeff: f64,
    pub diag: f64,
    pub rhs: f64,
}

/// Linearized-step data from local quantities of the previous iterate.
/// Newton linearization for pbe/cubic, frozen-coefficient fixed point for
/// convdiff.
pub fn pointwise_linearized(
    id: ProblemId,
    mu: Parameter,
    u: f64,
    gx: f64,
    gy: f64,
    f: f64,
) -> LinearizedPoint {
    match id {
        ProblemId::Pbe => {
            let uc = clamped(u);
            let (sh, ch) = (uc.sinh(), uc.cosh());
            LinearizedPoint {
                lap_coeff: mu.mu1 * mu.mu1,
                diag: -ch,
                rhs: f + sh - ch * u,
            }
        }
        ProblemId::Cubic => {
            let d = u - mu.mu1;
            let g = u * d * d;
            let gp = d * d + 2.0 * u * d;
            LinearizedPoint {
                lap_coeff: -mu.mu2,
                diag: gp,
                rhs: gp * u - g + f,
            }
        }
        ProblemId::Convdiff => {
            let speed = (gx * gx + gy * gy).sqrt() + mu.mu1;
            LinearizedPoint {
                lap_coeff: -mu.mu2,
                diag: speed.powf(1.5),
                rhs: f,
            }
        }
    }
}

/// A problem bound to a grid, with the stencil operators and the forcing
/// field assembled once.
pub struct Discretization {
    spec: ProblemSpec,
    grid: Grid,
    lap: StencilOperator,
    gx: StencilOperator,
    gy: StencilOperator,
    forcing: Field,
}

impl Discretization {
    /// Builds the grid for `k` intervals under the problem's boundary layout
    /// and assembles the operators and the forcing term.
    pub fn new(spec: ProblemSpec, k: usize) -> Result<Self> {
        let grid = build_grid(k, spec.layout)?;
        let forcing = assemble_forcing(spec, &grid);
        Ok(Self::from_parts(spec, grid, forcing))
    }

    /// As [`Discretization::new`] but with a caller-supplied forcing field
    /// (zero on Dirichlet rows by convention).
    pub fn with_forcing(spec: ProblemSpec, k: usize, forcing: Field) -> Result<Self> {
        let grid = build_grid(k, spec.layout)?;
        if forcing.len() != grid.node_count() {
            return Err(RocError::InvalidArgument(format!(
                "forcing length {} does not match node count {}",
                forcing.len(),
                grid.node_count()
            )));
        }
        Ok(Self::from_parts(spec, grid, forcing))
    }

    fn from_parts(spec: ProblemSpec, grid: Grid, forcing: Field) -> Self {
        let lap = assemble_laplacian(&grid);
        let (gx, gy) = assemble_gradient(&grid);
        Self {
            spec,
            grid,
            lap,
            gx,
            gy,
            forcing,
        }
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn laplacian(&self) -> &StencilOperator {
        &self.lap
    }

    pub fn gradient_x1(&self) -> &StencilOperator {
        &self.gx
    }

    pub fn gradient_x2(&self) -> &StencilOperator {
        &self.gy
    }

    /// Forcing values on PDE rows; zero on Dirichlet rows (their boundary
    /// values are parameter-dependent and imposed separately).
    pub fn forcing(&self) -> &Field {
        &self.forcing
    }

    /// Whether the reduced formulation needs gradient data at collocation
    /// points.
    pub fn uses_gradient(&self) -> bool {
        matches!(self.spec.id, ProblemId::Convdiff)
    }

    /// Full-grid residual of `u` at `mu`: PDE defect on interior and Neumann
    /// rows, `u - bc` on Dirichlet rows.
    pub fn residual(&self, u: &Field, mu: Parameter) -> Result<Field> {
        self.spec.validate(mu)?;
        if u.len() != self.grid.node_count() {
            return Err(RocError::InvalidArgument(format!(
                "field length {} does not match node count {}",
                u.len(),
                self.grid.node_count()
            )));
        }
        if !u.all_finite() {
            return Err(RocError::InvalidArgument(
                "residual input contains non-finite entries".to_string(),
            ));
        }
        let lap_u = self.lap.apply(&u.values);
        let (gx_u, gy_u) = if self.uses_gradient() {
            (self.gx.apply(&u.values), self.gy.apply(&u.values))
        } else {
            (Vec::new(), Vec::new())
        };
        let n = u.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let kind = self.spec.row_kind(&self.grid, i);
            out[i] = if kind == RowKind::Pde {
                let (gx, gy) = if self.uses_gradient() {
                    (gx_u[i], gy_u[i])
                } else {
                    (0.0, 0.0)
                };
                pointwise_residual(
                    self.spec.id,
                    mu,
                    u.values[i],
                    lap_u[i],
                    gx,
                    gy,
                    self.forcing.values[i],
                )
            } else {
                u.values[i] - kind.bc_value(mu)
            };
        }
        Ok(Field::from_values(out))
    }

    /// One linearized iteration: returns (A, b) such that the next iterate
    /// solves A u = b. Dirichlet rows are identity with the boundary value on
    /// the right-hand side.
    pub fn linearized_step(&self, u_prev: &Field, mu: Parameter) -> Result<(StencilOperator, Field)> {
        self.spec.validate(mu)?;
        if !u_prev.all_finite() {
            return Err(RocError::InvalidArgument(
                "linearization input contains non-finite entries".to_string(),
            ));
        }
        let n = self.grid.node_count();
        let (gx_u, gy_u) = if self.uses_gradient() {
            (self.gx.apply(&u_prev.values), self.gy.apply(&u_prev.values))
        } else {
            (Vec::new(), Vec::new())
        };
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut b = vec![0.0; n];
        for i in 0..n {
            let kind = self.spec.row_kind(&self.grid, i);
            if kind != RowKind::Pde {
                rows.push(vec![(i, 1.0)]);
                b[i] = kind.bc_value(mu);
                continue;
            }
            let (gx, gy) = if self.uses_gradient() {
                (gx_u[i], gy_u[i])
            } else {
                (0.0, 0.0)
            };
            let pt = pointwise_linearized(
                self.spec.id,
                mu,
                u_prev.values[i],
                gx,
                gy,
                self.forcing.values[i],
            );
            let (cols, vals) = self.lap.row(i);
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(cols.len());
            for (&j, &v) in cols.iter().zip(vals) {
                let mut coeff = pt.lap_coeff * v;
                if j == i {
                    coeff += pt.diag;
                }
                row.push((j, coeff));
            }
            rows.push(row);
            b[i] = pt.rhs;
        }
        Ok((StencilOperator::from_rows(n, rows), Field::from_values(b)))
    }

    /// Initial iterate: zero with Dirichlet boundary values imposed.
    pub fn initial_guess(&self, mu: Parameter) -> Field {
        let n = self.grid.node_count();
        let mut u = vec![0.0; n];
        for i in 0..n {
            let kind = self.spec.row_kind(&self.grid, i);
            if kind != RowKind::Pde {
                u[i] = kind.bc_value(mu);
            }
        }
        Field::from_values(u)
    }
}

fn assemble_forcing(spec: ProblemSpec, grid: &Grid) -> Field {
    let n = grid.node_count();
    let mut f = vec![0.0; n];
    for i in 0..n {
        if grid.class(i) == NodeClass::Dirichlet {
            continue;
        }
        let (x1, x2) = grid.coords(i);
        f[i] = match spec.id {
            // Gaussian source centered at (0.2, -0.1).
            ProblemId::Pbe => {
                (-50.0 * ((x1 - 0.2) * (x1 - 0.2) + (x2 + 0.1) * (x2 + 0.1))).exp()
            }
            ProblemId::Cubic | ProblemId::Convdiff => {
                100.0
                    * (2.0 * std::f64::consts::PI * x1).sin()
                    * (2.0 * std::f64::consts::PI * x2).cos()
            }
        };
    }
    Field::from_values(f)
}

/// Role of a parameter grid within a study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridRole {
    Train,
    Test,
    Test2,
}

impl fmt::Display for GridRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridRole::Train => "train",
            GridRole::Test => "test",
            GridRole::Test2 => "test2",
        })
    }
}

/// Tensor grid of parameters generated from `a : h : b` progressions along
/// each parameter axis, ordered mu1-major (mu2 varies fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterGrid {
    pub role: GridRole,
    pub mu1_values: Vec<f64>,
    pub mu2_values: Vec<f64>,
    pub params: Vec<Parameter>,
}

impl ParameterGrid {
    fn from_axes(role: GridRole, mu1_values: Vec<f64>, mu2_values: Vec<f64>) -> Self {
        let mut params = Vec::with_capacity(mu1_values.len() * mu2_values.len());
        for &m1 in &mu1_values {
            for &m2 in &mu2_values {
                params.push(Parameter::new(m1, m2));
            }
        }
        Self {
            role,
            mu1_values,
            mu2_values,
            params,
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Every 2nd value per direction (indices 0, 2, 4, ...), the desk-scale
    /// training set.
    pub fn coarsened(&self) -> ParameterGrid {
        let take = |v: &[f64]| v.iter().copied().step_by(2).collect::<Vec<_>>();
        ParameterGrid::from_axes(self.role, take(&self.mu1_values), take(&self.mu2_values))
    }
}

/// Values of the progression `a : h : b`: `a + i*h` for each i with
/// `a + i*h <= b` up to rounding slack.
fn progression(a: f64, h: f64, b: f64) -> Vec<f64> {
    let count = ((b - a) / h + 1e-9).floor() as usize + 1;
    (0..count).map(|i| a + i as f64 * h).collect()
}

/// The training, test, and timing (test2) parameter grids of a problem.
#[derive(Clone, Debug)]
pub struct ParameterGrids {
    pub train: ParameterGrid,
    pub test: ParameterGrid,
    pub test2: ParameterGrid,
}

/// Exact study grids for each problem.
pub fn make_parameter_grids(id: ProblemId) -> ParameterGrids {
    let axes = |role, a1: (f64, f64, f64), a2: (f64, f64, f64)| {
        ParameterGrid::from_axes(
            role,
            progression(a1.0, a1.1, a1.2),
            progression(a2.0, a2.1, a2.2),
        )
    };
    match id {
        ProblemId::Pbe => ParameterGrids {
            train: axes(GridRole::Train, (0.08, 0.02, 0.4), (0.0, 0.25, 5.0)),
            test: axes(GridRole::Test, (0.085, 0.01, 0.395), (0.4, 0.5, 4.4)),
            test2: axes(GridRole::Test2, (0.09, 0.01, 0.31), (0.7, 0.2, 1.5)),
        },
        ProblemId::Cubic => {
            // Parameter-domain lattice of 128 x 64 cells defines the unit
            // steps h1, h2; the study grids stride multiples of them.
            let h1 = (5.0 - 0.2) / 128.0;
            let h2 = (2.0 - 0.2) / 64.0;
            ParameterGrids {
                train: axes(
                    GridRole::Train,
                    (0.2, 4.0 * h1, 5.0),
                    (0.2, 4.0 * h2, 2.0),
                ),
                test: axes(
                    GridRole::Test,
                    (0.2 + 2.0 * h1, 4.0 * h1, 5.0 - 2.0 * h1),
                    (0.2 + 2.0 * h2, 4.0 * h2, 2.0 - 2.0 * h2),
                ),
                test2: axes(
                    GridRole::Test2,
                    (0.2 + 3.0 * h1, 4.0 * h1, 5.0 - 3.0 * h1),
                    (0.2 + 3.0 * h2, 2.0 * h2, 2.0 - 3.0 * h2),
                ),
            }
        }
        ProblemId::Convdiff => {
            let h1 = 32.0 / 256.0;
            let h2 = 4.0 / 32.0;
            ParameterGrids {
                train: axes(GridRole::Train, (1.0, 3.0 * h1, 33.0), (1.0, 3.0 * h2, 5.0)),
                test: axes(
                    GridRole::Test,
                    (1.0 + 2.0 * h1, 3.0 * h1, 33.0 - 2.0 * h1),
                    (1.0 + 2.0 * h2, 3.0 * h2, 5.0 - 2.0 * h2),
                ),
                test2: axes(GridRole::Test2, (1.0, 1.0, 33.0), (1.0, 0.25, 5.0)),
            }
        }
    }
}
