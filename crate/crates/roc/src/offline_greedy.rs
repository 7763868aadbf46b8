//! Offline construction of reduced collocation models: interpolatory
//! Gram-Schmidt basis growth, greedy parameter selection driven by one of
//! three error indicators, the merged over-collocation point set, and a
//! versioned binary model format.
//!
//! A model built here carries two point tracks. The solution track picks one
//! interpolation point per basis vector; the residual track picks one per
//! accepted residual direction, lagging the solution track by one. Their
//! union, in growth order with duplicates skipped, is the collocation set on
//! which the online solver operates.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RocError};
use crate::fdm_core::Field;
use crate::linalg::{dot, dot_columns, RowMatrix};
use crate::online_solver::{solve_reduced_unchecked, ReducedOptions};
use crate::problems::{
    pointwise_residual, Discretization, Parameter, ProblemId, RowKind,
};
use crate::truth_solver::{solve_truth, TruthOptions};

/// Error indicator steering the greedy parameter selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndicatorKind {
    /// L1 norm of the reduced coefficients mapped to raw-snapshot
    /// coordinates; equals 1 at previously selected parameters.
    L1,
    /// Infinity norm of the reduced residual at the active collocation rows;
    /// cost independent of the grid size.
    R2,
    /// Euclidean norm of the full-grid residual of the lifted solution; the
    /// expensive baseline.
    Res,
}

impl std::fmt::Display for IndicatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IndicatorKind::L1 => "l1",
            IndicatorKind::R2 => "r2",
            IndicatorKind::Res => "res",
        })
    }
}

impl std::str::FromStr for IndicatorKind {
    type Err = RocError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(IndicatorKind::L1),
            "r2" => Ok(IndicatorKind::R2),
            "res" => Ok(IndicatorKind::Res),
            other => Err(RocError::InvalidArgument(format!(
                "unknown indicator '{other}' (expected l1|r2|res)"
            ))),
        }
    }
}

impl IndicatorKind {
    fn to_u8(self) -> u8 {
        match self {
            IndicatorKind::L1 => 0,
            IndicatorKind::R2 => 1,
            IndicatorKind::Res => 2,
        }
    }

    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(IndicatorKind::L1),
            1 => Ok(IndicatorKind::R2),
            2 => Ok(IndicatorKind::Res),
            other => Err(RocError::Format(format!("unknown indicator tag {other}"))),
        }
    }
}

/// Relative threshold below which a candidate is rejected as linearly
/// dependent on the current basis.
pub const DEPENDENCE_THRESHOLD: f64 = 1e-12;

/// One interpolatory Gram-Schmidt step: the orthonormalized vector, its new
/// interpolation point, the interpolation coefficients at the prior points,
/// and the scaling value at the new point.
pub(crate) struct EimStep {
    pub vector: Vec<f64>,
    pub point: usize,
    pub interp_coeffs: Vec<f64>,
    pub scale: f64,
}

/// Interpolatory Gram-Schmidt against an existing basis and its points:
/// subtracts the interpolant matching the candidate at the prior points,
/// picks the node where the remainder is largest in magnitude, and scales
/// the remainder to value 1 there.
pub(crate) fn eim_extend(
    candidate: &[f64],
    basis: &[Vec<f64>],
    points: &[usize],
) -> Result<EimStep> {
    if basis.len() != points.len() {
        return Err(RocError::InvalidArgument(format!(
            "basis size {} does not match point count {}",
            basis.len(),
            points.len()
        )));
    }
    let n = basis.len();
    // The interpolation matrix (basis j evaluated at point i) is unit lower
    // triangular by construction, so the coefficients come from forward
    // substitution.
    let mut coeffs = vec![0.0; n];
    for j in 0..n {
        let mut v = candidate[points[j]];
        for i in 0..j {
            v -= coeffs[i] * basis[i][points[j]];
        }
        coeffs[j] = v;
    }
    let mut remainder = candidate.to_vec();
    for (i, b) in basis.iter().enumerate() {
        let c = coeffs[i];
        for (r, &bv) in remainder.iter_mut().zip(b) {
            *r -= c * bv;
        }
    }
    // Lowest node index wins ties, so the selection is deterministic.
    let mut point = 0;
    let mut best = -1.0;
    for (idx, &v) in remainder.iter().enumerate() {
        let a = v.abs();
        if a > best {
            best = a;
            point = idx;
        }
    }
    let scale = remainder[point];
    let candidate_mag = candidate.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if !scale.is_finite() || scale.abs() <= DEPENDENCE_THRESHOLD * candidate_mag.max(1e-300) {
        return Err(RocError::LinearDependence { max_abs: scale.abs() });
    }
    for r in remainder.iter_mut() {
        *r /= scale;
    }
    Ok(EimStep {
        vector: remainder,
        point,
        interp_coeffs: coeffs,
        scale,
    })
}

/// Public form of the interpolatory Gram-Schmidt step: the new basis vector
/// (value 1 at its point, 0 at all prior points) and the selected node.
pub fn eim_orthonormalize(
    candidate: &[f64],
    basis: &[Vec<f64>],
    points: &[usize],
) -> Result<(Vec<f64>, usize)> {
    let step = eim_extend(candidate, basis, points)?;
    Ok((step.vector, step.point))
}

/// A reduced over-collocation model: basis vectors with their full-grid
/// operator images, the merged collocation rows with per-basis restricted
/// values, and the bookkeeping needed to solve at any basis count up to the
/// built size.
pub struct ReducedModel {
    pub problem: ProblemId,
    pub k: usize,
    pub seed: u64,
    pub indicator: IndicatorKind,
    /// Parameters whose truth solutions generated the basis, in order.
    pub snapshot_params: Vec<Parameter>,
    /// Solution-track interpolation points, one per basis vector.
    pub x_s: Vec<usize>,
    /// Residual-track interpolation points; one fewer than the basis count.
    pub x_r: Vec<usize>,
    /// Merged collocation nodes in growth order, duplicates skipped.
    pub xm: Vec<usize>,
    /// `stage_end[n-1]` is the number of active collocation rows when
    /// solving with n basis vectors.
    pub stage_end: Vec<usize>,
    /// Position of each solution-track point within `xm`.
    pub s_pos: Vec<usize>,
    /// Collocation-row classification, parallel to `xm`.
    pub row_kind: Vec<RowKind>,
    /// Forcing values at the collocation nodes, parallel to `xm`.
    pub f_m: Vec<f64>,
    /// Basis values at the collocation nodes (rows follow `xm`).
    pub w_m: RowMatrix,
    /// Discrete Laplacian of each basis vector at the collocation nodes.
    pub lap_m: RowMatrix,
    /// Discrete x1-gradient rows; empty unless the problem needs gradients.
    pub gx_m: RowMatrix,
    /// Discrete x2-gradient rows; empty unless the problem needs gradients.
    pub gy_m: RowMatrix,
    /// Full-grid basis vectors.
    pub basis: Vec<Vec<f64>>,
    /// Full-grid discrete Laplacian of each basis vector.
    pub lap_basis: Vec<Vec<f64>>,
    pub gx_basis: Vec<Vec<f64>>,
    pub gy_basis: Vec<Vec<f64>>,
    /// Residual-track basis vectors (full grid), one per residual point.
    pub residual_basis: Vec<Vec<f64>>,
    /// Upper-triangular change of basis: raw snapshot j equals
    /// `sum_i snapshot_tri[j][i] * basis[i]` with i running over 0..=j.
    pub snapshot_tri: Vec<Vec<f64>>,
    /// Whether the build stopped early (repeated selection or a dependent
    /// candidate) before reaching the requested size.
    pub stagnated: bool,
    pub uses_gradient: bool,
}

impl ReducedModel {
    fn empty(disc: &Discretization, indicator: IndicatorKind, seed: u64) -> Self {
        let uses_gradient = disc.uses_gradient();
        ReducedModel {
            problem: disc.spec().id,
            k: disc.grid().k(),
            seed,
            indicator,
            snapshot_params: Vec::new(),
            x_s: Vec::new(),
            x_r: Vec::new(),
            xm: Vec::new(),
            stage_end: Vec::new(),
            s_pos: Vec::new(),
            row_kind: Vec::new(),
            f_m: Vec::new(),
            w_m: RowMatrix::zeros(0, 0),
            lap_m: RowMatrix::zeros(0, 0),
            gx_m: RowMatrix::zeros(0, 0),
            gy_m: RowMatrix::zeros(0, 0),
            basis: Vec::new(),
            lap_basis: Vec::new(),
            gx_basis: Vec::new(),
            gy_basis: Vec::new(),
            residual_basis: Vec::new(),
            snapshot_tri: Vec::new(),
            stagnated: false,
            uses_gradient,
        }
    }

    /// Number of basis vectors.
    pub fn n_bases(&self) -> usize {
        self.basis.len()
    }

    /// Number of collocation rows at full size.
    pub fn m(&self) -> usize {
        self.xm.len()
    }

    /// Number of active collocation rows when solving with n basis vectors.
    pub fn active_rows(&self, n: usize) -> Result<usize> {
        if n == 0 || n > self.n_bases() {
            return Err(RocError::InvalidArgument(format!(
                "basis count {n} outside 1..={}",
                self.n_bases()
            )));
        }
        Ok(self.stage_end[n - 1])
    }

    /// Maps reduced coefficients (in the orthonormalized basis) to
    /// coordinates in the raw snapshot basis by back substitution on the
    /// triangular change of basis.
    pub fn snapshot_coordinates(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        let n = coeffs.len();
        if n == 0 || n > self.n_bases() {
            return Err(RocError::InvalidArgument(format!(
                "coefficient count {n} outside 1..={}",
                self.n_bases()
            )));
        }
        let mut d = vec![0.0; n];
        for j in (0..n).rev() {
            let mut v = coeffs[j];
            for (i, di) in d.iter().enumerate().take(n).skip(j + 1) {
                v -= self.snapshot_tri[i][j] * di;
            }
            d[j] = v / self.snapshot_tri[j][j];
        }
        Ok(d)
    }

    /// Appends one collocation node if not already present; rows of the
    /// restricted matrices are copied from the full-grid columns so that
    /// restricted and full evaluations agree bit for bit.
    fn append_point(&mut self, disc: &Discretization, node: usize) -> usize {
        if let Some(pos) = self.xm.iter().position(|&p| p == node) {
            return pos;
        }
        let n = self.basis.len();
        self.xm.push(node);
        self.row_kind
            .push(disc.spec().row_kind(disc.grid(), node));
        self.f_m.push(disc.forcing().values[node]);
        let row = |cols: &[Vec<f64>]| cols.iter().map(|c| c[node]).collect::<Vec<_>>();
        self.w_m.push_row(&row(&self.basis));
        self.lap_m.push_row(&row(&self.lap_basis));
        if self.uses_gradient {
            self.gx_m.push_row(&row(&self.gx_basis));
            self.gy_m.push_row(&row(&self.gy_basis));
        }
        debug_assert_eq!(self.w_m.ncols(), n);
        self.xm.len() - 1
    }

    /// Appends one basis vector with its operator images; existing
    /// collocation rows gain the new column.
    fn append_basis(&mut self, disc: &Discretization, xi: Vec<f64>, tri_col: Vec<f64>) {
        let lap_col = disc.laplacian().apply(&xi);
        let col_at = |col: &[f64]| self.xm.iter().map(|&p| col[p]).collect::<Vec<_>>();
        self.w_m.push_column(&col_at(&xi));
        self.lap_m.push_column(&col_at(&lap_col));
        if self.uses_gradient {
            let gx_col = disc.gradient_x1().apply(&xi);
            let gy_col = disc.gradient_x2().apply(&xi);
            self.gx_m.push_column(&col_at(&gx_col));
            self.gy_m.push_column(&col_at(&gy_col));
            self.gx_basis.push(gx_col);
            self.gy_basis.push(gy_col);
        }
        self.basis.push(xi);
        self.lap_basis.push(lap_col);
        self.snapshot_tri.push(tri_col);
    }
}

/// Full-grid residual of the reduced solution defined by `coeffs` over the
/// first `coeffs.len()` basis vectors. Uses the stored operator images of
/// the basis, so restricting the result to collocation rows reproduces the
/// online residual exactly.
pub fn offline_residual_with_coeffs(
    disc: &Discretization,
    model: &ReducedModel,
    mu: Parameter,
    coeffs: &[f64],
) -> Result<Field> {
    let n = coeffs.len();
    if n == 0 || n > model.n_bases() {
        return Err(RocError::InvalidArgument(format!(
            "coefficient count {n} outside 1..={}",
            model.n_bases()
        )));
    }
    disc.spec().validate(mu)?;
    let grid = disc.grid();
    let total = grid.node_count();
    let id = disc.spec().id;
    let mut out = vec![0.0; total];
    for i in 0..total {
        let kind = disc.spec().row_kind(grid, i);
        let u = dot_columns(&model.basis, i, coeffs);
        out[i] = if kind == RowKind::Pde {
            let lap = dot_columns(&model.lap_basis, i, coeffs);
            let (gx, gy) = if model.uses_gradient {
                (
                    dot_columns(&model.gx_basis, i, coeffs),
                    dot_columns(&model.gy_basis, i, coeffs),
                )
            } else {
                (0.0, 0.0)
            };
            pointwise_residual(id, mu, u, lap, gx, gy, disc.forcing().values[i])
        } else {
            u - kind.bc_value(mu)
        };
    }
    Ok(Field::from_values(out))
}

/// Solves the reduced problem with n basis vectors and returns the full-grid
/// residual of the lifted solution together with the solve report.
pub fn offline_residual(
    disc: &Discretization,
    model: &ReducedModel,
    mu: Parameter,
    n: usize,
    opts: &ReducedOptions,
) -> Result<(Field, crate::online_solver::ReducedSolveReport)> {
    let report = solve_reduced_unchecked(model, mu, n, opts)?;
    let residual = offline_residual_with_coeffs(disc, model, mu, &report.coeffs)?;
    Ok((residual, report))
}

/// Greedy build controls.
#[derive(Clone, Debug)]
pub struct GreedyOptions {
    /// Target basis count.
    pub n_max: usize,
    /// Indicator-threshold early stop; only meaningful for residual-based
    /// indicators.
    pub eps_tol: Option<f64>,
    pub indicator: IndicatorKind,
    pub seed: u64,
    /// Reuse each training parameter's previous-level coefficients as the
    /// next sweep's initial guess.
    pub warm_start: bool,
    /// Prescribed selection order (training-set indices); disables the
    /// indicator sweeps.
    pub forced_params: Option<Vec<usize>>,
    pub truth: TruthOptions,
    pub reduced: ReducedOptions,
}

impl GreedyOptions {
    pub fn new(n_max: usize, indicator: IndicatorKind) -> Self {
        GreedyOptions {
            n_max,
            eps_tol: None,
            indicator,
            seed: 7,
            warm_start: false,
            forced_params: None,
            truth: TruthOptions::default(),
            reduced: ReducedOptions::default(),
        }
    }
}

/// One accepted greedy stage.
#[derive(Clone, Copy, Debug)]
pub struct TraceRow {
    /// Basis count after this stage.
    pub n: usize,
    pub mu1: f64,
    pub mu2: f64,
    /// Indicator value that selected this parameter; NaN for the first stage
    /// and for prescribed selections.
    pub indicator_value: f64,
    /// Solution-track node added at this stage.
    pub x_star_index: usize,
    /// Residual-track node added at this stage; -1 for the first stage.
    pub x_starstar_index: i64,
    /// Wall-clock seconds since the build started.
    pub cum_offline_seconds: f64,
}

/// Build history: one row per accepted stage plus diagnostics that have no
/// place in the row schema.
#[derive(Clone, Debug, Default)]
pub struct GreedyTrace {
    pub rows: Vec<TraceRow>,
    /// Per-stage maximum of |indicator - 1| over the already selected
    /// parameters; recorded only for sweeps with the L1 indicator.
    pub snapshot_l1_max_dev: Vec<f64>,
}

fn indicator_value(
    model: &ReducedModel,
    disc: &Discretization,
    mu: Parameter,
    kind: IndicatorKind,
    report: &crate::online_solver::ReducedSolveReport,
) -> Result<f64> {
    if !report.converged {
        return Ok(f64::INFINITY);
    }
    let v = match kind {
        IndicatorKind::L1 => {
            let d = model.snapshot_coordinates(&report.coeffs)?;
            d.iter().map(|x| x.abs()).sum()
        }
        IndicatorKind::R2 => report
            .residual_rows
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.abs())),
        IndicatorKind::Res => {
            let r = offline_residual_with_coeffs(disc, model, mu, &report.coeffs)?;
            r.values.iter().map(|v| v * v).sum::<f64>().sqrt()
        }
    };
    Ok(if v.is_finite() { v } else { f64::INFINITY })
}

/// Supplier of truth solutions for the greedy build; lets drivers route
/// snapshot solves through a disk cache.
pub type TruthProvider<'a> = &'a dyn Fn(Parameter) -> Result<Field>;

/// Builds a reduced model by greedy parameter selection over `train`.
///
/// Each stage sweeps the training set with the current model, selects the
/// parameter with the largest indicator value, computes its truth solution,
/// and extends the basis and both point tracks. The build stops early when
/// the selection repeats a parameter, a candidate is linearly dependent, or
/// a residual indicator falls below `eps_tol`.
pub fn greedy_build(
    disc: &Discretization,
    train: &[Parameter],
    opts: &GreedyOptions,
) -> Result<(ReducedModel, GreedyTrace)> {
    greedy_build_with_truth(disc, train, opts, None)
}

/// As [`greedy_build`] with an optional custom truth supplier. When absent,
/// snapshots come from fresh full-grid solves, which keeps offline timings
/// honest.
pub fn greedy_build_with_truth(
    disc: &Discretization,
    train: &[Parameter],
    opts: &GreedyOptions,
    truth: Option<TruthProvider<'_>>,
) -> Result<(ReducedModel, GreedyTrace)> {
    if train.is_empty() {
        return Err(RocError::InvalidArgument(
            "training set is empty".to_string(),
        ));
    }
    if opts.n_max == 0 {
        return Err(RocError::InvalidArgument("n_max must be positive".to_string()));
    }
    if opts.n_max > train.len() {
        return Err(RocError::InvalidArgument(format!(
            "n_max {} exceeds training-set size {}",
            opts.n_max,
            train.len()
        )));
    }
    if opts.eps_tol.is_some() && opts.indicator == IndicatorKind::L1 {
        return Err(RocError::InvalidArgument(
            "eps-tol stopping requires a residual indicator (r2 or res)".to_string(),
        ));
    }
    if let Some(seq) = &opts.forced_params {
        if seq.len() < opts.n_max {
            return Err(RocError::InvalidArgument(format!(
                "forced selection has {} entries, fewer than n_max {}",
                seq.len(),
                opts.n_max
            )));
        }
        if seq.iter().any(|&i| i >= train.len()) {
            return Err(RocError::InvalidArgument(
                "forced selection index outside the training set".to_string(),
            ));
        }
    }
    for &p in train {
        disc.spec().validate(p)?;
    }

    let start = Instant::now();
    let solve_snapshot = |mu: Parameter| -> Result<Field> {
        match truth {
            Some(f) => f(mu),
            None => Ok(solve_truth(disc, mu, opts.truth)?.solution),
        }
    };
    let mut model = ReducedModel::empty(disc, opts.indicator, opts.seed);
    let mut trace = GreedyTrace::default();
    let mut selected: Vec<usize> = Vec::new();
    let mut warm: Vec<Option<Vec<f64>>> = vec![None; train.len()];

    // First snapshot: prescribed start, or a seeded uniform draw from the
    // training set. A random start is required for the L1 indicator to make
    // progress: deterministic extremal starts (a corner of the parameter
    // box) can make every other training solution an interior point of the
    // first snapshot's span, freezing the sweep at its maximum of 1.
    let first = opts.forced_params.as_ref().map(|s| s[0]).unwrap_or_else(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.random_range(0..train.len())
    });
    let u1 = solve_snapshot(train[first])?;
    let step = eim_extend(&u1.values, &[], &[])?;
    model.append_basis(disc, step.vector, vec![step.scale]);
    model.x_s.push(step.point);
    model.snapshot_params.push(train[first]);
    let pos = model.append_point(disc, step.point);
    model.s_pos.push(pos);
    model.stage_end.push(model.xm.len());
    selected.push(first);
    trace.rows.push(TraceRow {
        n: 1,
        mu1: train[first].mu1,
        mu2: train[first].mu2,
        indicator_value: f64::NAN,
        x_star_index: step.point,
        x_starstar_index: -1,
        cum_offline_seconds: start.elapsed().as_secs_f64(),
    });

    while model.n_bases() < opts.n_max {
        let n = model.n_bases();
        let (next_idx, next_value, next_coeffs) = match &opts.forced_params {
            Some(seq) => {
                let idx = seq[n];
                if selected.contains(&idx) {
                    return Err(RocError::InvalidArgument(
                        "forced selection repeats a parameter".to_string(),
                    ));
                }
                let rep = solve_reduced_unchecked(&model, train[idx], n, &opts.reduced)?;
                (idx, f64::NAN, rep.coeffs)
            }
            None => {
                let mut values = Vec::with_capacity(train.len());
                let mut coeffs_all: Vec<Vec<f64>> = Vec::with_capacity(train.len());
                let mut max_dev = 0.0f64;
                for (idx, &mu) in train.iter().enumerate() {
                    let mut ropts = opts.reduced.clone();
                    if opts.warm_start {
                        ropts.initial_guess = warm[idx].clone();
                    }
                    let rep = solve_reduced_unchecked(&model, mu, n, &ropts)?;
                    if opts.warm_start && rep.converged {
                        warm[idx] = Some(rep.coeffs.clone());
                    }
                    let val = indicator_value(&model, disc, mu, opts.indicator, &rep)?;
                    if opts.indicator == IndicatorKind::L1
                        && rep.converged
                        && selected.contains(&idx)
                    {
                        max_dev = max_dev.max((val - 1.0).abs());
                    }
                    values.push(val);
                    coeffs_all.push(rep.coeffs);
                }
                if opts.indicator == IndicatorKind::L1 {
                    trace.snapshot_l1_max_dev.push(max_dev);
                }
                let best_val = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if let Some(eps) = opts.eps_tol {
                    if best_val <= eps {
                        break;
                    }
                }
                // Selection ranges over parameters not yet in the basis; on
                // an exact tie with a selected parameter the unselected one
                // still carries new information. Only a selected parameter
                // strictly dominating everything else means the indicator
                // has stopped discriminating.
                let chosen = (0..train.len())
                    .find(|idx| values[*idx] == best_val && !selected.contains(idx));
                match chosen {
                    Some(idx) => (idx, best_val, std::mem::take(&mut coeffs_all[idx])),
                    None => {
                        model.stagnated = true;
                        break;
                    }
                }
            }
        };

        let mu_next = train[next_idx];
        // The residual track extends with the current model's defect at the
        // newly selected parameter, so it lags the solution track by one.
        let residual = if next_coeffs.is_empty() {
            disc.residual(&disc.initial_guess(mu_next), mu_next)?
        } else {
            offline_residual_with_coeffs(disc, &model, mu_next, &next_coeffs)?
        };
        let u_next = solve_snapshot(mu_next)?;
        let s_step = match eim_extend(&u_next.values, &model.basis, &model.x_s) {
            Ok(s) => s,
            Err(RocError::LinearDependence { .. }) => {
                model.stagnated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let r_step = match eim_extend(&residual.values, &model.residual_basis, &model.x_r) {
            Ok(s) => s,
            Err(RocError::LinearDependence { .. }) => {
                model.stagnated = true;
                break;
            }
            Err(e) => return Err(e),
        };

        let mut tri_col = s_step.interp_coeffs.clone();
        tri_col.push(s_step.scale);
        model.append_basis(disc, s_step.vector, tri_col);
        model.residual_basis.push(r_step.vector);
        model.snapshot_params.push(mu_next);
        model.x_s.push(s_step.point);
        model.x_r.push(r_step.point);
        let pos = model.append_point(disc, s_step.point);
        model.s_pos.push(pos);
        model.append_point(disc, r_step.point);
        model.stage_end.push(model.xm.len());
        selected.push(next_idx);
        trace.rows.push(TraceRow {
            n: model.n_bases(),
            mu1: mu_next.mu1,
            mu2: mu_next.mu2,
            indicator_value: next_value,
            x_star_index: s_step.point,
            x_starstar_index: r_step.point as i64,
            cum_offline_seconds: start.elapsed().as_secs_f64(),
        });
    }

    // Final-level snapshot consistency sweep for the L1 indicator, covering
    // the level that the main loop never sweeps.
    if opts.forced_params.is_none() && opts.indicator == IndicatorKind::L1 && !model.basis.is_empty()
    {
        let n = model.n_bases();
        let mut max_dev = 0.0f64;
        for &idx in &selected {
            let rep = solve_reduced_unchecked(&model, train[idx], n, &opts.reduced)?;
            if rep.converged {
                let val = indicator_value(&model, disc, train[idx], opts.indicator, &rep)?;
                max_dev = max_dev.max((val - 1.0).abs());
            }
        }
        trace.snapshot_l1_max_dev.push(max_dev);
    }

    Ok((model, trace))
}

/// Orthonormal basis (Euclidean inner product) of the leading principal
/// directions of a snapshot family, computed from the Gram matrix. Returns
/// at most `n_max` vectors, fewer when the spectrum collapses.
pub fn pod_basis(snapshots: &[Vec<f64>], n_max: usize) -> Result<Vec<Vec<f64>>> {
    if snapshots.is_empty() || n_max == 0 {
        return Err(RocError::InvalidArgument(
            "principal-direction basis needs snapshots and a positive size".to_string(),
        ));
    }
    let ns = snapshots.len();
    let mut gram = RowMatrix::zeros(ns, ns);
    for i in 0..ns {
        for j in i..ns {
            let v = dot(&snapshots[i], &snapshots[j]);
            gram.set(i, j, v);
            gram.set(j, i, v);
        }
    }
    let (eigvals, eigvecs) = crate::linalg::self_adjoint_eigen_desc(&gram)?;
    let lead = eigvals[0].max(0.0);
    let mut basis = Vec::new();
    for k in 0..n_max.min(ns) {
        if !(eigvals[k] > lead * 1e-14) {
            break;
        }
        let mut phi = vec![0.0; snapshots[0].len()];
        for (i, snap) in snapshots.iter().enumerate() {
            let w = eigvecs[k][i];
            for (p, &s) in phi.iter_mut().zip(snap) {
                *p += w * s;
            }
        }
        let norm = dot(&phi, &phi).sqrt();
        if norm == 0.0 {
            break;
        }
        for p in phi.iter_mut() {
            *p /= norm;
        }
        basis.push(phi);
    }
    Ok(basis)
}

/// Draws n distinct indices from `0..len` by a partial shuffle with a
/// deterministic generator.
pub fn random_param_sequence(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return Err(RocError::InvalidArgument(format!(
            "cannot draw {n} distinct indices from {len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = rng.random_range(i..len);
        idx.swap(i, j);
    }
    idx.truncate(n);
    Ok(idx)
}

const MODEL_MAGIC: &[u8; 4] = b"ROCM";
const MODEL_VERSION: u32 = 1;
const BYTE_ORDER_MARKER: u32 = 0x0102_0304;

struct ModelWriter<W: Write> {
    out: W,
}

impl<W: Write> ModelWriter<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.out.write_all(&[v])?;
        Ok(())
    }

    fn u32(&mut self, v: u32) -> Result<()> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn usize_slice(&mut self, vs: &[usize]) -> Result<()> {
        for &v in vs {
            self.u64(v as u64)?;
        }
        Ok(())
    }

    fn f64_slice(&mut self, vs: &[f64]) -> Result<()> {
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }
}

struct ModelReader<R: Read> {
    inp: R,
}

impl<R: Read> ModelReader<R> {
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.inp.read_exact(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inp.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.inp.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.inp.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn usize_vec(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n).map(|_| self.u64().map(|v| v as usize)).collect()
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn problem_tag(id: ProblemId) -> u8 {
    match id {
        ProblemId::Pbe => 0,
        ProblemId::Cubic => 1,
        ProblemId::Convdiff => 2,
    }
}

fn problem_from_tag(tag: u8) -> Result<ProblemId> {
    match tag {
        0 => Ok(ProblemId::Pbe),
        1 => Ok(ProblemId::Cubic),
        2 => Ok(ProblemId::Convdiff),
        other => Err(RocError::Format(format!("unknown problem tag {other}"))),
    }
}

impl ReducedModel {
    /// Writes the model in the versioned binary format. All multi-byte
    /// fields are little-endian; a byte-order marker guards against readers
    /// with mismatched assumptions.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut w = ModelWriter {
            out: BufWriter::new(file),
        };
        w.out.write_all(MODEL_MAGIC)?;
        w.u32(MODEL_VERSION)?;
        w.u32(BYTE_ORDER_MARKER)?;
        w.u8(problem_tag(self.problem))?;
        w.u8(self.indicator.to_u8())?;
        w.u8(self.stagnated as u8)?;
        w.u8(self.uses_gradient as u8)?;
        w.u64(self.k as u64)?;
        w.u64(self.seed)?;
        let n = self.n_bases();
        let m = self.m();
        w.u64(n as u64)?;
        w.u64(m as u64)?;
        for p in &self.snapshot_params {
            w.f64(p.mu1)?;
            w.f64(p.mu2)?;
        }
        w.usize_slice(&self.x_s)?;
        w.usize_slice(&self.x_r)?;
        w.usize_slice(&self.xm)?;
        w.usize_slice(&self.stage_end)?;
        w.usize_slice(&self.s_pos)?;
        for &k in &self.row_kind {
            w.u8(k as u8)?;
        }
        w.f64_slice(&self.f_m)?;
        w.f64_slice(self.w_m.data())?;
        w.f64_slice(self.lap_m.data())?;
        if self.uses_gradient {
            w.f64_slice(self.gx_m.data())?;
            w.f64_slice(self.gy_m.data())?;
        }
        for col in &self.snapshot_tri {
            w.f64_slice(col)?;
        }
        for col in &self.basis {
            w.f64_slice(col)?;
        }
        for col in &self.residual_basis {
            w.f64_slice(col)?;
        }
        w.out.flush()?;
        Ok(())
    }

    /// Reads a model written by [`ReducedModel::save`]. The full-grid
    /// operator images of the basis are recomputed from the grid, which
    /// reproduces the original values exactly.
    pub fn load(path: &Path) -> Result<ReducedModel> {
        let file = File::open(path)?;
        let mut r = ModelReader {
            inp: BufReader::new(file),
        };
        let mut magic = [0u8; 4];
        r.inp.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(RocError::Format(
                "not a reduced-model file (bad magic)".to_string(),
            ));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(RocError::Format(format!(
                "unsupported model version {version} (expected {MODEL_VERSION})"
            )));
        }
        let marker = r.u32()?;
        if marker != BYTE_ORDER_MARKER {
            return Err(RocError::Format(format!(
                "byte-order marker mismatch (read {marker:#010x})"
            )));
        }
        let problem = problem_from_tag(r.u8()?)?;
        let indicator = IndicatorKind::from_u8(r.u8()?)?;
        let stagnated = r.u8()? != 0;
        let uses_gradient = r.u8()? != 0;
        let k = r.u64()? as usize;
        let seed = r.u64()?;
        let n = r.u64()? as usize;
        let m = r.u64()? as usize;
        let spec = crate::problems::ProblemSpec::new(problem);
        let disc = Discretization::new(spec, k)?;
        let total = disc.grid().node_count();
        if n == 0 || m == 0 || n > total || m > total {
            return Err(RocError::Format(format!(
                "implausible model sizes n={n} m={m} for {total} nodes"
            )));
        }
        let mut snapshot_params = Vec::with_capacity(n);
        for _ in 0..n {
            let mu1 = r.f64()?;
            let mu2 = r.f64()?;
            snapshot_params.push(Parameter::new(mu1, mu2));
        }
        let x_s = r.usize_vec(n)?;
        let x_r = r.usize_vec(n.saturating_sub(1))?;
        let xm = r.usize_vec(m)?;
        let stage_end = r.usize_vec(n)?;
        let s_pos = r.usize_vec(n)?;
        if xm.iter().chain(&x_s).chain(&x_r).any(|&p| p >= total) {
            return Err(RocError::Format(
                "collocation node index outside the grid".to_string(),
            ));
        }
        if stage_end.iter().any(|&e| e > m) || s_pos.iter().any(|&p| p >= m) {
            return Err(RocError::Format(
                "stage bookkeeping outside the collocation set".to_string(),
            ));
        }
        let mut row_kind = Vec::with_capacity(m);
        for _ in 0..m {
            row_kind.push(RowKind::from_u8(r.u8()?)?);
        }
        let f_m = r.f64_vec(m)?;
        let w_m = RowMatrix::from_row_major(m, n, r.f64_vec(m * n)?)?;
        let lap_m = RowMatrix::from_row_major(m, n, r.f64_vec(m * n)?)?;
        let (gx_m, gy_m) = if uses_gradient {
            (
                RowMatrix::from_row_major(m, n, r.f64_vec(m * n)?)?,
                RowMatrix::from_row_major(m, n, r.f64_vec(m * n)?)?,
            )
        } else {
            (RowMatrix::zeros(0, 0), RowMatrix::zeros(0, 0))
        };
        let mut snapshot_tri = Vec::with_capacity(n);
        for j in 0..n {
            snapshot_tri.push(r.f64_vec(j + 1)?);
        }
        let mut basis = Vec::with_capacity(n);
        for _ in 0..n {
            basis.push(r.f64_vec(total)?);
        }
        let mut residual_basis = Vec::with_capacity(n.saturating_sub(1));
        for _ in 0..n.saturating_sub(1) {
            residual_basis.push(r.f64_vec(total)?);
        }
        let mut trailing = [0u8; 1];
        if r.inp.read(&mut trailing)? != 0 {
            return Err(RocError::Format(
                "trailing bytes after model payload".to_string(),
            ));
        }

        let mut lap_basis = Vec::with_capacity(n);
        let mut gx_basis = Vec::new();
        let mut gy_basis = Vec::new();
        for xi in &basis {
            lap_basis.push(disc.laplacian().apply(xi));
            if uses_gradient {
                gx_basis.push(disc.gradient_x1().apply(xi));
                gy_basis.push(disc.gradient_x2().apply(xi));
            }
        }
        Ok(ReducedModel {
            problem,
            k,
            seed,
            indicator,
            snapshot_params,
            x_s,
            x_r,
            xm,
            stage_end,
            s_pos,
            row_kind,
            f_m,
            w_m,
            lap_m,
            gx_m,
            gy_m,
            basis,
            lap_basis,
            gx_basis,
            gy_basis,
            residual_basis,
            snapshot_tri,
            stagnated,
            uses_gradient,
        })
    }
}
