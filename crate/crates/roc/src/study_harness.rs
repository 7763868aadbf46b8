//! Experiment drivers and their artifacts: convergence curves, basis-choice
//! comparisons, and cumulative-cost timing studies, each emitting CSV files
//! with a documented column schema, plus the disk cache of truth solutions
//! that makes repeated studies cheap.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use crate::error::{Result, RocError};
use crate::fdm_core::Field;
use crate::offline_greedy::{
    greedy_build_with_truth, pod_basis, random_param_sequence, GreedyOptions, GreedyTrace,
    IndicatorKind, ReducedModel,
};
use crate::online_solver::{lift, solve_reduced, solve_reduced_unchecked, ReducedOptions};
use crate::problems::{
    make_parameter_grids, Discretization, Parameter, ParameterGrid, ProblemId, ProblemSpec,
};
use crate::truth_solver::{solve_truth, TruthOptions};

/// Minimal CSV layer: comment lines, one header, homogeneous rows. Emission
/// and parsing are inverses byte for byte, which the artifact tests rely on.
pub mod csv {
    use super::{Result, RocError};
    use std::path::Path;

    /// Canonical float formatting for artifacts: 17 significant digits,
    /// which round-trips every f64 exactly.
    pub fn format_float(v: f64) -> String {
        format!("{v:.16e}")
    }

    /// An in-memory CSV file: `# `-prefixed comment lines, a header, rows.
    #[derive(Clone, Debug, PartialEq, Eq)]
    pub struct CsvTable {
        pub comments: Vec<String>,
        pub header: Vec<String>,
        pub rows: Vec<Vec<String>>,
    }

    impl CsvTable {
        pub fn new(comments: Vec<String>, header: Vec<String>) -> Self {
            CsvTable {
                comments,
                header,
                rows: Vec::new(),
            }
        }

        pub fn push_row(&mut self, row: Vec<String>) {
            debug_assert_eq!(row.len(), self.header.len());
            self.rows.push(row);
        }

        pub fn render(&self) -> String {
            let mut s = String::new();
            for c in &self.comments {
                s.push_str("# ");
                s.push_str(c);
                s.push('\n');
            }
            s.push_str(&self.header.join(","));
            s.push('\n');
            for row in &self.rows {
                s.push_str(&row.join(","));
                s.push('\n');
            }
            s
        }

        pub fn parse(text: &str) -> Result<CsvTable> {
            let mut comments = Vec::new();
            let mut header: Option<Vec<String>> = None;
            let mut rows: Vec<Vec<String>> = Vec::new();
            for line in text.lines() {
                if let Some(rest) = line.strip_prefix("# ") {
                    comments.push(rest.to_string());
                } else if let Some(rest) = line.strip_prefix('#') {
                    comments.push(rest.to_string());
                } else if header.is_none() {
                    header = Some(line.split(',').map(str::to_string).collect());
                } else {
                    rows.push(line.split(',').map(str::to_string).collect());
                }
            }
            let header = header
                .ok_or_else(|| RocError::Format("CSV has no header line".to_string()))?;
            for row in &rows {
                if row.len() != header.len() {
                    return Err(RocError::Format(format!(
                        "CSV row has {} fields, header has {}",
                        row.len(),
                        header.len()
                    )));
                }
            }
            Ok(CsvTable {
                comments,
                header,
                rows,
            })
        }

        pub fn write(&self, path: &Path) -> Result<()> {
            std::fs::write(path, self.render())?;
            Ok(())
        }

        pub fn read(path: &Path) -> Result<CsvTable> {
            let text = std::fs::read_to_string(path)?;
            CsvTable::parse(&text)
        }
    }
}

pub use csv::{format_float, CsvTable};

/// Mean of a non-empty slice.
pub fn mean(vs: &[f64]) -> f64 {
    vs.iter().sum::<f64>() / vs.len() as f64
}

/// Median of a non-empty slice (mean of the middle two for even lengths).
pub fn median(vs: &[f64]) -> f64 {
    let mut s = vs.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Least-squares line fit: returns (slope, intercept, r_squared).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = syy - slope * sxy;
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let _ = n;
    (slope, intercept, r2)
}

/// Cache directory resolution: the `ROC_CACHE_DIR` environment variable
/// wins; otherwise `truth_cache/` under the output directory.
pub fn resolve_cache_dir(out_dir: &Path) -> PathBuf {
    match std::env::var_os("ROC_CACHE_DIR") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => out_dir.join("truth_cache"),
    }
}

const CACHE_MAGIC: &[u8; 4] = b"ROCT";
const CACHE_VERSION: u32 = 1;
const CACHE_MARKER: u32 = 0x0102_0304;

static CACHE_TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Disk cache of truth solutions, keyed by problem, grid size, parameter
/// bits, and solver tolerance bits. Cached and fresh solutions agree bit for
/// bit because the solve is deterministic and values are stored exactly.
pub struct TruthCache {
    dir: PathBuf,
}

impl TruthCache {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(TruthCache {
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn key_path(&self, problem: ProblemId, k: usize, mu: Parameter, tol: f64) -> PathBuf {
        self.dir.join(format!(
            "{problem}_k{k}_{:016x}_{:016x}_{:016x}.bin",
            mu.mu1.to_bits(),
            mu.mu2.to_bits(),
            tol.to_bits()
        ))
    }

    fn load(path: &Path, expect_len: usize) -> Result<Field> {
        let bytes = fs::read(path)?;
        let need = 4 + 4 + 4 + 8 + 8 * expect_len;
        if bytes.len() != need || &bytes[..4] != CACHE_MAGIC {
            return Err(RocError::Format(format!(
                "cache entry {} is malformed",
                path.display()
            )));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let marker = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        if version != CACHE_VERSION || marker != CACHE_MARKER || len != expect_len {
            return Err(RocError::Format(format!(
                "cache entry {} does not match the requested solve",
                path.display()
            )));
        }
        let mut values = Vec::with_capacity(len);
        for chunk in bytes[20..].chunks_exact(8) {
            values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        Ok(Field::from_values(values))
    }

    fn store(&self, path: &Path, field: &Field) -> Result<()> {
        let mut bytes = Vec::with_capacity(20 + 8 * field.len());
        bytes.extend_from_slice(CACHE_MAGIC);
        bytes.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        bytes.extend_from_slice(&CACHE_MARKER.to_le_bytes());
        bytes.extend_from_slice(&(field.len() as u64).to_le_bytes());
        for &v in &field.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        // Write-then-rename keeps concurrent fills of the same key safe:
        // both producers write identical bytes.
        let tmp = path.with_extension(format!(
            "tmp.{}.{}",
            std::process::id(),
            CACHE_TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Returns the cached truth solution, solving and storing it on a miss.
    pub fn get_or_solve(
        &self,
        disc: &Discretization,
        mu: Parameter,
        opts: TruthOptions,
    ) -> Result<Field> {
        let path = self.key_path(disc.spec().id, disc.grid().k(), mu, opts.tol);
        if path.exists() {
            return Self::load(&path, disc.grid().node_count());
        }
        let report = solve_truth(disc, mu, opts)?;
        self.store(&path, &report.solution)?;
        Ok(report.solution)
    }
}

/// Applies `f` to every item, preserving input order in the output. With
/// `threads <= 1` the work runs on the calling thread; otherwise a scoped
/// pool pulls items from a shared counter.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, R)>> = Mutex::new(Vec::with_capacity(items.len()));
    std::thread::scope(|scope| {
        for _ in 0..threads.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                results.lock().unwrap().push((i, r));
            });
        }
    });
    let mut collected = results.into_inner().unwrap();
    collected.sort_by_key(|(i, _)| *i);
    collected.into_iter().map(|(_, r)| r).collect()
}

fn training_set(grids: &crate::problems::ParameterGrids, full_paper: bool) -> ParameterGrid {
    if full_paper {
        grids.train.clone()
    } else {
        grids.train.coarsened()
    }
}

fn solve_test_truths(
    disc: &Discretization,
    cache: &TruthCache,
    params: &[Parameter],
    opts: TruthOptions,
    threads: usize,
) -> Result<Vec<Field>> {
    let results = parallel_map(params, threads, |&mu| cache.get_or_solve(disc, mu, opts));
    results.into_iter().collect()
}

fn max_inf_norm(fields: &[Field]) -> f64 {
    fields.iter().map(Field::inf_norm).fold(0.0, f64::max)
}

/// Reduced-solve budget for the study drivers. Test sweeps visit parameters
/// where the collocated residual is still large at small basis counts; the
/// successive-linearization iteration then contracts only linearly (rates up
/// to ~0.86 per step observed), so reaching the update tolerance can take a
/// few hundred iterations. Per-iteration cost is grid-independent, which
/// makes the generous budget cheap.
fn study_reduced_options() -> ReducedOptions {
    ReducedOptions {
        max_iter: 1000,
        ..ReducedOptions::default()
    }
}

/// Relative worst-case error curve of a model over a test set: for each
/// basis count, the maximum lifted-solution error over the test parameters,
/// divided by the largest truth norm. `strict` propagates reduced-solver
/// failures; otherwise the last finite iterate is scored as is.
fn evaluate_e_curve(
    model: &ReducedModel,
    params: &[Parameter],
    truths: &[Field],
    denom: f64,
    reduced: &ReducedOptions,
    strict: bool,
) -> Result<Vec<f64>> {
    let n_max = model.n_bases();
    let mut curve = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let mut worst = 0.0f64;
        for (&mu, truth) in params.iter().zip(truths) {
            let report = if strict {
                solve_reduced(model, mu, n, reduced)?
            } else {
                solve_reduced_unchecked(model, mu, n, reduced)?
            };
            let lifted = lift(model, &report.coeffs)?;
            let err = lifted
                .values
                .iter()
                .zip(&truth.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(err);
        }
        curve.push(worst / denom);
    }
    Ok(curve)
}

/// Convergence-study configuration.
#[derive(Clone, Debug)]
pub struct ConvergenceConfig {
    pub problem: ProblemId,
    pub k: usize,
    pub indicator: IndicatorKind,
    pub n_max: usize,
    pub seed: u64,
    /// Use the exact study grids instead of the coarsened training set.
    pub full_paper: bool,
    pub eps_tol: Option<f64>,
    pub warm_start: bool,
    pub threads: usize,
    pub out_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub truth: TruthOptions,
    pub reduced: ReducedOptions,
    /// Route snapshot solves through the cache. Leave off when the build's
    /// wall time is the quantity under study.
    pub cache_snapshots: bool,
}

impl ConvergenceConfig {
    pub fn new(problem: ProblemId, out_dir: &Path) -> Self {
        ConvergenceConfig {
            problem,
            k: 200,
            indicator: IndicatorKind::L1,
            n_max: 10,
            seed: 7,
            full_paper: false,
            eps_tol: None,
            warm_start: false,
            threads: 1,
            out_dir: out_dir.to_path_buf(),
            cache_dir: resolve_cache_dir(out_dir),
            truth: TruthOptions::default(),
            reduced: study_reduced_options(),
            cache_snapshots: true,
        }
    }
}

/// Convergence-study results; the CSV artifacts live at the recorded paths.
pub struct ConvergenceOutput {
    pub model: ReducedModel,
    pub trace: GreedyTrace,
    /// Relative worst-case test error per basis count.
    pub e_curve: Vec<f64>,
    /// Largest training-sweep indicator value at each basis count; NaN where
    /// no sweep ran.
    pub max_indicator: Vec<f64>,
    pub warnings: Vec<String>,
    pub table_path: PathBuf,
    pub trace_path: PathBuf,
    pub model_path: PathBuf,
}

/// Canonical artifact-name stem for one build configuration.
pub fn artifact_stem(problem: ProblemId, k: usize, indicator: IndicatorKind, n: usize) -> String {
    format!("{problem}_k{k}_{indicator}_n{n}")
}

/// Writes a build trace in the fixed seven-column schema.
pub fn write_trace_csv(trace: &GreedyTrace, comments: Vec<String>, path: &Path) -> Result<()> {
    let mut table = CsvTable::new(
        comments,
        vec![
            "n".into(),
            "mu1".into(),
            "mu2".into(),
            "indicator_value".into(),
            "x_star_index".into(),
            "x_starstar_index".into(),
            "cum_offline_seconds".into(),
        ],
    );
    for row in &trace.rows {
        table.push_row(vec![
            row.n.to_string(),
            format_float(row.mu1),
            format_float(row.mu2),
            format_float(row.indicator_value),
            row.x_star_index.to_string(),
            row.x_starstar_index.to_string(),
            format_float(row.cum_offline_seconds),
        ]);
    }
    table.write(path)
}

/// Builds a model and measures its worst-case test error at every basis
/// count, writing the curve, the build trace, and the model file.
pub fn run_convergence(cfg: &ConvergenceConfig) -> Result<ConvergenceOutput> {
    fs::create_dir_all(&cfg.out_dir)?;
    let spec = ProblemSpec::new(cfg.problem);
    let disc = Discretization::new(spec, cfg.k)?;
    let grids = make_parameter_grids(cfg.problem);
    let train = training_set(&grids, cfg.full_paper);
    let cache = TruthCache::new(&cfg.cache_dir)?;

    let mut gopts = GreedyOptions::new(cfg.n_max, cfg.indicator);
    gopts.seed = cfg.seed;
    gopts.eps_tol = cfg.eps_tol;
    gopts.warm_start = cfg.warm_start;
    gopts.truth = cfg.truth;
    gopts.reduced = cfg.reduced.clone();
    let provider = |mu: Parameter| cache.get_or_solve(&disc, mu, cfg.truth);
    let (model, trace) = greedy_build_with_truth(
        &disc,
        &train.params,
        &gopts,
        cfg.cache_snapshots.then_some(&provider as _),
    )?;

    let mut warnings = Vec::new();
    if model.n_bases() < cfg.n_max {
        warnings.push(format!(
            "build stopped at {} of {} basis vectors (stagnated={})",
            model.n_bases(),
            cfg.n_max,
            model.stagnated
        ));
    }

    let truths = solve_test_truths(&disc, &cache, &grids.test.params, cfg.truth, cfg.threads)?;
    let denom = max_inf_norm(&truths);
    let e_curve = evaluate_e_curve(
        &model,
        &grids.test.params,
        &truths,
        denom,
        &cfg.reduced,
        true,
    )?;
    for n in 1..e_curve.len() {
        if e_curve[n] > 1.5 * e_curve[n - 1] {
            warnings.push(format!(
                "error curve regression at n={}: {:.3e} -> {:.3e}",
                n + 1,
                e_curve[n - 1],
                e_curve[n]
            ));
        }
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    // The sweep with n bases selects stage n+1, so its maximum lands on the
    // trace row carrying that stage.
    let max_indicator: Vec<f64> = (1..=e_curve.len())
        .map(|n| {
            trace
                .rows
                .iter()
                .find(|r| r.n == n + 1)
                .map(|r| r.indicator_value)
                .unwrap_or(f64::NAN)
        })
        .collect();

    let stem = artifact_stem(cfg.problem, cfg.k, cfg.indicator, cfg.n_max);
    let comments = vec![
        format!("problem={}", cfg.problem),
        format!("k={}", cfg.k),
        format!("indicator={}", cfg.indicator),
        format!("n_max={}", cfg.n_max),
        format!("seed={}", cfg.seed),
        format!("full_paper={}", cfg.full_paper),
        format!("train_size={}", train.len()),
        format!("test_size={}", grids.test.len()),
    ];
    let mut table = CsvTable::new(
        comments.clone(),
        vec!["n".into(), "E".into(), "max_indicator_train".into()],
    );
    for (i, &e) in e_curve.iter().enumerate() {
        table.push_row(vec![
            (i + 1).to_string(),
            format_float(e),
            format_float(max_indicator[i]),
        ]);
    }
    let table_path = cfg.out_dir.join(format!("convergence_{stem}.csv"));
    table.write(&table_path)?;
    let trace_path = cfg.out_dir.join(format!("trace_{stem}.csv"));
    write_trace_csv(&trace, comments, &trace_path)?;
    let model_path = cfg.out_dir.join(format!("model_{stem}.rocm"));
    model.save(&model_path)?;

    Ok(ConvergenceOutput {
        model,
        trace,
        e_curve,
        max_indicator,
        warnings,
        table_path,
        trace_path,
        model_path,
    })
}

/// Basis-choice comparison configuration.
#[derive(Clone, Debug)]
pub struct ComparisonConfig {
    pub problem: ProblemId,
    pub k: usize,
    pub n_max: usize,
    pub trials: usize,
    pub seed: u64,
    pub full_paper: bool,
    pub threads: usize,
    pub out_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub truth: TruthOptions,
    pub reduced: ReducedOptions,
}

impl ComparisonConfig {
    pub fn new(problem: ProblemId, out_dir: &Path) -> Self {
        ComparisonConfig {
            problem,
            k: 200,
            n_max: 15,
            trials: 20,
            seed: 7,
            full_paper: false,
            threads: 1,
            out_dir: out_dir.to_path_buf(),
            cache_dir: resolve_cache_dir(out_dir),
            truth: TruthOptions::default(),
            reduced: study_reduced_options(),
        }
    }
}

/// Per-basis-count error curves of the three basis-construction strategies.
pub struct ComparisonOutput {
    pub greedy: Vec<f64>,
    pub pod: Vec<f64>,
    pub random_min: Vec<f64>,
    pub random_median: Vec<f64>,
    pub random_max: Vec<f64>,
    pub warnings: Vec<String>,
    pub table_path: PathBuf,
}

fn pad_curve(mut curve: Vec<f64>, n_max: usize, label: &str, warnings: &mut Vec<String>) -> Vec<f64> {
    if curve.len() < n_max {
        warnings.push(format!(
            "{label} curve has {} of {} entries; padding with the last value",
            curve.len(),
            n_max
        ));
        let last = *curve.last().unwrap_or(&f64::NAN);
        curve.resize(n_max, last);
    }
    curve
}

/// Compares greedy selection against the principal-direction basis and
/// randomly drawn snapshot sets on one problem.
pub fn run_comparison(cfg: &ComparisonConfig) -> Result<ComparisonOutput> {
    fs::create_dir_all(&cfg.out_dir)?;
    let spec = ProblemSpec::new(cfg.problem);
    let disc = Discretization::new(spec, cfg.k)?;
    let grids = make_parameter_grids(cfg.problem);
    let train = training_set(&grids, cfg.full_paper);
    let cache = TruthCache::new(&cfg.cache_dir)?;
    let mut warnings = Vec::new();

    let train_truths = solve_test_truths(&disc, &cache, &train.params, cfg.truth, cfg.threads)?;
    let test_truths = solve_test_truths(&disc, &cache, &grids.test.params, cfg.truth, cfg.threads)?;
    let denom = max_inf_norm(&test_truths);
    let provider = |mu: Parameter| cache.get_or_solve(&disc, mu, cfg.truth);

    // Greedy curve.
    let mut gopts = GreedyOptions::new(cfg.n_max, IndicatorKind::L1);
    gopts.seed = cfg.seed;
    gopts.truth = cfg.truth;
    gopts.reduced = cfg.reduced.clone();
    let (greedy_model, _) =
        greedy_build_with_truth(&disc, &train.params, &gopts, Some(&provider as _))?;
    let greedy = pad_curve(
        evaluate_e_curve(
            &greedy_model,
            &grids.test.params,
            &test_truths,
            denom,
            &cfg.reduced,
            true,
        )?,
        cfg.n_max,
        "greedy",
        &mut warnings,
    );
    drop(greedy_model);

    // Principal-direction curve: Euclidean projection of each test truth
    // onto the leading directions, accumulated one direction at a time.
    let snapshots: Vec<Vec<f64>> = train_truths.into_iter().map(|f| f.values).collect();
    let pod_cols = pod_basis(&snapshots, cfg.n_max)?;
    drop(snapshots);
    let mut pod_worst = vec![0.0f64; pod_cols.len()];
    for truth in &test_truths {
        let mut proj = vec![0.0; truth.len()];
        for (k, col) in pod_cols.iter().enumerate() {
            let a = crate::linalg::dot(&truth.values, col);
            for (p, &c) in proj.iter_mut().zip(col) {
                *p += a * c;
            }
            let err = proj
                .iter()
                .zip(&truth.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            pod_worst[k] = pod_worst[k].max(err);
        }
    }
    let pod = pad_curve(
        pod_worst.into_iter().map(|e| e / denom).collect(),
        cfg.n_max,
        "principal-direction",
        &mut warnings,
    );

    // Random-selection envelope over independent trials.
    let mut trial_curves: Vec<Vec<f64>> = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let seq = random_param_sequence(
            train.len(),
            cfg.n_max,
            cfg.seed.wrapping_add(trial as u64),
        )?;
        let mut ropts = GreedyOptions::new(cfg.n_max, IndicatorKind::L1);
        ropts.seed = cfg.seed;
        ropts.truth = cfg.truth;
        ropts.reduced = cfg.reduced.clone();
        ropts.forced_params = Some(seq);
        let (model, _) =
            greedy_build_with_truth(&disc, &train.params, &ropts, Some(&provider as _))?;
        // Random bases may be poorly conditioned at some parameters; score
        // whatever iterate the solver reached instead of aborting the trial.
        let curve = evaluate_e_curve(
            &model,
            &grids.test.params,
            &test_truths,
            denom,
            &cfg.reduced,
            false,
        )?;
        trial_curves.push(pad_curve(
            curve,
            cfg.n_max,
            &format!("random trial {trial}"),
            &mut warnings,
        ));
    }
    let mut random_min = Vec::with_capacity(cfg.n_max);
    let mut random_median = Vec::with_capacity(cfg.n_max);
    let mut random_max = Vec::with_capacity(cfg.n_max);
    for n in 0..cfg.n_max {
        let at_n: Vec<f64> = trial_curves.iter().map(|c| c[n]).collect();
        random_min.push(at_n.iter().copied().fold(f64::INFINITY, f64::min));
        random_max.push(at_n.iter().copied().fold(0.0, f64::max));
        random_median.push(median(&at_n));
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    let comments = vec![
        format!("problem={}", cfg.problem),
        format!("k={}", cfg.k),
        format!("n_max={}", cfg.n_max),
        format!("trials={}", cfg.trials),
        format!("seed={}", cfg.seed),
        format!("full_paper={}", cfg.full_paper),
        format!("train_size={}", train.len()),
        format!("test_size={}", grids.test.len()),
    ];
    let mut table = CsvTable::new(
        comments,
        vec![
            "n".into(),
            "greedy".into(),
            "pod".into(),
            "random_min".into(),
            "random_median".into(),
            "random_max".into(),
        ],
    );
    for n in 0..cfg.n_max {
        table.push_row(vec![
            (n + 1).to_string(),
            format_float(greedy[n]),
            format_float(pod[n]),
            format_float(random_min[n]),
            format_float(random_median[n]),
            format_float(random_max[n]),
        ]);
    }
    let table_path = cfg
        .out_dir
        .join(format!("comparison_{}_k{}_n{}.csv", cfg.problem, cfg.k, cfg.n_max));
    table.write(&table_path)?;

    Ok(ComparisonOutput {
        greedy,
        pod,
        random_min,
        random_median,
        random_max,
        warnings,
        table_path,
    })
}

/// Timing-study configuration.
#[derive(Clone, Debug)]
pub struct TimingConfig {
    pub problem: ProblemId,
    pub k_list: Vec<usize>,
    pub n_max: usize,
    pub methods: Vec<IndicatorKind>,
    /// Online repeats per query; the median is recorded.
    pub repeats: usize,
    /// Measure full-grid solve times (needed for break-even analysis).
    pub measure_truth: bool,
    /// Restrict the query stream to the first q timing parameters.
    pub query_cap: Option<usize>,
    pub full_paper: bool,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub truth: TruthOptions,
    pub reduced: ReducedOptions,
}

impl TimingConfig {
    pub fn new(problem: ProblemId, out_dir: &Path) -> Self {
        TimingConfig {
            problem,
            k_list: vec![200],
            n_max: 10,
            methods: vec![IndicatorKind::L1, IndicatorKind::R2, IndicatorKind::Res],
            repeats: 5,
            measure_truth: true,
            query_cap: None,
            full_paper: false,
            seed: 7,
            out_dir: out_dir.to_path_buf(),
            truth: TruthOptions::default(),
            reduced: study_reduced_options(),
        }
    }
}

/// Timing summary for one (grid size, method) pair.
#[derive(Clone, Debug)]
pub struct MethodTiming {
    pub k: usize,
    pub indicator: IndicatorKind,
    /// Built basis count and collocation-row count.
    pub n: usize,
    pub m: usize,
    pub offline_seconds: f64,
    pub online_mean_seconds: f64,
    pub online_median_seconds: f64,
    /// First query count at which cumulative cost undercuts the full-grid
    /// solver; None when not measured or never reached.
    pub break_even_n_run: Option<u64>,
}

/// Truth-solver timing for one grid size.
#[derive(Clone, Debug)]
pub struct TruthTiming {
    pub k: usize,
    pub mean_seconds: f64,
    pub median_seconds: f64,
}

pub struct TimingOutput {
    pub methods: Vec<MethodTiming>,
    pub truth: Vec<TruthTiming>,
    pub warnings: Vec<String>,
    pub summary_path: PathBuf,
    pub curves_path: PathBuf,
}

const BREAK_EVEN_SCAN_CAP: u64 = 10_000_000;

fn break_even(offline: f64, online: &[f64], truth: &[f64]) -> Option<u64> {
    let q = online.len();
    debug_assert_eq!(q, truth.len());
    let mut cum_on = offline;
    let mut cum_tr = 0.0;
    for j in 1..=BREAK_EVEN_SCAN_CAP {
        let i = ((j - 1) as usize) % q;
        cum_on += online[i];
        cum_tr += truth[i];
        if cum_on < cum_tr {
            return Some(j);
        }
    }
    None
}

fn method_name(ind: IndicatorKind) -> String {
    format!("roc-{ind}")
}

/// Measures offline cost, per-query online cost, and (optionally) full-grid
/// solve cost over the timing parameter set, cycling queries to find each
/// method's break-even point. Emits a summary table and downsampled
/// cumulative-cost curves.
pub fn run_timing(cfg: &TimingConfig) -> Result<TimingOutput> {
    fs::create_dir_all(&cfg.out_dir)?;
    if cfg.repeats == 0 {
        return Err(RocError::InvalidArgument(
            "repeats must be positive".to_string(),
        ));
    }
    let grids = make_parameter_grids(cfg.problem);
    let queries: Vec<Parameter> = match cfg.query_cap {
        Some(q) if q == 0 => {
            return Err(RocError::InvalidArgument(
                "query cap must be positive".to_string(),
            ))
        }
        Some(q) => grids.test2.params.iter().copied().take(q).collect(),
        None => grids.test2.params.clone(),
    };
    let mut warnings = Vec::new();
    let mut method_rows: Vec<MethodTiming> = Vec::new();
    let mut truth_rows: Vec<TruthTiming> = Vec::new();
    // (k, method name, per-query seconds, offline seconds) for curve output.
    let mut curve_inputs: Vec<(usize, String, Vec<f64>, f64)> = Vec::new();

    for &k in &cfg.k_list {
        let spec = ProblemSpec::new(cfg.problem);
        let disc = Discretization::new(spec, k)?;
        let train = training_set(&grids, cfg.full_paper);

        let truth_times: Option<Vec<f64>> = if cfg.measure_truth {
            let mut times = Vec::with_capacity(queries.len());
            for &mu in &queries {
                let start = Instant::now();
                solve_truth(&disc, mu, cfg.truth)?;
                times.push(start.elapsed().as_secs_f64());
            }
            truth_rows.push(TruthTiming {
                k,
                mean_seconds: mean(&times),
                median_seconds: median(&times),
            });
            curve_inputs.push((k, "truth".to_string(), times.clone(), 0.0));
            Some(times)
        } else {
            None
        };

        for &ind in &cfg.methods {
            let mut gopts = GreedyOptions::new(cfg.n_max, ind);
            gopts.seed = cfg.seed;
            gopts.truth = cfg.truth;
            gopts.reduced = cfg.reduced.clone();
            let start = Instant::now();
            let (model, _) = greedy_build_with_truth(&disc, &train.params, &gopts, None)?;
            let offline = start.elapsed().as_secs_f64();
            if model.n_bases() < cfg.n_max {
                warnings.push(format!(
                    "k={k} {}: build stopped at {} of {} basis vectors",
                    method_name(ind),
                    model.n_bases(),
                    cfg.n_max
                ));
            }
            let n = model.n_bases();
            let mut per_query = Vec::with_capacity(queries.len());
            for &mu in &queries {
                let mut times = Vec::with_capacity(cfg.repeats);
                for _ in 0..cfg.repeats {
                    let start = Instant::now();
                    solve_reduced(&model, mu, n, &cfg.reduced)?;
                    times.push(start.elapsed().as_secs_f64());
                }
                per_query.push(median(&times));
            }
            let be = truth_times
                .as_ref()
                .and_then(|t| break_even(offline, &per_query, t));
            if cfg.measure_truth && be.is_none() {
                warnings.push(format!(
                    "k={k} {}: no break-even within {BREAK_EVEN_SCAN_CAP} queries",
                    method_name(ind)
                ));
            }
            method_rows.push(MethodTiming {
                k,
                indicator: ind,
                n,
                m: model.m(),
                offline_seconds: offline,
                online_mean_seconds: mean(&per_query),
                online_median_seconds: median(&per_query),
                break_even_n_run: be,
            });
            curve_inputs.push((k, method_name(ind), per_query, offline));
        }
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    let comments = vec![
        format!("problem={}", cfg.problem),
        format!("n_max={}", cfg.n_max),
        format!("repeats={}", cfg.repeats),
        format!("seed={}", cfg.seed),
        format!("full_paper={}", cfg.full_paper),
        format!("queries={}", queries.len()),
    ];
    let mut summary = CsvTable::new(
        comments.clone(),
        vec![
            "k".into(),
            "method".into(),
            "n".into(),
            "m".into(),
            "offline_seconds".into(),
            "online_mean_seconds".into(),
            "online_median_seconds".into(),
            "break_even_n_run".into(),
        ],
    );
    for t in &truth_rows {
        summary.push_row(vec![
            t.k.to_string(),
            "truth".into(),
            "0".into(),
            "0".into(),
            format_float(0.0),
            format_float(t.mean_seconds),
            format_float(t.median_seconds),
            "-1".into(),
        ]);
    }
    for r in &method_rows {
        summary.push_row(vec![
            r.k.to_string(),
            method_name(r.indicator),
            r.n.to_string(),
            r.m.to_string(),
            format_float(r.offline_seconds),
            format_float(r.online_mean_seconds),
            format_float(r.online_median_seconds),
            r.break_even_n_run.map_or("-1".into(), |b| b.to_string()),
        ]);
    }
    let summary_path = cfg
        .out_dir
        .join(format!("timing_summary_{}.csv", cfg.problem));
    summary.write(&summary_path)?;

    // Cumulative curves, downsampled to a bounded row count per series.
    let display_max: u64 = method_rows
        .iter()
        .filter_map(|r| r.break_even_n_run)
        .max()
        .map(|b| 2 * b)
        .unwrap_or(3 * queries.len() as u64)
        .max(queries.len() as u64);
    let stride = display_max.div_ceil(200).max(1);
    let mut curves = CsvTable::new(
        comments,
        vec![
            "k".into(),
            "method".into(),
            "n_run".into(),
            "cumulative_seconds".into(),
        ],
    );
    for (k, name, per_query, offline) in &curve_inputs {
        let q = per_query.len();
        let mut cum = *offline;
        curves.push_row(vec![
            k.to_string(),
            name.clone(),
            "0".to_string(),
            format_float(cum),
        ]);
        for j in 1..=display_max {
            cum += per_query[((j - 1) as usize) % q];
            if j % stride == 0 || j == display_max {
                curves.push_row(vec![
                    k.to_string(),
                    name.clone(),
                    j.to_string(),
                    format_float(cum),
                ]);
            }
        }
    }
    let curves_path = cfg
        .out_dir
        .join(format!("timing_curves_{}.csv", cfg.problem));
    curves.write(&curves_path)?;

    Ok(TimingOutput {
        methods: method_rows,
        truth: truth_rows,
        warnings,
        summary_path,
        curves_path,
    })
}
