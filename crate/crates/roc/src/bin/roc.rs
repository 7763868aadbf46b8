//! Command-line front end: model building, single reduced solves, the three
//! study drivers, and model inspection.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use roc::fdm_core::Field;
use roc::linalg::ensure_sequential_backend;
use roc::offline_greedy::{greedy_build, GreedyOptions, IndicatorKind, ReducedModel};
use roc::online_solver::{lift, solve_reduced, ReducedOptions};
use roc::problems::{Discretization, ProblemId, ProblemSpec};
use roc::study_harness::{
    artifact_stem, format_float, resolve_cache_dir, run_comparison, run_convergence, run_timing,
    write_trace_csv, ComparisonConfig, ConvergenceConfig, CsvTable, TimingConfig,
};
use roc::truth_solver::TruthOptions;
use roc::{Result, RocError};

#[derive(Parser)]
#[command(
    name = "roc",
    version,
    about = "Reduced over-collocation surrogates for parametrized nonlinear PDEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Clone)]
struct Common {
    /// Problem id: pbe | cubic | convdiff.
    #[arg(long, default_value = "pbe")]
    problem: String,
    /// Grid intervals per direction.
    #[arg(long = "K", default_value_t = 200)]
    k: usize,
    /// Greedy error indicator: l1 | r2 | res.
    #[arg(long, default_value = "l1")]
    indicator: String,
    /// Seed for randomized selections.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Directory for artifacts (models, traces, tables).
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Nonlinear-iteration update tolerance (truth and reduced).
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Nonlinear-iteration cap (truth and reduced).
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
}

impl Common {
    fn problem(&self) -> Result<ProblemId> {
        ProblemId::from_str(&self.problem)
    }

    fn indicator(&self) -> Result<IndicatorKind> {
        IndicatorKind::from_str(&self.indicator)
    }

    fn truth(&self) -> TruthOptions {
        TruthOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    fn reduced(&self) -> ReducedOptions {
        ReducedOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            ..ReducedOptions::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a reduced model and write it with its build trace.
    Train {
        #[command(flatten)]
        common: Common,
        /// Target basis count.
        #[arg(long = "N", default_value_t = 10)]
        n: usize,
        /// Use the exact study grids instead of the coarsened training set.
        #[arg(long)]
        full_paper: bool,
        /// Reuse previous-level coefficients as sweep initial guesses.
        #[arg(long)]
        warm_start: bool,
        /// Stop once the (residual-based) indicator falls below this value.
        #[arg(long)]
        eps_tol: Option<f64>,
    },
    /// Load a model and solve at one parameter.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Model file written by `train` or `convergence`.
        #[arg(long)]
        model: PathBuf,
        /// Parameter as `mu1,mu2`.
        #[arg(long)]
        mu: String,
        /// Basis count to solve with (default: the model's full size).
        #[arg(long = "n")]
        n: Option<usize>,
        /// Write the lifted full-grid solution to this CSV path.
        #[arg(long)]
        write_field: Option<PathBuf>,
    },
    /// Build a model and measure its worst-case test error per basis count.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long = "N", default_value_t = 10)]
        n: usize,
        #[arg(long)]
        full_paper: bool,
        #[arg(long)]
        warm_start: bool,
        #[arg(long)]
        eps_tol: Option<f64>,
        /// Worker threads for truth-solution fills.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Solve build snapshots fresh instead of through the cache.
        #[arg(long)]
        fresh_snapshots: bool,
    },
    /// Compare greedy selection against principal directions and random
    /// snapshot sets.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long = "N", default_value_t = 15)]
        n: usize,
        /// Number of random-selection trials.
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long)]
        full_paper: bool,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Measure offline, online, and full-grid solve costs; find break-even
    /// query counts.
    Timing {
        #[command(flatten)]
        common: Common,
        #[arg(long = "N", default_value_t = 10)]
        n: usize,
        /// Grid sizes, comma separated (overrides --K).
        #[arg(long = "K-list")]
        k_list: Option<String>,
        /// Indicators to build with, comma separated.
        #[arg(long, default_value = "l1,r2,res")]
        methods: String,
        /// Online repeats per query (median recorded).
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Skip full-grid solve timing (disables break-even analysis).
        #[arg(long)]
        skip_truth: bool,
        /// Restrict the query stream to the first q timing parameters.
        #[arg(long)]
        query_cap: Option<usize>,
        #[arg(long)]
        full_paper: bool,
    },
    /// Print a model's metadata, selected parameters, and collocation points.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
}

fn parse_mu(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(RocError::InvalidArgument(format!(
            "expected --mu as 'mu1,mu2', got '{s}'"
        )));
    }
    let p = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| RocError::InvalidArgument(format!("malformed number '{t}' in --mu")))
    };
    Ok((p(parts[0])?, p(parts[1])?))
}

fn parse_list<T: FromStr<Err = E>, E: std::fmt::Display>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|e| RocError::InvalidArgument(format!("bad {what} entry '{t}': {e}")))
        })
        .collect()
}

fn cmd_train(
    common: &Common,
    n: usize,
    full_paper: bool,
    warm_start: bool,
    eps_tol: Option<f64>,
) -> Result<()> {
    let problem = common.problem()?;
    let indicator = common.indicator()?;
    std::fs::create_dir_all(&common.out_dir)?;
    let disc = Discretization::new(ProblemSpec::new(problem), common.k)?;
    let grids = roc::problems::make_parameter_grids(problem);
    let train = if full_paper {
        grids.train.clone()
    } else {
        grids.train.coarsened()
    };
    let mut opts = GreedyOptions::new(n, indicator);
    opts.seed = common.seed;
    opts.warm_start = warm_start;
    opts.eps_tol = eps_tol;
    opts.truth = common.truth();
    opts.reduced = common.reduced();
    let (model, trace) = greedy_build(&disc, &train.params, &opts)?;
    let stem = artifact_stem(problem, common.k, indicator, n);
    let model_path = common.out_dir.join(format!("model_{stem}.rocm"));
    model.save(&model_path)?;
    let trace_path = common.out_dir.join(format!("trace_{stem}.csv"));
    let comments = vec![
        format!("problem={problem}"),
        format!("k={}", common.k),
        format!("indicator={indicator}"),
        format!("n_max={n}"),
        format!("seed={}", common.seed),
        format!("full_paper={full_paper}"),
        format!("train_size={}", train.len()),
    ];
    write_trace_csv(&trace, comments, &trace_path)?;
    println!(
        "built {} basis vectors, {} collocation rows (stagnated={})",
        model.n_bases(),
        model.m(),
        model.stagnated
    );
    println!("model: {}", model_path.display());
    println!("trace: {}", trace_path.display());
    Ok(())
}

fn cmd_solve(
    common: &Common,
    model_path: &PathBuf,
    mu_arg: &str,
    n: Option<usize>,
    write_field: Option<&PathBuf>,
) -> Result<()> {
    let model = ReducedModel::load(model_path)?;
    let spec = ProblemSpec::new(model.problem);
    let (mu1, mu2) = parse_mu(mu_arg)?;
    let mu = spec.parameter(mu1, mu2)?;
    let n = n.unwrap_or_else(|| model.n_bases());
    let opts = common.reduced();
    let report = solve_reduced(&model, mu, n, &opts)?;
    println!(
        "problem={} k={} n={} active_rows={}",
        model.problem,
        model.k,
        n,
        model.active_rows(n)?
    );
    println!(
        "mu=({},{}) iterations={} converged={}",
        format_float(mu.mu1),
        format_float(mu.mu2),
        report.iterations,
        report.converged
    );
    println!("delta_rr={}", format_float(report.residual_inf_norm()));
    for (i, c) in report.coeffs.iter().enumerate() {
        println!("c[{i}]={}", format_float(*c));
    }
    if let Some(path) = write_field {
        let field = lift(&model, &report.coeffs)?;
        write_field_csv(&model, &field, path)?;
        println!("field: {}", path.display());
    }
    Ok(())
}

fn write_field_csv(model: &ReducedModel, field: &Field, path: &PathBuf) -> Result<()> {
    let disc = Discretization::new(ProblemSpec::new(model.problem), model.k)?;
    let grid = disc.grid();
    let mut table = CsvTable::new(
        vec![format!("problem={}", model.problem), format!("k={}", model.k)],
        vec![
            "i1".into(),
            "i2".into(),
            "x1".into(),
            "x2".into(),
            "value".into(),
        ],
    );
    for idx in 0..grid.node_count() {
        let (i1, i2) = grid.lattice(idx);
        let (x1, x2) = grid.coords(idx);
        table.push_row(vec![
            i1.to_string(),
            i2.to_string(),
            format_float(x1),
            format_float(x2),
            format_float(field.values[idx]),
        ]);
    }
    table.write(path)
}

fn cmd_inspect(model_path: &PathBuf) -> Result<()> {
    let model = ReducedModel::load(model_path)?;
    let disc = Discretization::new(ProblemSpec::new(model.problem), model.k)?;
    let grid = disc.grid();
    println!(
        "problem={} k={} indicator={} seed={} stagnated={}",
        model.problem, model.k, model.indicator, model.seed, model.stagnated
    );
    println!(
        "bases={} collocation_rows={} (bound 2N-1 = {})",
        model.n_bases(),
        model.m(),
        2 * model.n_bases() - 1
    );
    println!("stage  mu1  mu2  x_s(node,x1,x2)  x_r(node,x1,x2)");
    for i in 0..model.n_bases() {
        let p = model.snapshot_params[i];
        let s = model.x_s[i];
        let (sx1, sx2) = grid.coords(s);
        let r_desc = if i == 0 {
            "-".to_string()
        } else {
            let r = model.x_r[i - 1];
            let (rx1, rx2) = grid.coords(r);
            format!("({r},{rx1:.4},{rx2:.4})")
        };
        println!(
            "{:>5}  {:.6}  {:.6}  ({s},{sx1:.4},{sx2:.4})  {r_desc}",
            i + 1,
            p.mu1,
            p.mu2
        );
    }
    println!("collocation rows (node, kind, active from stage):");
    for (pos, &node) in model.xm.iter().enumerate() {
        let stage = model
            .stage_end
            .iter()
            .position(|&e| pos < e)
            .map(|s| s + 1)
            .unwrap_or(0);
        let (x1, x2) = grid.coords(node);
        println!(
            "  {node} ({x1:.4},{x2:.4}) kind={:?} stage={stage}",
            model.row_kind[pos]
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    ensure_sequential_backend();
    match &cli.command {
        Command::Train {
            common,
            n,
            full_paper,
            warm_start,
            eps_tol,
        } => cmd_train(common, *n, *full_paper, *warm_start, *eps_tol),
        Command::Solve {
            common,
            model,
            mu,
            n,
            write_field,
        } => cmd_solve(common, model, mu, *n, write_field.as_ref()),
        Command::Convergence {
            common,
            n,
            full_paper,
            warm_start,
            eps_tol,
            threads,
            fresh_snapshots,
        } => {
            let mut cfg = ConvergenceConfig::new(common.problem()?, &common.out_dir);
            cfg.k = common.k;
            cfg.indicator = common.indicator()?;
            cfg.n_max = *n;
            cfg.seed = common.seed;
            cfg.full_paper = *full_paper;
            cfg.eps_tol = *eps_tol;
            cfg.warm_start = *warm_start;
            cfg.threads = *threads;
            cfg.cache_dir = resolve_cache_dir(&common.out_dir);
            cfg.truth = common.truth();
            cfg.reduced = common.reduced();
            cfg.cache_snapshots = !*fresh_snapshots;
            let out = run_convergence(&cfg)?;
            for (i, e) in out.e_curve.iter().enumerate() {
                println!("n={:<3} E={}", i + 1, format_float(*e));
            }
            println!("table: {}", out.table_path.display());
            println!("trace: {}", out.trace_path.display());
            println!("model: {}", out.model_path.display());
            Ok(())
        }
        Command::Compare {
            common,
            n,
            trials,
            full_paper,
            threads,
        } => {
            let mut cfg = ComparisonConfig::new(common.problem()?, &common.out_dir);
            cfg.k = common.k;
            cfg.n_max = *n;
            cfg.trials = *trials;
            cfg.seed = common.seed;
            cfg.full_paper = *full_paper;
            cfg.threads = *threads;
            cfg.cache_dir = resolve_cache_dir(&common.out_dir);
            cfg.truth = common.truth();
            cfg.reduced = common.reduced();
            let out = run_comparison(&cfg)?;
            for i in 0..out.greedy.len() {
                println!(
                    "n={:<3} greedy={} pod={} random_median={}",
                    i + 1,
                    format_float(out.greedy[i]),
                    format_float(out.pod[i]),
                    format_float(out.random_median[i])
                );
            }
            println!("table: {}", out.table_path.display());
            Ok(())
        }
        Command::Timing {
            common,
            n,
            k_list,
            methods,
            repeats,
            skip_truth,
            query_cap,
            full_paper,
        } => {
            let mut cfg = TimingConfig::new(common.problem()?, &common.out_dir);
            cfg.k_list = match k_list {
                Some(s) => parse_list::<usize, _>(s, "grid size")?,
                None => vec![common.k],
            };
            cfg.n_max = *n;
            cfg.methods = methods
                .split(',')
                .map(|t| IndicatorKind::from_str(t.trim()))
                .collect::<Result<Vec<_>>>()?;
            cfg.repeats = *repeats;
            cfg.measure_truth = !*skip_truth;
            cfg.query_cap = *query_cap;
            cfg.full_paper = *full_paper;
            cfg.seed = common.seed;
            cfg.truth = common.truth();
            cfg.reduced = common.reduced();
            let out = run_timing(&cfg)?;
            for t in &out.truth {
                println!(
                    "k={:<4} truth    mean={} median={}",
                    t.k,
                    format_float(t.mean_seconds),
                    format_float(t.median_seconds)
                );
            }
            for r in &out.methods {
                println!(
                    "k={:<4} roc-{:<4} offline={} online_mean={} break_even={}",
                    r.k,
                    r.indicator.to_string(),
                    format_float(r.offline_seconds),
                    format_float(r.online_mean_seconds),
                    r.break_even_n_run
                        .map_or("-".to_string(), |b| b.to_string())
                );
            }
            println!("summary: {}", out.summary_path.display());
            println!("curves: {}", out.curves_path.display());
            Ok(())
        }
        Command::Inspect { common: _, model } => cmd_inspect(model),
    }
}

fn exit_code_for(err: &RocError) -> u8 {
    match err {
        RocError::InvalidArgument(_) | RocError::DomainViolation { .. } => 2,
        RocError::TruthConvergenceFailure { .. }
        | RocError::ReducedConvergenceFailure { .. }
        | RocError::LinearSolverFailure(_)
        | RocError::LinearDependence { .. } => 3,
        RocError::Io(_) | RocError::Format(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests land here too; clap picks exit 0
            // for them and 2 for usage errors.
            e.exit();
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
