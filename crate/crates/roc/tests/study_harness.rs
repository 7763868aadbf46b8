use roc::error::RocError;
use roc::offline_greedy::IndicatorKind;
use roc::problems::{Discretization, Parameter, ProblemId, ProblemSpec};
use roc::study_harness::csv::{format_float, CsvTable};
use roc::study_harness::{
    artifact_stem, linear_fit, mean, median, parallel_map, resolve_cache_dir, run_comparison,
    run_convergence, run_timing, ComparisonConfig, ConvergenceConfig, TimingConfig, TruthCache,
};
use roc::truth_solver::TruthOptions;
use std::path::Path;

#[test]
fn csv_tables_round_trip_byte_for_byte() {
    let mut table = CsvTable::new(
        vec!["problem=cubic".to_string(), "k=12".to_string()],
        vec!["n".to_string(), "value".to_string()],
    );
    table.push_row(vec!["1".to_string(), format_float(0.1 + 0.2)]);
    table.push_row(vec!["2".to_string(), format_float(f64::NAN)]);
    table.push_row(vec!["3".to_string(), format_float(-0.0)]);
    let text = table.render();
    let parsed = CsvTable::parse(&text).unwrap();
    assert_eq!(parsed.render(), text);
    assert_eq!(parsed.comments, table.comments);
    assert_eq!(parsed.header, table.header);
    assert_eq!(parsed.rows, table.rows);
}

#[test]
fn csv_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let mut table = CsvTable::new(vec![], vec!["a".to_string(), "b".to_string()]);
    table.push_row(vec![format_float(1.0 / 3.0), format_float(2e-300)]);
    table.write(&path).unwrap();
    let read = CsvTable::read(&path).unwrap();
    assert_eq!(read.render(), table.render());
    // Printed floats carry enough digits to restore the exact bits.
    let back: f64 = read.rows[0][0].parse().unwrap();
    assert_eq!(back.to_bits(), (1.0f64 / 3.0).to_bits());
}

#[test]
fn csv_rejects_ragged_rows() {
    let text = "a,b\n1,2\n3\n";
    assert!(matches!(CsvTable::parse(text), Err(RocError::Format(_))));
}

#[test]
fn statistics_match_hand_values() {
    assert_eq!(mean(&[1.0, 2.0, 9.0]), 4.0);
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);

    let (slope, intercept, r2) = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]);
    assert!((slope - 2.0).abs() < 1e-12);
    assert!((intercept - 1.0).abs() < 1e-12);
    assert!((r2 - 1.0).abs() < 1e-12);

    let (slope, intercept, r2) = linear_fit(&[-1.0, 0.0, 1.0], &[1.0, 2.0, 4.0]);
    assert!((slope - 1.5).abs() < 1e-12);
    assert!((intercept - 7.0 / 3.0).abs() < 1e-12);
    assert!((r2 - 27.0 / 28.0).abs() < 1e-12);
}

#[test]
fn cache_serves_bit_identical_solutions() {
    let dir = tempfile::tempdir().unwrap();
    let cache = TruthCache::new(dir.path()).unwrap();
    let disc = Discretization::new(ProblemSpec::new(ProblemId::Cubic), 10).unwrap();
    let mu = Parameter::new(1.3, 0.8);
    let opts = TruthOptions::default();
    let fresh = cache.get_or_solve(&disc, mu, opts).unwrap();
    let files = || {
        std::fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .path()
                    .extension()
                    .is_some_and(|x| x == "bin")
            })
            .count()
    };
    assert_eq!(files(), 1);
    let cached = cache.get_or_solve(&disc, mu, opts).unwrap();
    for (a, b) in fresh.values.iter().zip(&cached.values) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    // The tolerance is part of the key.
    let tighter = TruthOptions {
        tol: 1e-12,
        max_iter: 100,
    };
    cache.get_or_solve(&disc, mu, tighter).unwrap();
    assert_eq!(files(), 2);
}

#[test]
fn corrupt_cache_entries_are_reported_not_served() {
    let dir = tempfile::tempdir().unwrap();
    let cache = TruthCache::new(dir.path()).unwrap();
    let disc = Discretization::new(ProblemSpec::new(ProblemId::Cubic), 8).unwrap();
    let mu = Parameter::new(2.0, 1.0);
    cache.get_or_solve(&disc, mu, TruthOptions::default()).unwrap();
    let entry = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "bin"))
        .unwrap();
    let mut bytes = std::fs::read(&entry).unwrap();
    bytes.truncate(bytes.len() - 4);
    std::fs::write(&entry, &bytes).unwrap();
    assert!(matches!(
        cache.get_or_solve(&disc, mu, TruthOptions::default()),
        Err(RocError::Format(_))
    ));
}

#[test]
fn cache_dir_resolution_prefers_the_environment() {
    std::env::remove_var("ROC_CACHE_DIR");
    let out = Path::new("/tmp/roc_out");
    assert_eq!(resolve_cache_dir(out), out.join("truth_cache"));
    std::env::set_var("ROC_CACHE_DIR", "/tmp/roc_shared_cache");
    assert_eq!(
        resolve_cache_dir(out),
        Path::new("/tmp/roc_shared_cache").to_path_buf()
    );
    std::env::remove_var("ROC_CACHE_DIR");
}

#[test]
fn parallel_map_preserves_input_order() {
    let items: Vec<usize> = (0..97).collect();
    let expect: Vec<usize> = items.iter().map(|&i| i * i).collect();
    let serial = parallel_map(&items, 1, |&i| i * i);
    assert_eq!(serial, expect);
    let threaded = parallel_map(&items, 4, |&i| i * i);
    assert_eq!(threaded, expect);
}

#[test]
fn artifact_stems_name_the_configuration() {
    assert_eq!(
        artifact_stem(ProblemId::Pbe, 200, IndicatorKind::L1, 20),
        "pbe_k200_l1_n20"
    );
}

#[test]
fn convergence_study_produces_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ConvergenceConfig::new(ProblemId::Cubic, dir.path());
    cfg.k = 12;
    cfg.n_max = 3;
    let out = run_convergence(&cfg).unwrap();
    assert_eq!(out.e_curve.len(), 3);
    assert!(out.e_curve.iter().all(|e| e.is_finite() && *e > 0.0));
    assert_eq!(out.max_indicator.len(), 3);
    // Sweep indicators exist for every level reached by a selection.
    assert!(out.max_indicator[0].is_finite());
    assert!(out.table_path.exists() && out.trace_path.exists() && out.model_path.exists());

    let table = CsvTable::read(&out.table_path).unwrap();
    assert_eq!(table.header, vec!["n", "E", "max_indicator_train"]);
    assert_eq!(table.rows.len(), 3);
    for (i, row) in table.rows.iter().enumerate() {
        assert_eq!(row[0], (i + 1).to_string());
        let e: f64 = row[1].parse().unwrap();
        assert_eq!(e.to_bits(), out.e_curve[i].to_bits());
    }

    // Identical configuration, fresh output directory: identical tables and
    // model bytes.
    let dir2 = tempfile::tempdir().unwrap();
    let mut cfg2 = ConvergenceConfig::new(ProblemId::Cubic, dir2.path());
    cfg2.k = 12;
    cfg2.n_max = 3;
    let out2 = run_convergence(&cfg2).unwrap();
    assert_eq!(
        std::fs::read(&out.table_path).unwrap(),
        std::fs::read(&out2.table_path).unwrap()
    );
    assert_eq!(
        std::fs::read(&out.model_path).unwrap(),
        std::fs::read(&out2.model_path).unwrap()
    );
}

#[test]
fn comparison_study_emits_five_deterministic_curves() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ComparisonConfig::new(ProblemId::Cubic, dir.path());
    cfg.k = 12;
    cfg.n_max = 3;
    cfg.trials = 3;
    let out = run_comparison(&cfg).unwrap();
    for curve in [
        &out.greedy,
        &out.pod,
        &out.random_min,
        &out.random_median,
        &out.random_max,
    ] {
        assert_eq!(curve.len(), 3);
        assert!(curve.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
    for n in 0..3 {
        assert!(out.random_min[n] <= out.random_median[n] + 1e-15);
        assert!(out.random_median[n] <= out.random_max[n] + 1e-15);
        // The exhaustive principal-direction basis is at least as good as
        // the greedy pick at equal size.
        assert!(out.pod[n] <= out.greedy[n] * (1.0 + 1e-9));
    }
    let table = CsvTable::read(&out.table_path).unwrap();
    assert_eq!(
        table.header,
        vec!["n", "greedy", "pod", "random_min", "random_median", "random_max"]
    );

    let dir2 = tempfile::tempdir().unwrap();
    let mut cfg2 = ComparisonConfig::new(ProblemId::Cubic, dir2.path());
    cfg2.k = 12;
    cfg2.n_max = 3;
    cfg2.trials = 3;
    let out2 = run_comparison(&cfg2).unwrap();
    assert_eq!(
        std::fs::read(&out.table_path).unwrap(),
        std::fs::read(&out2.table_path).unwrap()
    );
}

#[test]
fn timing_study_reports_methods_and_break_even() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TimingConfig::new(ProblemId::Cubic, dir.path());
    cfg.k_list = vec![12];
    cfg.n_max = 2;
    cfg.methods = vec![IndicatorKind::L1];
    cfg.repeats = 2;
    cfg.query_cap = Some(5);
    let out = run_timing(&cfg).unwrap();
    assert_eq!(out.methods.len(), 1);
    assert_eq!(out.truth.len(), 1);
    let m = &out.methods[0];
    assert_eq!(m.k, 12);
    assert_eq!(m.n, 2);
    assert!(m.offline_seconds > 0.0);
    assert!(m.online_mean_seconds > 0.0);
    assert!(m.online_median_seconds > 0.0);
    assert!(out.truth[0].mean_seconds > 0.0);
    // A 169-node grid still out-costs a 2-coefficient surrogate; the
    // cumulative crossover must exist.
    assert!(m.break_even_n_run.is_some());

    let summary = CsvTable::read(&out.summary_path).unwrap();
    assert_eq!(
        summary.header,
        vec![
            "k",
            "method",
            "n",
            "m",
            "offline_seconds",
            "online_mean_seconds",
            "online_median_seconds",
            "break_even_n_run"
        ]
    );
    // One truth row and one method row.
    assert_eq!(summary.rows.len(), 2);
    assert!(summary.rows.iter().any(|r| r[1] == "truth"));
    assert!(summary.rows.iter().any(|r| r[1] == "roc-l1"));

    let curves = CsvTable::read(&out.curves_path).unwrap();
    assert_eq!(
        curves.header,
        vec!["k", "method", "n_run", "cumulative_seconds"]
    );
    // Every method's curve starts at its offline cost and the truth curve
    // at zero.
    let first_point = |name: &str| -> (u64, f64) {
        let row = curves.rows.iter().find(|r| r[1] == name).unwrap();
        (row[2].parse().unwrap(), row[3].parse().unwrap())
    };
    let (n0, c0) = first_point("truth");
    assert_eq!(n0, 0);
    assert_eq!(c0, 0.0);
    let (n0, c0) = first_point("roc-l1");
    assert_eq!(n0, 0);
    assert!(c0 > 0.0);
    // Cumulative columns never decrease.
    for name in ["truth", "roc-l1"] {
        let mut prev = -1.0f64;
        for row in curves.rows.iter().filter(|r| r[1] == name) {
            let v: f64 = row[3].parse().unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }
}

#[test]
fn timing_study_can_skip_truth_measurement() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TimingConfig::new(ProblemId::Cubic, dir.path());
    cfg.k_list = vec![10];
    cfg.n_max = 2;
    cfg.methods = vec![IndicatorKind::R2];
    cfg.repeats = 1;
    cfg.query_cap = Some(3);
    cfg.measure_truth = false;
    let out = run_timing(&cfg).unwrap();
    assert!(out.truth.is_empty());
    assert_eq!(out.methods[0].break_even_n_run, None);
    let summary = CsvTable::read(&out.summary_path).unwrap();
    assert!(summary.rows.iter().all(|r| r[1] != "truth"));
}
