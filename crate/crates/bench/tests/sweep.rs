use std::collections::HashSet;
use std::path::Path;

use itergp::kernels::HyperParams;
use itergp::linop::Precision;
use itergp::optimizers::Method;
use itergp_bench::report::aggregate;
use itergp_bench::sweep::{load_results, read_jsonl, RESULTS_FILE, SKIPPED_FILE, SKIP_RANK_ABOVE_N, SUMMARY_FILE};
use itergp_bench::synthetic::{gp_prior_dataset, skewed_dataset};
use itergp_bench::{
    emit_report, run_sweep, split_and_standardize, BackendKind, Dataset, ReportKind, SkipRecord, SweepConfig,
};

fn small_dataset(n: usize, seed: u64) -> Dataset {
    let theta = HyperParams::from_constrained(&[0.4, 0.7], 1.0, 0.05, 0.3).unwrap();
    gp_prior_dataset(n, &theta, seed).unwrap()
}

fn small_config() -> SweepConfig {
    let mut cfg = SweepConfig {
        eps_train: vec![1e-2, 1e-1],
        eps_test: None,
        precond_ranks: vec![5],
        lanczos_ranks: vec![5, 20],
        optimizers: vec![Method::Lbfgs],
        precisions: vec![Precision::F64],
        splits: 5,
        num_probes: 4,
        logdet_rank: 15,
        ..SweepConfig::default()
    };
    cfg.optimizer.max_epochs = 3;
    cfg
}

fn read_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn grid_cardinality_and_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let summary = run_sweep(&cfg, &[small_dataset(60, 1)], dir.path()).unwrap();
    let iterative = summary.records.iter().filter(|r| r.cell.backend == BackendKind::Iterative).count();
    let baseline = summary.records.iter().filter(|r| r.cell.backend == BackendKind::Cholesky).count();
    assert_eq!((iterative, baseline), (20, 5));
    assert_eq!(summary.skipped, 0);
    // One training per (split, eps_train) plus one baseline per split.
    assert_eq!(summary.trainings, 5 * 2 + 5);
    assert!(summary.records.iter().all(|r| r.is_ok()), "{:?}", summary.records.iter().find(|r| !r.is_ok()));

    let summary_rows = read_lines(&dir.path().join(SUMMARY_FILE));
    assert_eq!(summary_rows.len(), 1 + 25);
    assert!(!summary_rows[0].contains("wall_time"));
}

#[test]
fn ranks_above_training_size_are_skipped_with_reason() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.backends = vec![BackendKind::Iterative];
    cfg.lanczos_ranks = vec![10_000];
    cfg.eps_train = vec![1e-2];
    cfg.splits = 1;
    cfg.subsample = 2000;
    let ds = small_dataset(2500, 2);
    let summary = run_sweep(&cfg, &[ds], dir.path()).unwrap();
    assert_eq!(summary.skipped, 1);
    assert_eq!(summary.trainings, 0);
    let skipped: Vec<SkipRecord> = read_jsonl(&dir.path().join(SKIPPED_FILE)).unwrap();
    assert_eq!(skipped.len(), 1);
    assert_eq!(skipped[0].reason, SKIP_RANK_ABOVE_N);
    assert_eq!(skipped[0].cell.k, Some(10_000));
}

#[test]
fn every_cell_lands_in_results_or_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.lanczos_ranks = vec![5, 45, 100];
    cfg.splits = 2;
    let ds = small_dataset(60, 3);
    run_sweep(&cfg, &[ds], dir.path()).unwrap();
    let results: HashSet<String> = load_results(dir.path()).unwrap().into_iter().map(|r| r.key).collect();
    let skipped: HashSet<String> =
        read_jsonl::<SkipRecord>(&dir.path().join(SKIPPED_FILE)).unwrap().into_iter().map(|r| r.key).collect();
    assert!(results.is_disjoint(&skipped));
    // 2 splits x (2 eps x 3 k + 1 baseline); n_train = 48 rules out k = 100.
    assert_eq!(results.len() + skipped.len(), 2 * (2 * 3 + 1));
    assert_eq!(skipped.len(), 2 * 2);
}

#[test]
fn resume_recomputes_only_missing_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let ds = small_dataset(60, 4);
    run_sweep(&cfg, std::slice::from_ref(&ds), dir.path()).unwrap();
    let before = std::fs::read(dir.path().join(SUMMARY_FILE)).unwrap();

    let results = dir.path().join(RESULTS_FILE);
    let lines = read_lines(&results);
    let kept: Vec<&String> = lines.iter().step_by(2).collect();
    let removed = lines.len() - kept.len();
    std::fs::write(&results, kept.iter().map(|l| format!("{l}\n")).collect::<String>()).unwrap();

    let summary = run_sweep(&cfg, &[ds], dir.path()).unwrap();
    assert_eq!(summary.computed + summary.failed, removed);
    assert_eq!(summary.reused, kept.len());
    assert_eq!(std::fs::read(dir.path().join(SUMMARY_FILE)).unwrap(), before);
}

#[test]
fn torn_trailing_line_is_ignored_on_resume() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.splits = 1;
    let ds = small_dataset(40, 5);
    run_sweep(&cfg, std::slice::from_ref(&ds), dir.path()).unwrap();
    let results = dir.path().join(RESULTS_FILE);
    let mut text = std::fs::read_to_string(&results).unwrap();
    text.push_str("{\"key\": \"half a rec");
    std::fs::write(&results, text).unwrap();
    let summary = run_sweep(&cfg, &[ds], dir.path()).unwrap();
    assert_eq!(summary.computed, 0);
    assert_eq!(summary.records.len(), 5);
}

#[test]
fn report_means_match_hand_computed_values() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.splits = 3;
    let ds = small_dataset(60, 6);
    run_sweep(&cfg, &[ds], dir.path()).unwrap();
    let records = load_results(dir.path()).unwrap();

    let path = emit_report(dir.path(), ReportKind::NllVsRank).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    let header = reader.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), aggregate(&records, ReportKind::NllVsRank).len());
    assert_eq!(rows.len(), 2 * 2 + 1);

    for row in &rows {
        let backend = &row[col("backend")];
        let matching: Vec<f64> = records
            .iter()
            .filter(|r| r.cell.backend.to_string() == backend)
            .filter(|r| r.cell.eps_train.map(|v| v.to_string()).unwrap_or_default() == row[col("eps_train")])
            .filter(|r| r.cell.k.map(|v| v.to_string()).unwrap_or_default() == row[col("k")])
            .map(|r| r.nll.unwrap())
            .collect();
        assert_eq!(matching.len(), 3);
        let mean = matching.iter().sum::<f64>() / 3.0;
        let reported: f64 = row[col("nll_mean")].parse().unwrap();
        assert!((reported - mean).abs() <= 1e-12 * mean.abs().max(1.0), "{reported} vs {mean}");
        assert_eq!(row[col("n_splits")].parse::<usize>().unwrap(), 3);
        if backend == "cholesky" {
            assert_eq!(&row[col("k")], "");
            assert_eq!(&row[col("w")], "");
        }
    }

    for kind in ReportKind::ALL {
        assert!(emit_report(dir.path(), kind).unwrap().exists());
    }
}

#[test]
fn skewed_test_split_keeps_its_own_location() {
    let ds = skewed_dataset(400, 3, 7);
    let split = split_and_standardize(&ds, 11, 0.8).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&split.train_y).abs() < 1e-12);
    assert!(mean(&split.test_y).abs() > 1e-3);
    let col0: Vec<f64> = split.test_x.col_as_slice(0).to_vec();
    assert!(mean(&col0).abs() > 1e-3);
}

#[test]
fn sweep_rejects_empty_or_duplicate_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    assert!(run_sweep(&cfg, &[], dir.path()).is_err());
    let ds = small_dataset(30, 8);
    assert!(run_sweep(&cfg, &[ds.clone(), ds], dir.path()).is_err());
}
