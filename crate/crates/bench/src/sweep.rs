//! Grid sweeps with append-only, resumable results.
//!
//! Output directory layout:
//! - `results.jsonl`: one self-describing record per computed cell, failed
//!   cells included; appended as cells finish.
//! - `skipped.jsonl`: cells that cannot run, with the reason.
//! - `traces.jsonl`: one optimizer trace per training run.
//! - `summary.csv`: every result sorted by cell, without timings, so two
//!   runs of the same sweep produce identical bytes.
//! - `timings.csv`: wall-clock seconds per cell.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use itergp::gp::Backend;
use itergp::linop::Precision;
use itergp::optimizers::{FitTrace, Method};
use itergp::rng::derive_seed;

use crate::config::{BackendKind, SweepConfig};
use crate::dataset::Dataset;
use crate::error::{BenchError, Result};
use crate::pipeline::{cache_grid, evaluate, key_stream, prepare_split, train, Evaluation};
use crate::split::Split;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SKIPPED_FILE: &str = "skipped.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const CONFIG_FILE: &str = "sweep_config.json";

pub const SKIP_RANK_ABOVE_N: &str = "k>n";

/// Coordinates of one grid cell. Baseline cells leave the iterative axes
/// empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub dataset: String,
    pub split: usize,
    pub backend: BackendKind,
    pub eps_train: Option<f64>,
    pub eps_test: Option<f64>,
    pub w: Option<usize>,
    pub k: Option<usize>,
    pub optimizer: Method,
    pub precision: Precision,
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn cmp_f64(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        _ => a.is_some().cmp(&b.is_some()),
    }
}

impl CellKey {
    pub fn baseline(dataset: &str, split: usize, optimizer: Method) -> Self {
        Self {
            dataset: dataset.into(),
            split,
            backend: BackendKind::Cholesky,
            eps_train: None,
            eps_test: None,
            w: None,
            k: None,
            optimizer,
            precision: Precision::F64,
        }
    }

    /// Unique text form, used for resume and seed derivation.
    pub fn id(&self) -> String {
        format!(
            "{}|split={}|{}|eps_train={}|eps_test={}|w={}|k={}|{}|{}",
            self.dataset,
            self.split,
            self.backend,
            opt(&self.eps_train),
            opt(&self.eps_test),
            opt(&self.w),
            opt(&self.k),
            self.optimizer,
            self.precision
        )
    }

    /// Key of the training run the cell's model comes from.
    pub fn training_id(&self) -> String {
        format!(
            "train|{}|split={}|{}|eps_train={}|w={}|{}|{}",
            self.dataset,
            self.split,
            self.backend,
            opt(&self.eps_train),
            opt(&self.w),
            self.optimizer,
            self.precision
        )
    }

    /// Table order: dataset, split, backend, then the numeric axes.
    pub fn order(&self, other: &Self) -> Ordering {
        self.dataset
            .cmp(&other.dataset)
            .then(self.split.cmp(&other.split))
            .then(self.backend.cmp(&other.backend))
            .then(cmp_f64(self.eps_train, other.eps_train))
            .then(cmp_f64(self.eps_test, other.eps_test))
            .then(self.w.cmp(&other.w))
            .then(self.k.cmp(&other.k))
            .then(self.optimizer.to_string().cmp(&other.optimizer.to_string()))
            .then(self.precision.to_string().cmp(&other.precision.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// Metrics are in standardized target units. `train_mll` is the training
/// objective at the returned hyperparameters (MLL divided by the number of
/// training rows, as computed by the training backend). `cg_iters_mean` is
/// the iteration count of the test-time mean solve. `wall_time_s` covers the
/// shared training run plus cache construction and prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub key: String,
    #[serde(flatten)]
    pub cell: CellKey,
    pub status: CellStatus,
    pub error: Option<String>,
    pub train_mll: Option<f64>,
    pub rmse: Option<f64>,
    pub nll: Option<f64>,
    pub cg_iters_mean: Option<f64>,
    pub clamped_count: Option<usize>,
    pub grad_evals: Option<usize>,
    /// Lanczos rank actually reached; below `k` after a breakdown.
    pub lanczos_rank: Option<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub wall_time_s: f64,
}

impl SweepRecord {
    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub key: String,
    #[serde(flatten)]
    pub cell: CellKey,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub training: String,
    pub dataset: String,
    pub split: usize,
    pub backend: BackendKind,
    pub eps_train: Option<f64>,
    pub w: Option<usize>,
    pub optimizer: Method,
    pub precision: Precision,
    pub seed: u64,
    pub trace: FitTrace,
}

/// What one call to [`run_sweep`] did, plus every result now on disk.
#[derive(Clone, Debug, Default)]
pub struct SweepSummary {
    pub computed: usize,
    pub failed: usize,
    pub skipped: usize,
    /// Cells found on disk and not recomputed.
    pub reused: usize,
    pub trainings: usize,
    pub records: Vec<SweepRecord>,
}

/// Reads a JSON-lines file, ignoring a torn final line left by a crash.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(BenchError::Io { path: path.to_path_buf(), source: e }),
    };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(BenchError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(v) = serde_json::from_str(&line) {
            out.push(v);
        }
    }
    Ok(out)
}

/// Results on disk, last record per key winning, in table order.
pub fn load_results(dir: &Path) -> Result<Vec<SweepRecord>> {
    let mut latest: HashMap<String, SweepRecord> = HashMap::new();
    for r in read_jsonl::<SweepRecord>(&dir.join(RESULTS_FILE))? {
        latest.insert(r.key.clone(), r);
    }
    let mut records: Vec<SweepRecord> = latest.into_values().collect();
    records.sort_by(|a, b| a.cell.order(&b.cell));
    Ok(records)
}

struct Appender {
    path: PathBuf,
    file: File,
}

impl Appender {
    fn open(path: PathBuf) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(BenchError::io(&path))?;
        Ok(Self { path, file })
    }

    fn push<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let mut line = serde_json::to_string(value).map_err(BenchError::json(&self.path))?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(BenchError::io(&self.path))?;
        self.file.flush().map_err(BenchError::io(&self.path))
    }
}

struct Writers {
    results: Appender,
    skipped: Appender,
    traces: Appender,
    done: HashSet<String>,
    summary: SweepSummary,
}

impl Writers {
    fn record(&mut self, rec: SweepRecord) -> Result<()> {
        if rec.is_ok() {
            self.summary.computed += 1;
        } else {
            self.summary.failed += 1;
            eprintln!("cell {} failed: {}", rec.key, rec.error.as_deref().unwrap_or(""));
        }
        self.results.push(&rec)?;
        self.done.insert(rec.key);
        Ok(())
    }

    fn skip(&mut self, cell: CellKey, reason: &str) -> Result<()> {
        let rec = SkipRecord { key: cell.id(), cell, reason: reason.into() };
        self.skipped.push(&rec)?;
        self.summary.skipped += 1;
        self.done.insert(rec.key);
        Ok(())
    }
}

fn blank_record(cell: CellKey, split: &Split, seed: u64) -> SweepRecord {
    SweepRecord {
        key: cell.id(),
        cell,
        status: CellStatus::Ok,
        error: None,
        train_mll: None,
        rmse: None,
        nll: None,
        cg_iters_mean: None,
        clamped_count: None,
        grad_evals: None,
        lanczos_rank: None,
        n_train: split.train_y.len(),
        n_test: split.test_y.len(),
        seed,
        wall_time_s: 0.0,
    }
}

fn failed(mut rec: SweepRecord, err: &dyn std::fmt::Display) -> SweepRecord {
    rec.status = CellStatus::Failed;
    rec.error = Some(err.to_string());
    rec
}

fn filled(mut rec: SweepRecord, train_mll: f64, grad_evals: usize, eval: &Evaluation) -> SweepRecord {
    rec.train_mll = Some(train_mll);
    rec.grad_evals = Some(grad_evals);
    rec.rmse = Some(eval.rmse);
    rec.nll = Some(eval.nll);
    rec.cg_iters_mean = eval.cg_iters_mean;
    rec.clamped_count = Some(eval.clamped);
    rec.lanczos_rank = Some(eval.rank);
    rec
}

/// Runs every cell of `cfg` on every dataset that is not already recorded
/// in `out`, then rewrites the summary tables from everything on disk.
/// Cells that fail are recorded as failed and the sweep continues.
pub fn run_sweep(cfg: &SweepConfig, datasets: &[Dataset], out: &Path) -> Result<SweepSummary> {
    cfg.validate()?;
    if datasets.is_empty() {
        return Err(BenchError::contract("no datasets given"));
    }
    let mut names = HashSet::new();
    if let Some(d) = datasets.iter().find(|d| !names.insert(d.name.as_str())) {
        return Err(BenchError::contract(format!("dataset name {:?} appears twice", d.name)));
    }
    std::fs::create_dir_all(out).map_err(BenchError::io(out))?;
    let cfg_path = out.join(CONFIG_FILE);
    let cfg_json = serde_json::to_string_pretty(cfg).map_err(BenchError::json(&cfg_path))?;
    std::fs::write(&cfg_path, cfg_json + "\n").map_err(BenchError::io(&cfg_path))?;

    let mut done: HashSet<String> = read_jsonl::<SweepRecord>(&out.join(RESULTS_FILE))?
        .into_iter()
        .map(|r| r.key)
        .collect();
    done.extend(read_jsonl::<SkipRecord>(&out.join(SKIPPED_FILE))?.into_iter().map(|r| r.key));
    let mut w = Writers {
        results: Appender::open(out.join(RESULTS_FILE))?,
        skipped: Appender::open(out.join(SKIPPED_FILE))?,
        traces: Appender::open(out.join(TRACES_FILE))?,
        done,
        summary: SweepSummary::default(),
    };

    for ds in datasets {
        for s in 0..cfg.splits {
            let split = prepare_split(ds, cfg.seed, cfg.subsample, cfg.train_frac, s)?;
            for msg in &split.warnings {
                eprintln!("{} split {s}: {msg}", ds.name);
            }
            if cfg.has_cholesky() {
                run_baseline(cfg, ds, s, &split, &mut w)?;
            }
            if cfg.has_iterative() {
                run_iterative(cfg, ds, s, &split, &mut w)?;
            }
        }
    }

    let mut summary = w.summary;
    summary.records = load_results(out)?;
    write_summary(out, &summary.records)?;
    Ok(summary)
}

fn run_baseline(cfg: &SweepConfig, ds: &Dataset, s: usize, split: &Split, w: &mut Writers) -> Result<()> {
    for &method in &cfg.optimizers {
        let cell = CellKey::baseline(&ds.name, s, method);
        if w.done.contains(&cell.id()) {
            w.summary.reused += 1;
            continue;
        }
        let seed = derive_seed(cfg.seed, key_stream(&cell.id()));
        let rec = blank_record(cell.clone(), split, seed);
        let clock = Instant::now();
        let outcome = (|| -> Result<SweepRecord> {
            let trained = train(split.train_x.clone(), split.train_y.clone(), Backend::Cholesky, &cfg.optimizer.config(method))?;
            w.summary.trainings += 1;
            w.traces.push(&trace_record(&cell, seed, &trained.fit.trace))?;
            let caches = cache_grid(&trained.model, &[Backend::Cholesky], &[1])?;
            let eval = evaluate(&caches[0][0], &trained.model, &split.test_x, &split.test_y)?;
            Ok(filled(rec.clone(), -trained.fit.loss, trained.fit.trace.total_grad_evals(), &eval))
        })();
        let mut rec = outcome.unwrap_or_else(|e| failed(rec, &e));
        rec.wall_time_s = clock.elapsed().as_secs_f64();
        w.record(rec)?;
    }
    Ok(())
}

fn trace_record(cell: &CellKey, seed: u64, trace: &FitTrace) -> TraceRecord {
    TraceRecord {
        training: cell.training_id(),
        dataset: cell.dataset.clone(),
        split: cell.split,
        backend: cell.backend,
        eps_train: cell.eps_train,
        w: cell.w,
        optimizer: cell.optimizer,
        precision: cell.precision,
        seed,
        trace: trace.clone(),
    }
}

fn run_iterative(cfg: &SweepConfig, ds: &Dataset, s: usize, split: &Split, w: &mut Writers) -> Result<()> {
    let n_train = split.train_y.len();
    for &eps_train in &cfg.eps_train {
        for &rank in &cfg.precond_ranks {
            for &method in &cfg.optimizers {
                for &precision in &cfg.precisions {
                    let mut pending = Vec::new();
                    for eps_test in cfg.test_tolerances(eps_train) {
                        for &k in &cfg.lanczos_ranks {
                            let cell = CellKey {
                                dataset: ds.name.clone(),
                                split: s,
                                backend: BackendKind::Iterative,
                                eps_train: Some(eps_train),
                                eps_test: Some(eps_test),
                                w: Some(rank),
                                k: Some(k),
                                optimizer: method,
                                precision,
                            };
                            if w.done.contains(&cell.id()) {
                                w.summary.reused += 1;
                            } else if k > n_train {
                                w.skip(cell, SKIP_RANK_ABOVE_N)?;
                            } else {
                                pending.push(cell);
                            }
                        }
                    }
                    if !pending.is_empty() {
                        run_training_group(cfg, split, &pending, w)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Trains once for cells that share `(split, eps_train, w, optimizer,
/// precision)` and evaluates each pending `(eps_test, k)`.
fn run_training_group(cfg: &SweepConfig, split: &Split, pending: &[CellKey], w: &mut Writers) -> Result<()> {
    let head = &pending[0];
    let (eps_train, rank) = (head.eps_train.expect("iterative"), head.w.expect("iterative"));
    let seed = derive_seed(cfg.seed, key_stream(&head.training_id()));
    let clock = Instant::now();
    eprintln!("training {}", head.training_id());
    let trained = train(
        split.train_x.clone(),
        split.train_y.clone(),
        cfg.backend(eps_train, rank, head.precision, seed),
        &cfg.optimizer.config(head.optimizer),
    );
    let trained = match trained {
        Ok(t) => t,
        Err(e) => {
            for cell in pending {
                let mut rec = failed(blank_record(cell.clone(), split, seed), &e);
                rec.wall_time_s = clock.elapsed().as_secs_f64();
                w.record(rec)?;
            }
            return Ok(());
        }
    };
    w.summary.trainings += 1;
    w.traces.push(&trace_record(head, seed, &trained.fit.trace))?;

    let mut tolerances: Vec<f64> = Vec::new();
    let mut ranks: Vec<usize> = Vec::new();
    for c in pending {
        let (t, k) = (c.eps_test.expect("iterative"), c.k.expect("iterative"));
        if !tolerances.contains(&t) {
            tolerances.push(t);
        }
        if !ranks.contains(&k) {
            ranks.push(k);
        }
    }
    let backends: Vec<Backend> = tolerances.iter().map(|&t| cfg.backend(t, rank, head.precision, seed)).collect();
    let grid = cache_grid(&trained.model, &backends, &ranks).map_err(|e| e.to_string());
    for cell in pending {
        let rec = blank_record(cell.clone(), split, seed);
        let outcome = match &grid {
            Err(msg) => Err(msg.clone()),
            Ok(grid) => {
                let ti = tolerances.iter().position(|t| Some(*t) == cell.eps_test).expect("listed");
                let ki = ranks.iter().position(|k| Some(*k) == cell.k).expect("listed");
                evaluate(&grid[ti][ki], &trained.model, &split.test_x, &split.test_y)
                    .map(|eval| filled(rec.clone(), -trained.fit.loss, trained.fit.trace.total_grad_evals(), &eval))
                    .map_err(|e| e.to_string())
            }
        };
        let mut rec = outcome.unwrap_or_else(|e| failed(rec, &e));
        rec.wall_time_s = clock.elapsed().as_secs_f64();
        w.record(rec)?;
    }
    Ok(())
}

/// Writes `summary.csv` (no timings) and `timings.csv`.
pub fn write_summary(out: &Path, records: &[SweepRecord]) -> Result<()> {
    let key_cols = ["dataset", "split", "backend", "eps_train", "eps_test", "w", "k", "optimizer", "precision"];
    let key_fields = |r: &SweepRecord| -> Vec<String> {
        let c = &r.cell;
        vec![
            c.dataset.clone(),
            c.split.to_string(),
            c.backend.to_string(),
            opt(&c.eps_train),
            opt(&c.eps_test),
            opt(&c.w),
            opt(&c.k),
            c.optimizer.to_string(),
            c.precision.to_string(),
        ]
    };

    let path = out.join(SUMMARY_FILE);
    let mut csv = csv::Writer::from_path(&path)?;
    let metric_cols = ["train_mll", "rmse", "nll", "cg_iters_mean", "clamped_count", "grad_evals", "status"];
    csv.write_record(key_cols.iter().chain(&metric_cols))?;
    for r in records {
        let mut row = key_fields(r);
        row.extend([
            opt(&r.train_mll),
            opt(&r.rmse),
            opt(&r.nll),
            opt(&r.cg_iters_mean),
            opt(&r.clamped_count),
            opt(&r.grad_evals),
            if r.is_ok() { "ok".into() } else { "failed".into() },
        ]);
        csv.write_record(&row)?;
    }
    csv.flush().map_err(BenchError::io(&path))?;

    let path = out.join(TIMINGS_FILE);
    let mut csv = csv::Writer::from_path(&path)?;
    csv.write_record(key_cols.iter().chain(&["wall_time_s"]))?;
    for r in records {
        let mut row = key_fields(r);
        row.push(format!("{:.3}", r.wall_time_s));
        csv.write_record(&row)?;
    }
    csv.flush().map_err(BenchError::io(&path))?;
    Ok(())
}
