//! Tidy tables for plotting, aggregated over splits.
//!
//! Every aggregated table has the grouping columns `dataset, backend,
//! eps_train, eps_test, w, k, optimizer, precision` (iterative axes blank on
//! Cholesky baseline rows), then `n_splits` and a `<metric>_mean`,
//! `<metric>_std` pair per metric. Failed cells are left out.
//!
//! - `nll_vs_rank`: test NLL.
//! - `rmse_vs_tolerance`: test RMSE.
//! - `optimizer_comparison`: train MLL, gradient evaluations, wall time,
//!   test RMSE and NLL.
//! - `loss_trajectories`: one row per optimizer step of every training run
//!   with `dataset, split, backend, eps_train, w, optimizer, precision, step,
//!   loss, grad_evals, method`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{BenchError, Result};
use crate::sweep::{load_results, read_jsonl, CellKey, SweepRecord, TraceRecord, TRACES_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportKind {
    NllVsRank,
    RmseVsTolerance,
    LossTrajectories,
    OptimizerComparison,
}

impl ReportKind {
    pub const ALL: [ReportKind; 4] = [
        ReportKind::NllVsRank,
        ReportKind::RmseVsTolerance,
        ReportKind::LossTrajectories,
        ReportKind::OptimizerComparison,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReportKind::NllVsRank => "nll_vs_rank",
            ReportKind::RmseVsTolerance => "rmse_vs_tolerance",
            ReportKind::LossTrajectories => "loss_trajectories",
            ReportKind::OptimizerComparison => "optimizer_comparison",
        }
    }
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReportKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| BenchError::contract(format!("unknown report kind {s:?}")))
    }
}

type Metric = fn(&SweepRecord) -> Option<f64>;

fn metrics(kind: ReportKind) -> Vec<(&'static str, Metric)> {
    match kind {
        ReportKind::NllVsRank => vec![("nll", |r| r.nll)],
        ReportKind::RmseVsTolerance => vec![("rmse", |r| r.rmse)],
        ReportKind::OptimizerComparison => vec![
            ("train_mll", |r| r.train_mll),
            ("grad_evals", |r| r.grad_evals.map(|g| g as f64)),
            ("wall_time_s", |r| Some(r.wall_time_s)),
            ("rmse", |r| r.rmse),
            ("nll", |r| r.nll),
        ],
        ReportKind::LossTrajectories => vec![],
    }
}

/// One aggregated point: the cell coordinates without the split, and the
/// mean and sample standard deviation of each metric over splits.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub cell: CellKey,
    pub n_splits: usize,
    pub stats: Vec<(f64, f64)>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Groups successful records by everything but the split and averages the
/// metrics of `kind`.
pub fn aggregate(records: &[SweepRecord], kind: ReportKind) -> Vec<AggregateRow> {
    let metrics = metrics(kind);
    let mut groups: BTreeMap<String, (CellKey, Vec<&SweepRecord>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        let cell = CellKey { split: 0, ..r.cell.clone() };
        groups.entry(cell.id()).or_insert_with(|| (cell, Vec::new())).1.push(r);
    }
    let mut rows: Vec<AggregateRow> = groups
        .into_values()
        .map(|(cell, members)| {
            let stats = metrics
                .iter()
                .map(|(_, get)| {
                    let vals: Vec<f64> = members.iter().filter_map(|r| get(r)).collect();
                    if vals.is_empty() {
                        (f64::NAN, f64::NAN)
                    } else {
                        mean_std(&vals)
                    }
                })
                .collect();
            AggregateRow { cell, n_splits: members.len(), stats }
        })
        .collect();
    rows.sort_by(|a, b| a.cell.order(&b.cell));
    rows
}

fn blank<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn cell_columns(c: &CellKey) -> Vec<String> {
    vec![
        c.dataset.clone(),
        c.backend.to_string(),
        blank(&c.eps_train),
        blank(&c.eps_test),
        blank(&c.w),
        blank(&c.k),
        c.optimizer.to_string(),
        c.precision.to_string(),
    ]
}

/// Writes `<out>/<kind>.csv` from the results in `out` and returns its path.
pub fn emit_report(out: &Path, kind: ReportKind) -> Result<PathBuf> {
    let path = out.join(format!("{kind}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    if kind == ReportKind::LossTrajectories {
        let traces: Vec<TraceRecord> = read_jsonl(&out.join(TRACES_FILE))?;
        if traces.is_empty() {
            return Err(BenchError::contract(format!("no training traces in {}", out.display())));
        }
        let mut latest: BTreeMap<String, TraceRecord> = BTreeMap::new();
        for t in traces {
            latest.insert(t.training.clone(), t);
        }
        w.write_record([
            "dataset", "split", "backend", "eps_train", "w", "optimizer", "precision", "step", "loss", "grad_evals",
            "method",
        ])?;
        for t in latest.values() {
            for (step, loss) in t.trace.losses.iter().enumerate() {
                w.write_record([
                    t.dataset.clone(),
                    t.split.to_string(),
                    t.backend.to_string(),
                    blank(&t.eps_train),
                    blank(&t.w),
                    t.optimizer.to_string(),
                    t.precision.to_string(),
                    step.to_string(),
                    num(*loss),
                    t.trace.grad_evals[step].to_string(),
                    t.trace.methods[step].to_string(),
                ])?;
            }
        }
    } else {
        let records = load_results(out)?;
        if records.is_empty() {
            return Err(BenchError::contract(format!("no results in {}", out.display())));
        }
        let mut header: Vec<String> =
            ["dataset", "backend", "eps_train", "eps_test", "w", "k", "optimizer", "precision", "n_splits"]
                .map(String::from)
                .to_vec();
        for (name, _) in metrics(kind) {
            header.push(format!("{name}_mean"));
            header.push(format!("{name}_std"));
        }
        w.write_record(&header)?;
        for row in aggregate(&records, kind) {
            let mut fields = cell_columns(&row.cell);
            fields.push(row.n_splits.to_string());
            for (m, s) in &row.stats {
                fields.push(num(*m));
                fields.push(num(*s));
            }
            w.write_record(&fields)?;
        }
    }
    w.flush().map_err(BenchError::io(&path))?;
    Ok(path)
}
