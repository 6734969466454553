use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use itergp::gp::{Backend, GpModel, IterativeSettings};
use itergp::linop::Precision;
use itergp::optimizers::Method;
use itergp::solvers::{DEFAULT_MAX_CG_ITERS, DEFAULT_NUM_PROBES};
use itergp_bench::checkpoint::{DataRef, FORMAT, VERSION};
use itergp_bench::config::{DEFAULT_PRETRAIN_STEPS, DEFAULT_SPLITS, DEFAULT_SUBSAMPLE, DEFAULT_TRAIN_FRAC};
use itergp_bench::pipeline::{cache_grid, evaluate, prepare_split, train};
use itergp_bench::{
    emit_report, load_dataset, run_sweep, BackendKind, BenchError, Checkpoint, OptimizerSettings, Preset, ReportKind,
    Result, Schema, SweepConfig, TargetColumn,
};

/// Exact and iterative Gaussian-process regression experiments.
#[derive(Parser)]
#[command(name = "itergp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on one split and write a checkpoint.
    Fit(FitArgs),
    /// Predict the test rows of a checkpoint's split.
    Predict(PredictArgs),
    /// Run a grid of solver settings over datasets and splits.
    Sweep(SweepArgs),
    /// Write aggregated tables from a sweep directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Delimited numeric text file (comma or whitespace, optional header).
    #[arg(long)]
    data: PathBuf,
    /// Target column: zero-based index, header name, or `last`.
    #[arg(long, default_value = "last")]
    target: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRAC)]
    train_frac: f64,
    #[arg(long, default_value_t = DEFAULT_SUBSAMPLE)]
    subsample: usize,
    /// Which random split to use.
    #[arg(long, default_value_t = 0)]
    split: usize,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = DEFAULT_MAX_CG_ITERS)]
    max_cg_iters: usize,
    #[arg(long, default_value_t = DEFAULT_NUM_PROBES)]
    probes: usize,
    #[arg(long, default_value_t = Precision::F64)]
    precision: Precision,
    #[arg(long)]
    preset: Option<Preset>,
}

#[derive(Args)]
struct OptimizerArgs {
    #[arg(long, default_value_t = Method::Adam)]
    optimizer: Method,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 2000)]
    max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    lbfgs_memory: usize,
    /// L-BFGS steps before Adam takes over (Adam only).
    #[arg(long, default_value_t = DEFAULT_PRETRAIN_STEPS)]
    pretrain_steps: usize,
}

impl OptimizerArgs {
    fn settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            lr: self.lr,
            max_epochs: self.max_epochs,
            lbfgs_memory: self.lbfgs_memory,
            pretrain_steps: self.pretrain_steps,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = BackendKind::Iterative)]
    backend: BackendKind,
    /// Training CG tolerance [default: 1e-3, or the preset's].
    #[arg(long)]
    cg_tol: Option<f64>,
    /// Preconditioner rank [default: 50, or the preset's].
    #[arg(long)]
    precond_rank: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    opt: OptimizerArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint to load [default: <out>/checkpoint.json].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Test-time backend [default: the checkpoint's].
    #[arg(long)]
    backend: Option<BackendKind>,
    /// Test-time CG tolerance [default: 1e-2, or the preset's].
    #[arg(long)]
    cg_tol_test: Option<f64>,
    /// Lanczos rank of the covariance cache [default: 5000 capped at the
    /// training size, or the preset's].
    #[arg(long)]
    lanczos_rank: Option<usize>,
    /// Preconditioner rank [default: the checkpoint's, else 50].
    #[arg(long)]
    precond_rank: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Dataset file; repeat for several datasets.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    #[arg(long, default_value = "last")]
    target: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_SPLITS)]
    splits: usize,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRAC)]
    train_frac: f64,
    #[arg(long, default_value_t = DEFAULT_SUBSAMPLE)]
    subsample: usize,
    /// Training tolerances, comma separated.
    #[arg(long, value_delimiter = ',')]
    cg_tol: Vec<f64>,
    /// Test tolerances, comma separated; paired with training tolerances
    /// when omitted.
    #[arg(long, value_delimiter = ',')]
    cg_tol_test: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    precond_rank: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    lanczos_rank: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_MAX_CG_ITERS)]
    max_cg_iters: usize,
    #[arg(long, default_value_t = DEFAULT_NUM_PROBES)]
    probes: usize,
    /// Lanczos steps per probe in the log-determinant estimate.
    #[arg(long)]
    logdet_rank: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    optimizer: Vec<Method>,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 2000)]
    max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    lbfgs_memory: usize,
    #[arg(long, default_value_t = DEFAULT_PRETRAIN_STEPS)]
    pretrain_steps: usize,
    #[arg(long, value_delimiter = ',')]
    precision: Vec<Precision>,
    #[arg(long, value_delimiter = ',')]
    backend: Vec<BackendKind>,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Sweep output directory.
    #[arg(long)]
    out: PathBuf,
    /// nll_vs_rank, rmse_vs_tolerance, loss_trajectories or
    /// optimizer_comparison [default: all].
    #[arg(long)]
    kind: Option<String>,
}

fn schema(target: &str) -> Schema {
    Schema::new(target.parse::<TargetColumn>().expect("infallible"))
}

fn load(path: &Path, target: &str) -> Result<itergp_bench::Dataset> {
    let ds = load_dataset(path, &schema(target))?;
    for w in &ds.provenance.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(ds)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(BenchError::io(dir))
}

fn fit(args: FitArgs) -> Result<()> {
    let ds = load(&args.data.data, &args.data.target)?;
    let d = &args.data;
    let split = prepare_split(&ds, d.seed, d.subsample, d.train_frac, d.split)?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    let (preset_tol, _, preset_w, _) = args.solver.preset.unwrap_or(Preset::Recommended).settings();
    let backend = match args.backend {
        BackendKind::Cholesky => Backend::Cholesky,
        BackendKind::Iterative => Backend::Iterative(IterativeSettings {
            cg_tol: args.cg_tol.unwrap_or(preset_tol),
            precond_rank: args.precond_rank.unwrap_or(preset_w),
            max_cg_iters: args.solver.max_cg_iters,
            num_probes: args.solver.probes,
            precision: args.solver.precision,
            seed: d.seed,
            ..IterativeSettings::default()
        }),
    };
    let opt = args.opt.settings().config(args.opt.optimizer);
    let trained = train(split.train_x.clone(), split.train_y.clone(), backend.clone(), &opt)?;
    create_dir(&args.out)?;
    let ckpt = Checkpoint {
        format: FORMAT.into(),
        version: VERSION,
        hyperparams: trained.model.hyperparams().clone(),
        backend,
        optimizer: opt,
        stats: split.stats.clone(),
        data: DataRef::of(&ds, &d.target),
        seed: d.seed,
        split: d.split,
        train_frac: d.train_frac,
        subsample: d.subsample,
        train_mll: -trained.fit.loss,
        grad_evals: trained.fit.trace.total_grad_evals(),
        stop_reason: trained.fit.trace.stop_reason,
    };
    let path = args.out.join("checkpoint.json");
    ckpt.save(&path)?;
    let trace_path = args.out.join("trace.json");
    let trace = serde_json::to_string(&trained.fit.trace).map_err(BenchError::json(&trace_path))?;
    std::fs::write(&trace_path, trace + "\n").map_err(BenchError::io(&trace_path))?;
    let theta = trained.model.hyperparams();
    println!("train_mll {:.6}", ckpt.train_mll);
    println!("steps {} grad_evals {} stop {:?}", trained.fit.trace.steps(), ckpt.grad_evals, ckpt.stop_reason);
    println!("lengthscales {:?}", theta.lengthscales());
    println!("outputscale {:.6} noise {:.6} mean {:.6}", theta.outputscale(), theta.noise(), theta.mean_constant);
    println!("wrote {}", path.display());
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let ckpt_path = args.checkpoint.clone().unwrap_or_else(|| args.out.join("checkpoint.json"));
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let ds = load(&args.data.data, &args.data.target)?;
    if !ckpt.data.matches(&ds) {
        return Err(BenchError::contract(format!(
            "{} does not match the data the checkpoint was trained on ({})",
            args.data.data.display(),
            ckpt.data.name
        )));
    }
    let split = prepare_split(&ds, ckpt.seed, ckpt.subsample, ckpt.train_frac, ckpt.split)?;
    if split.stats != ckpt.stats {
        return Err(BenchError::contract("rebuilt split does not reproduce the checkpoint's statistics"));
    }
    let n_train = split.train_y.len();
    let (_, preset_tol, preset_w, preset_k) = args.solver.preset.unwrap_or(Preset::Recommended).settings();
    let trained_w = match &ckpt.backend {
        Backend::Iterative(s) => Some(s.precond_rank),
        Backend::Cholesky => None,
    };
    let kind = args.backend.unwrap_or(match ckpt.backend {
        Backend::Cholesky => BackendKind::Cholesky,
        Backend::Iterative(_) => BackendKind::Iterative,
    });
    let k = match args.lanczos_rank {
        Some(k) if k > n_train => {
            return Err(BenchError::contract(format!("Lanczos rank {k} exceeds the {n_train} training rows")));
        }
        Some(k) => k,
        None => preset_k.min(n_train),
    };
    let backend = match kind {
        BackendKind::Cholesky => Backend::Cholesky,
        BackendKind::Iterative => Backend::Iterative(IterativeSettings {
            cg_tol: args.cg_tol_test.unwrap_or(preset_tol),
            precond_rank: args.precond_rank.or(trained_w).unwrap_or(preset_w),
            max_cg_iters: args.solver.max_cg_iters,
            num_probes: args.solver.probes,
            precision: args.solver.precision,
            seed: ckpt.seed,
            ..IterativeSettings::default()
        }),
    };
    let model = GpModel::new(split.train_x.clone(), split.train_y.clone(), ckpt.hyperparams.clone(), backend.clone())?;
    let caches = cache_grid(&model, &[backend], &[k])?;
    let eval = evaluate(&caches[0][0], &model, &split.test_x, &split.test_y)?;

    create_dir(&args.out)?;
    let path = args.out.join("predictions.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["row", "y", "mean", "variance", "y_raw", "mean_raw", "variance_raw"])?;
    let p = &eval.prediction;
    for (i, &row) in split.test_rows.iter().enumerate() {
        let s = &split.stats;
        w.write_record([
            row.to_string(),
            split.test_y[i].to_string(),
            p.mean[i].to_string(),
            p.variance[i].to_string(),
            s.unscale_mean(split.test_y[i]).to_string(),
            s.unscale_mean(p.mean[i]).to_string(),
            s.unscale_variance(p.variance[i]).to_string(),
        ])?;
    }
    w.flush().map_err(BenchError::io(&path))?;
    println!("backend {} rank {} (requested {k})", kind, eval.rank);
    println!("rmse {:.6} nll {:.6} (standardized)", eval.rmse, eval.nll);
    println!(
        "rmse {:.6} nll {:.6} (target units)",
        split.stats.unscale_rmse(eval.rmse),
        split.stats.unscale_nll(eval.nll)
    );
    if let Some(it) = eval.cg_iters_mean {
        println!("mean-cache CG iterations {it}");
    }
    if eval.clamped > 0 {
        eprintln!("warning: {} latent variances clamped to the floor", eval.clamped);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = SweepConfig {
        splits: args.splits,
        seed: args.seed,
        train_frac: args.train_frac,
        subsample: args.subsample,
        max_cg_iters: args.max_cg_iters,
        num_probes: args.probes,
        optimizer: OptimizerSettings {
            lr: args.lr,
            max_epochs: args.max_epochs,
            lbfgs_memory: args.lbfgs_memory,
            pretrain_steps: args.pretrain_steps,
        },
        ..SweepConfig::default()
    };
    if let Some(p) = args.preset {
        cfg = cfg.with_preset(p);
    }
    if !args.cg_tol.is_empty() {
        cfg.eps_train = args.cg_tol;
    }
    if !args.cg_tol_test.is_empty() {
        cfg.eps_test = Some(args.cg_tol_test);
    }
    if !args.precond_rank.is_empty() {
        cfg.precond_ranks = args.precond_rank;
    }
    if !args.lanczos_rank.is_empty() {
        cfg.lanczos_ranks = args.lanczos_rank;
    }
    if let Some(r) = args.logdet_rank {
        cfg.logdet_rank = r;
    }
    if !args.optimizer.is_empty() {
        cfg.optimizers = args.optimizer;
    }
    if !args.precision.is_empty() {
        cfg.precisions = args.precision;
    }
    if !args.backend.is_empty() {
        cfg.backends = args.backend;
    }
    let datasets = args.data.iter().map(|p| load(p, &args.target)).collect::<Result<Vec<_>>>()?;
    let summary = run_sweep(&cfg, &datasets, &args.out)?;
    println!(
        "computed {} failed {} skipped {} reused {} trainings {}",
        summary.computed, summary.failed, summary.skipped, summary.reused, summary.trainings
    );
    println!("wrote {}", args.out.join(itergp_bench::sweep::SUMMARY_FILE).display());
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let kinds = match &args.kind {
        Some(k) => vec![k.parse::<ReportKind>()?],
        None => ReportKind::ALL.to_vec(),
    };
    for kind in kinds {
        let path = emit_report(&args.out, kind)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
