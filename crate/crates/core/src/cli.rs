//! Command-line front end. The binary only calls [`run`].

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::data::{self, SyntheticLcrConfig, SyntheticRankConfig};
use crate::error::{Error, Result};
use crate::eval::{self, MetricReport, CSV_HEADER};
use crate::lcr::{self, InteractionSet, LatentModel, LatentTrainOutcome, RoundReport, SgdConfig};
use crate::ltr::{self, Init, RankingDataset, TrainConfig};
use crate::parallel::{self, ParallelConfig};
use crate::verify::{self, Derivatives, VerifyOptions};

#[derive(Debug, Parser)]
#[command(name = "robirank", version, about = "Robust ranking: feature-based learning to rank and latent collaborative retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a linear ranker on LETOR files, selecting lambda on validation NDCG.
    TrainRank(TrainRankArgs),
    /// Fit context and item embeddings on implicit-feedback triplets.
    TrainLcr(TrainLcrArgs),
    /// Score a saved model on a dataset.
    Eval(EvalArgs),
    /// Run the built-in property checks.
    Verify(VerifyArgs),
    /// Write synthetic datasets.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainRankArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Comma-separated regularization values.
    #[arg(long, value_delimiter = ',', default_values_t = ltr::DEFAULT_LAMBDA_GRID)]
    pub lambda_grid: Vec<f64>,
    /// Truncation levels for the test curve, e.g. `1-20` or `1,5,10`.
    #[arg(long, default_value = "1-20")]
    pub ks: String,
    /// NDCG truncation used to pick lambda.
    #[arg(long, default_value_t = 10)]
    pub select_k: usize,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Zeros)]
    pub init: InitArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// NDCG curve CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InitArg {
    Zeros,
    Gaussian,
}

/// What the `elapsed_seconds` column of the training CSV holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    /// Seconds since training started.
    Wall,
    /// The outer round number, for byte-reproducible output.
    Logical,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainLcrArgs {
    /// Training triplets `<context> <item> [count]`.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub dim: usize,
    /// Fixed step size. Without it the step is tuned over `--eta-grid`.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = lcr::DEFAULT_ETA_GRID)]
    pub eta_grid: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Updates per (U,V) step; per worker and per item partition when
    /// `--workers` > 1.
    #[arg(long)]
    pub inner_updates: Option<usize>,
    /// Item partitions per outer round when `--workers` > 1 (default: workers).
    #[arg(long)]
    pub uv_rounds: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-round metrics CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Clock::Wall)]
    pub clock: Clock,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// LETOR file for a linear model, triplets for a latent model.
    #[arg(long)]
    pub test: PathBuf,
    /// Training triplets; fixes the id mapping of a latent model and the
    /// items excluded from its candidate lists.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Comma-separated `name@k` list, e.g. `ndcg@1,ndcg@5`.
    #[arg(long)]
    pub metrics: Option<String>,
    /// Truncation levels used when `--metrics` is absent.
    #[arg(long)]
    pub ks: Option<String>,
    /// Keep training items in latent candidate lists.
    #[arg(long)]
    pub keep_train_items: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = VerifyOptions::default().seed)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Planted linear ranking data as LETOR train/valid/test files.
    Rank {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 50)]
        contexts: usize,
        #[arg(long, default_value_t = 20)]
        items: usize,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Block-structured implicit feedback as train/test triplet files.
    Lcr {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 30)]
        contexts: usize,
        #[arg(long, default_value_t = 50)]
        items: usize,
        #[arg(long, default_value_t = 5)]
        blocks: usize,
        #[arg(long, default_value_t = 0.6)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parses `1-20`, `1,5,10` or a mix such as `1-3,10`.
pub fn parse_ks(list: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("invalid truncation list {list:?}"));
    let mut ks = Vec::new();
    for part in list.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once('-') {
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            ks.extend(a..=b);
        } else {
            ks.push(part.parse().map_err(|_| bad())?);
        }
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config(format!("truncation levels must be >= 1, got {list:?}")));
    }
    Ok(ks)
}

/// Parses `ndcg@1,precision@10`.
pub fn parse_metrics(list: &str) -> Result<Vec<(String, usize)>> {
    list.split(',')
        .map(|m| {
            let (name, k) = m
                .trim()
                .split_once('@')
                .ok_or_else(|| Error::Config(format!("metric {m:?} is not of the form name@k")))?;
            let k: usize = k.parse().map_err(|_| Error::Config(format!("bad truncation in metric {m:?}")))?;
            if k == 0 {
                return Err(Error::Config(format!("truncation in {m:?} must be >= 1")));
            }
            match name {
                "ndcg" | "precision" => Ok((name.to_string(), k)),
                _ => Err(Error::Config(format!("unknown metric {name:?}; expected ndcg or precision"))),
            }
        })
        .collect()
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse { line, message: format!("{}: {message}", path.display()) },
        Error::InvalidData(m) => Error::InvalidData(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn read_letor(path: &Path) -> Result<RankingDataset> {
    with_path(path, data::parse_letor(open(path)?))
}

fn header(command: &str, config: &impl Serialize) -> String {
    let config = serde_json::to_string(config).expect("configs serialize");
    format!("# robirank {command}\n# config: {config}\n")
}

fn train_rank(args: &TrainRankArgs) -> Result<()> {
    let ks = parse_ks(&args.ks)?;
    let mut train = read_letor(&args.train)?;
    let mut valid = read_letor(&args.valid)?;
    let mut test = read_letor(&args.test)?;
    // each file infers its own width; sparse files may stop short
    let dim = train.feature_dim.max(valid.feature_dim).max(test.feature_dim);
    for d in [&mut train, &mut valid, &mut test] {
        d.pad_features(dim);
    }
    with_path(&args.train, train.validate())?;
    with_path(&args.valid, valid.validate())?;
    with_path(&args.test, test.validate())?;

    let config = TrainConfig {
        lambda_grid: args.lambda_grid.clone(),
        select_k: args.select_k,
        max_iters: args.max_iters,
        init: match args.init {
            InitArg::Zeros => Init::Zeros,
            InitArg::Gaussian => Init::Gaussian,
        },
        seed: args.seed,
        ..TrainConfig::default()
    };
    let trained = ltr::train(&train, &valid, &config)?;
    for c in &trained.candidates {
        eprintln!(
            "lambda={:e} objective={:.6} iterations={} converged={} valid_ndcg@{}={:.6}",
            c.lambda, c.objective, c.iterations, c.converged, args.select_k, c.validation_ndcg
        );
    }
    eprintln!("selected lambda={:e}", trained.lambda);

    let curve = eval::mean_ndcg_curve(&trained.model, &test, &ks)?;
    let mut csv = header("train-rank", args);
    let _ = writeln!(csv, "# selected: {}", json!({ "lambda": trained.lambda, "candidates": trained.candidates }));
    csv.push_str("k,ndcg\n");
    for r in &curve {
        let _ = writeln!(csv, "{},{}", r.k, r.mean);
    }
    write_atomic(&args.out, csv.as_bytes())?;
    if let Some(path) = &args.checkpoint {
        Checkpoint::Linear(trained.model).save(path)?;
    }
    Ok(())
}

struct LcrData {
    train: InteractionSet,
    test: InteractionSet,
    unknown: usize,
}

fn read_lcr(train_path: &Path, test_path: &Path) -> Result<LcrData> {
    let train = with_path(train_path, data::parse_triplets(open(train_path)?))?;
    let (test, unknown) = with_path(
        test_path,
        data::parse_triplets_with(open(test_path)?, &train.users, &train.items),
    )?;
    Ok(LcrData { train: train.interactions, test, unknown })
}

fn train_lcr(args: &TrainLcrArgs) -> Result<()> {
    let LcrData { train, test, unknown } = read_lcr(&args.train, &args.test)?;
    if unknown > 0 {
        eprintln!("skipped {unknown} test records with ids absent from training");
    }
    if test.is_empty() {
        return Err(Error::InvalidData(format!("{}: no test pairs over known ids", args.test.display())));
    }
    if args.workers == 0 {
        return Err(Error::Config("--workers must be >= 1".into()));
    }

    let run = |eta: f64, observer: &mut dyn FnMut(&RoundReport, &LatentModel)| -> Result<LatentTrainOutcome> {
        if args.workers == 1 {
            let cfg = SgdConfig {
                dim: args.dim,
                eta,
                inner_updates: args.inner_updates,
                outer_rounds: args.rounds,
                mu: args.mu,
                seed: args.seed,
                include_scale_constants: false,
            };
            lcr::serial_train_observed(&train, &cfg, observer)
        } else {
            let cfg = ParallelConfig {
                workers: args.workers,
                dim: args.dim,
                eta,
                inner_updates_per_worker: args.inner_updates,
                uv_rounds: args.uv_rounds,
                outer_rounds: args.rounds,
                mu: args.mu,
                seed: args.seed,
            };
            parallel::parallel_train_observed(&train, &cfg, observer).map(|o| {
                eprintln!(
                    "updates={} conflicts={} stale_blocks={}",
                    o.stats.total_updates(),
                    o.stats.ownership_conflicts,
                    o.stats.stale_blocks
                );
                o.outcome
            })
        }
    };

    let eta = match args.eta {
        Some(eta) => eta,
        None => {
            if args.eta_grid.is_empty() {
                return Err(Error::Config("--eta-grid is empty".into()));
            }
            let mut best: Option<(f64, f64)> = None;
            for &eta in &args.eta_grid {
                match run(eta, &mut |_, _| {}) {
                    Ok(out) => {
                        let obj = out.final_objective();
                        eprintln!("eta={eta} final objective={obj:.6}");
                        if obj.is_finite() && best.is_none_or(|(_, b)| obj < b) {
                            best = Some((eta, obj));
                        }
                    }
                    Err(Error::Divergence(m)) => eprintln!("eta={eta} diverged: {m}"),
                    Err(e) => return Err(e),
                }
            }
            best.ok_or_else(|| Error::Divergence("every step size on the grid diverged".into()))?.0
        }
    };
    eprintln!("using eta={eta}");

    let mut rows = String::new();
    let mut failure = None;
    let start = Instant::now();
    let outcome = run(eta, &mut |report, model| {
        let metrics = eval::precision_at_k(model, &train, &test, 1)
            .and_then(|p1| Ok((p1, eval::precision_at_k(model, &train, &test, 10)?)));
        match metrics {
            Ok((p1, p10)) => {
                let t = match args.clock {
                    Clock::Wall => format!("{:.6}", start.elapsed().as_secs_f64()),
                    Clock::Logical => report.round.to_string(),
                };
                let _ = writeln!(rows, "{t},{},{}", p1.mean, p10.mean);
            }
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    eprintln!(
        "objective {:.6} -> {:.6}",
        outcome.initial_objective,
        outcome.final_objective()
    );

    let mut csv = header("train-lcr", args);
    let _ = writeln!(
        csv,
        "# selected: {}",
        json!({
            "eta": eta,
            "contexts": train.num_contexts(),
            "items": train.num_items(),
            "train_pairs": train.len(),
            "test_pairs": test.len(),
            "initial_objective": outcome.initial_objective,
            "final_objective": outcome.final_objective(),
        })
    );
    csv.push_str("elapsed_seconds,precision_at_1,precision_at_10\n");
    csv.push_str(&rows);
    write_atomic(&args.out, csv.as_bytes())?;
    if let Some(path) = &args.checkpoint {
        Checkpoint::Latent(outcome.model).save(path)?;
    }
    Ok(())
}

/// Reports for `eval`, as CSV text.
pub fn eval_report(args: &EvalArgs) -> Result<String> {
    let ckpt = Checkpoint::load(&args.checkpoint)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", args.checkpoint.display())))?;
    let requested = match (&args.metrics, &args.ks) {
        (Some(m), _) => parse_metrics(m)?,
        (None, ks) => {
            let (name, default) = match ckpt {
                Checkpoint::Linear(_) => ("ndcg", "1-20"),
                Checkpoint::Latent(_) => ("precision", "1,10"),
            };
            parse_ks(ks.as_deref().unwrap_or(default))?.into_iter().map(|k| (name.to_string(), k)).collect()
        }
    };
    let mut reports: Vec<MetricReport> = Vec::with_capacity(requested.len());
    match ckpt {
        Checkpoint::Linear(model) => {
            let mut test = read_letor(&args.test)?;
            if test.feature_dim > model.dim() {
                return Err(Error::Shape(format!(
                    "checkpoint has {} features but {} uses feature index {}",
                    model.dim(),
                    args.test.display(),
                    test.feature_dim
                )));
            }
            test.pad_features(model.dim());
            with_path(&args.test, test.validate())?;
            for (name, k) in &requested {
                if name != "ndcg" {
                    return Err(Error::Config(format!("metric {name} needs a latent model")));
                }
                reports.extend(eval::mean_ndcg_curve(&model, &test, &[*k])?);
            }
        }
        Checkpoint::Latent(model) => {
            let train_path = args
                .train
                .as_ref()
                .ok_or_else(|| Error::Config("a latent model needs --train to map ids".into()))?;
            let LcrData { train, test, .. } = read_lcr(train_path, &args.test)?;
            if model.num_contexts != train.num_contexts() || model.num_items != train.num_items() {
                return Err(Error::Shape(format!(
                    "checkpoint has {} contexts and {} items, {} has {} contexts and {} items",
                    model.num_contexts,
                    model.num_items,
                    train_path.display(),
                    train.num_contexts(),
                    train.num_items()
                )));
            }
            for (name, k) in &requested {
                if name != "precision" {
                    return Err(Error::Config(format!("metric {name} needs a linear model")));
                }
                reports.push(eval::precision_at_k_with(&model, &train, &test, *k, !args.keep_train_items)?);
            }
        }
    }
    let mut out = format!("{CSV_HEADER}\n");
    for r in &reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    Ok(out)
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let report = eval_report(args)?;
    match &args.out {
        Some(path) => write_atomic(path, report.as_bytes()),
        None => {
            print!("{report}");
            Ok(())
        }
    }
}

/// Runs the suite and prints one line per property. Returns whether all
/// passed.
pub fn verify_with(derivs: &Derivatives, args: &VerifyArgs) -> Result<bool> {
    let opts = VerifyOptions { seed: args.seed, ..VerifyOptions::default() };
    let results = verify::run_all(derivs, &opts)?;
    for r in &results {
        println!("{r}");
    }
    let summary = verify::ssgd_summary(&opts)?;
    println!("ssgd fitted constant: {:.6}", summary.constants.iter().sum::<f64>() / summary.constants.len() as f64);
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} of {} properties passed", results.len() - failed, results.len());
    Ok(failed == 0)
}

fn synth(cmd: &SynthCommand) -> Result<()> {
    match *cmd {
        SynthCommand::Rank { ref out_dir, contexts, items, dim, noise, seed } => {
            let s = data::make_synthetic_rank(&SyntheticRankConfig {
                num_contexts: contexts,
                items_per_context: items,
                dim,
                noise,
                seed,
            })?;
            std::fs::create_dir_all(out_dir)?;
            for (name, d) in [("train.txt", &s.train), ("valid.txt", &s.validation), ("test.txt", &s.test)] {
                let mut buf = Vec::new();
                data::write_letor(d, &mut buf)?;
                write_atomic(&out_dir.join(name), &buf)?;
            }
        }
        SynthCommand::Lcr { ref out_dir, contexts, items, blocks, density, seed } => {
            let s = data::make_synthetic_lcr(&SyntheticLcrConfig {
                num_contexts: contexts,
                num_items: items,
                blocks,
                density,
                seed,
            })?;
            std::fs::create_dir_all(out_dir)?;
            for (name, d) in [("train.tsv", &s.train), ("test.tsv", &s.test)] {
                let mut buf = Vec::new();
                data::write_triplets(d, &mut buf)?;
                write_atomic(&out_dir.join(name), &buf)?;
            }
        }
    }
    Ok(())
}

/// Executes a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::TrainRank(a) => train_rank(a),
        Command::TrainLcr(a) => train_lcr(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Verify(a) => match verify_with(&Derivatives::default(), a) {
            Ok(true) => Ok(()),
            Ok(false) => return 1,
            Err(e) => Err(e),
        },
        Command::Synth(c) => synth(c),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
