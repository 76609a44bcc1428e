use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

use mtlkit::data::{adapt_public_dataset, read_prepared, save_cache, window_recordings, AdapterOptions, DatasetKind};
use mtlkit::harness::{
    emit_reports, run_comparison, stamped_dir, sweep_csv, sweep_lambda, sweep_train_ratio, training_units, Archive,
    ComparisonTable, ExperimentConfig, RunRecord, DATA_ROOT_ENV, LAMBDA_GRID, RATIO_GRID,
};
use mtlkit::model::{Checkpoint, CheckpointRole};
use mtlkit::trainers::{train_with_progress, Method};
use mtlkit::Result;

#[derive(Parser)]
#[command(name = "mtlkit", version, about = "Multitask self-distillation experiments on accelerometer windows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a public dataset to canonical CSV and a window cache.
    Prepare(PrepareArgs),
    /// Train one method on one seed and fold.
    Train(TrainArgs),
    /// Every configured method × seed × fold, aggregated.
    Compare(Common),
    /// Smooth-distill over several λ values.
    SweepLambda(SweepArgs),
    /// Every method over several training-set ratios (cv off).
    SweepRatio(SweepArgs),
    /// Rebuild report files from a directory of run JSON.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Mhealth,
    Wisdm,
    Sleep,
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(value_enum)]
    kind: Kind,
    /// Raw dataset directory; relative paths resolve against $MTL_DATA_ROOT.
    root: PathBuf,
    /// Output directory for canonical CSV, meta.json and windows.bin.
    out: PathBuf,
    /// WISDM: keep only the phone stream.
    #[arg(long)]
    phone_only: bool,
    #[arg(long, default_value_t = mtlkit::data::DEFAULT_SEQ_LEN)]
    seq_len: usize,
    #[arg(long, default_value_t = mtlkit::data::DEFAULT_STEP)]
    step: usize,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; defaults apply when absent.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Restrict to these methods (comma separated).
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<Method>>,
    /// Base output directory; a stamped subdirectory is created inside.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Fold to train on when cross-validating.
    #[arg(long, default_value_t = 0)]
    fold: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Values to sweep; defaults to the standard grid.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding runs/*.json.
    dir: PathBuf,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::ALL
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("unknown method {s:?}"))
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let t = &mut cfg.train;
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(e) = self.epochs {
            t.epochs = e;
        }
        if let Some(v) = self.lambda {
            t.distill.lambda = v;
        }
        if let Some(v) = self.alpha {
            t.distill.alpha = v;
        }
        if let Some(v) = self.beta {
            t.distill.beta = v;
        }
        if let Some(v) = self.tau {
            t.distill.tau = v;
        }
        if let Some(m) = &self.methods {
            cfg.methods = m.clone();
        }
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn resolve(p: &Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if p.is_relative() => Path::new(&root).join(p),
        _ => p.to_path_buf(),
    }
}

fn prepare(a: &PrepareArgs) -> Result<bool> {
    let kind = match a.kind {
        Kind::Mhealth => DatasetKind::Mhealth,
        Kind::Wisdm => DatasetKind::Wisdm,
        Kind::Sleep => DatasetKind::Sleep,
    };
    let opts = AdapterOptions {
        phone_only: a.phone_only,
    };
    let summary = adapt_public_dataset(kind, resolve(&a.root), &a.out, opts)?;
    info!("wrote {} canonical files", summary.files.len());
    let (schema, recs) = read_prepared(&a.out)?;
    let ds = window_recordings(&recs, a.seq_len, a.step, &schema)?;
    let cache = a.out.join("windows.bin");
    save_cache(&ds, &cache)?;
    println!("{} windows from {} recordings -> {}", ds.len(), recs.len(), cache.display());
    Ok(true)
}

fn finish(archive: &Archive, dir: &Path) -> Result<bool> {
    let written = emit_reports(archive, dir)?;
    print!("{}", ComparisonTable::from_archive(archive).to_csv());
    for r in archive.failures() {
        error!("{} failed: {}", r.id(), r.error.as_deref().unwrap_or("unknown error"));
    }
    println!("{} files under {}", written.len(), dir.display());
    Ok(archive.all_succeeded())
}

fn train_one(a: &TrainArgs) -> Result<bool> {
    let mut cfg = a.common.config()?;
    if cfg.cv {
        cfg.folds = vec![a.fold];
    }
    let data = training_units(&cfg)?.remove(0);
    let tc = mtlkit::trainers::TrainConfig {
        method: cfg.methods[0],
        seed: cfg.seeds[0],
        ..cfg.train.clone()
    };
    let dir = stamped_dir(&cfg.output_dir, "train")?;
    fs::write(dir.join("config.toml"), toml::to_string(&cfg).map_err(|e| mtlkit::Error::Config(e.to_string()))?)?;
    let mut err = std::io::stderr();
    let outcome = train_with_progress(&data, &tc, Some(&mut err));
    let record = match outcome {
        Ok(out) => {
            Checkpoint::new(CheckpointRole::Student, out.model.config().clone(), out.best.clone())
                .save(dir.join("best.ckpt"))?;
            if let Some(t) = &out.teacher {
                Checkpoint::new(CheckpointRole::Teacher, out.model.config().clone(), t.clone())
                    .save(dir.join("teacher.ckpt"))?;
            }
            RunRecord {
                method: tc.method,
                seed: tc.seed,
                fold: data.fold,
                train_ratio: (!cfg.cv).then_some(cfg.train_ratio),
                lambda: None,
                result: Some(out.result),
                error: None,
            }
        }
        Err(e) => RunRecord {
            method: tc.method,
            seed: tc.seed,
            fold: data.fold,
            train_ratio: (!cfg.cv).then_some(cfg.train_ratio),
            lambda: None,
            result: None,
            error: Some(e.to_string()),
        },
    };
    finish(&Archive { records: vec![record] }, &dir)
}

fn compare(c: &Common) -> Result<bool> {
    let cfg = c.config()?;
    let dir = stamped_dir(&cfg.output_dir, "compare")?;
    let archive = run_comparison(&cfg)?;
    finish(&archive, &dir)
}

fn sweep(a: &SweepArgs, lambda: bool) -> Result<bool> {
    let mut cfg = a.common.config()?;
    let (name, archive) = if lambda {
        if a.common.methods.is_none() {
            cfg.methods = vec![Method::SmoothDistill];
        }
        let values = a.values.clone().unwrap_or_else(|| LAMBDA_GRID.to_vec());
        ("sweep-lambda", sweep_lambda(&cfg, &values)?)
    } else {
        cfg.cv = false;
        let values = a.values.clone().unwrap_or_else(|| RATIO_GRID.to_vec());
        ("sweep-ratio", sweep_train_ratio(&cfg, &values)?)
    };
    let dir = stamped_dir(&cfg.output_dir, name)?;
    let table = ComparisonTable::from_archive(&archive);
    let key = if lambda { "lambda" } else { "train_ratio" };
    fs::write(dir.join(format!("{key}.csv")), sweep_csv(&table, key))?;
    finish(&archive, &dir)
}

fn report(a: &ReportArgs) -> Result<bool> {
    let archive = Archive::load(&a.dir)?;
    finish(&archive, &a.dir)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train_one(a),
        Command::Compare(c) => compare(c),
        Command::SweepLambda(a) => sweep(a, true),
        Command::SweepRatio(a) => sweep(a, false),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
