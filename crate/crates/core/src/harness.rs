//! Experiment orchestration: comparisons over methods, seeds and folds,
//! the λ and train-ratio sweeps, and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{
    load_cache, read_prepared, split_and_fold, split_and_fold_by_subject, synth_generate, window_recordings,
    SplitSpec, SynthSpec, WindowedDataset, DEFAULT_SEQ_LEN, DEFAULT_STEP, NUM_FOLDS,
};
use crate::error::{Error, Result};
use crate::metrics::paired_t_test;
use crate::model::Task;
use crate::nn::seeded_rng;
use crate::trainers::{train, EpochRecord, EvalResult, Method, RunResult, TrainConfig, TrainData};

/// Environment variable that relative dataset paths are resolved against.
pub const DATA_ROOT_ENV: &str = "MTL_DATA_ROOT";

/// Default λ values for [`sweep_lambda`].
pub const LAMBDA_GRID: [f64; 4] = [0.001, 0.1, 0.5, 1.0];

/// Default ratios for [`sweep_train_ratio`].
pub const RATIO_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Share of the training pool held out for validation when not
/// cross-validating.
pub const VAL_SHARE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synth,
    /// A window cache written by `prepare`.
    Cache,
    /// A directory of canonical CSV files plus `meta.json`.
    Prepared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    pub seq_len: usize,
    pub step: usize,
    /// Keep every window of a subject on one side of the split.
    pub by_subject: bool,
    /// Per-axis standardisation with training-split statistics.
    pub standardize: bool,
    pub synth: SynthSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            source: DataSource::Synth,
            path: None,
            seq_len: DEFAULT_SEQ_LEN,
            step: DEFAULT_STEP,
            by_subject: false,
            standardize: false,
            synth: SynthSpec::default(),
        }
    }
}

impl DatasetSpec {
    fn resolved_path(&self) -> Result<PathBuf> {
        let p = self
            .path
            .clone()
            .ok_or_else(|| Error::Config(format!("dataset source {:?} needs a path", self.source)))?;
        Ok(match std::env::var_os(DATA_ROOT_ENV) {
            Some(root) if p.is_relative() => Path::new(&root).join(p),
            _ => p,
        })
    }

    pub fn load(&self) -> Result<WindowedDataset> {
        match self.source {
            DataSource::Synth => synth_generate(&self.synth),
            DataSource::Cache => load_cache(self.resolved_path()?),
            DataSource::Prepared => {
                let (schema, recs) = read_prepared(self.resolved_path()?)?;
                window_recordings(&recs, self.seq_len, self.step, &schema)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub cv: bool,
    /// Folds to run when `cv` is set.
    pub folds: Vec<usize>,
    /// Fraction of the training pool used for training when `cv` is off.
    pub train_ratio: f64,
    pub split_seed: u64,
    pub output_dir: PathBuf,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            methods: Method::ALL.to_vec(),
            seeds: (0..5).collect(),
            cv: true,
            folds: (0..NUM_FOLDS).collect(),
            train_ratio: 1.0 - VAL_SHARE,
            split_seed: 0,
            output_dir: PathBuf::from("runs"),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".to_string()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".to_string()));
        }
        if self.cv {
            if self.folds.is_empty() || self.folds.iter().any(|&k| k >= NUM_FOLDS) {
                return Err(Error::Config(format!("folds must be a non-empty subset of 0..{NUM_FOLDS}")));
            }
        } else if !(self.train_ratio > 0.0 && self.train_ratio <= 1.0 - VAL_SHARE + 1e-12) {
            return Err(Error::Config(format!(
                "train_ratio {} must lie in (0, {}]; {} of the pool is kept for validation",
                self.train_ratio,
                1.0 - VAL_SHARE,
                VAL_SHARE
            )));
        }
        self.train.validate()
    }
}

/// One attempted run, successful or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    pub fold: Option<usize>,
    pub train_ratio: Option<f64>,
    pub lambda: Option<f64>,
    pub result: Option<RunResult>,
    pub error: Option<String>,
}

impl RunRecord {
    /// File-name stem, unique within an archive.
    pub fn id(&self) -> String {
        let mut s = format!("{}-seed{}", self.method, self.seed);
        if let Some(k) = self.fold {
            let _ = write!(s, "-fold{k}");
        }
        if let Some(r) = self.train_ratio {
            let _ = write!(s, "-ratio{r}");
        }
        if let Some(l) = self.lambda {
            let _ = write!(s, "-lambda{l}");
        }
        s
    }

    fn group(&self) -> GroupKey {
        GroupKey {
            method: self.method,
            lambda: self.lambda.map(f64::to_bits),
            ratio: self.train_ratio.map(f64::to_bits),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    pub records: Vec<RunRecord>,
}

impl Archive {
    pub fn failures(&self) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(|r| r.result.is_none())
    }

    pub fn all_succeeded(&self) -> bool {
        self.failures().next().is_none()
    }

    /// Reads every `runs/*.json` below `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let runs = dir.as_ref().join("runs");
        let mut paths: Vec<PathBuf> = fs::read_dir(&runs)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        let records = paths
            .iter()
            .map(|p| Ok(serde_json::from_slice(&fs::read(p)?)?))
            .collect::<Result<Vec<RunRecord>>>()?;
        Ok(Archive { records })
    }
}

fn split(cfg: &ExperimentConfig, ds: &WindowedDataset) -> Result<SplitSpec> {
    if cfg.dataset.by_subject {
        split_and_fold_by_subject(ds, cfg.split_seed)
    } else {
        split_and_fold(ds, cfg.split_seed)
    }
}

fn make_data(
    ds: &WindowedDataset,
    train: &[usize],
    val: &[usize],
    test: &[usize],
    standardize: bool,
) -> Result<TrainData> {
    let mut tr = ds.subset(train)?;
    let mut va = ds.subset(val)?;
    let mut te = ds.subset(test)?;
    if standardize {
        let stats = tr.channel_stats();
        for d in [&mut tr, &mut va, &mut te] {
            d.standardize(&stats);
        }
    }
    Ok(TrainData::new(tr, va).with_test(te))
}

/// Training and validation rows for a train-ratio run: the pool is shuffled
/// once, its first tenth validates, and the next `ratio` share trains.
pub fn ratio_split(pool: &[usize], ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio <= 1.0 - VAL_SHARE + 1e-12) {
        return Err(Error::Config(format!("train ratio {ratio} must lie in (0, {}]", 1.0 - VAL_SHARE)));
    }
    let mut order = pool.to_vec();
    order.shuffle(&mut seeded_rng(seed));
    let n_val = ((pool.len() as f64 * VAL_SHARE) as usize).max(1);
    let n_train = ((pool.len() as f64 * ratio + 1e-9) as usize).min(pool.len() - n_val.min(pool.len()));
    let mut val = order[..n_val.min(order.len())].to_vec();
    let mut train = order[n_val.min(order.len())..n_val.min(order.len()) + n_train].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Runs every method × seed × fold (or the single ratio split) of `cfg`.
/// A failed run is recorded with its cause and the sweep carries on.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<Archive> {
    run_tagged(cfg, None)
}

/// Train/val/test data for every fold of `cfg`, or for the single ratio
/// split when `cv` is off.
pub fn training_units(cfg: &ExperimentConfig) -> Result<Vec<TrainData>> {
    cfg.validate()?;
    let ds = cfg.dataset.load()?;
    let spec = split(cfg, &ds)?;
    if cfg.cv {
        return cfg
            .folds
            .iter()
            .map(|&k| {
                let (tr, va) = spec.fold(k);
                let mut d = make_data(&ds, &tr, &va, &spec.test, cfg.dataset.standardize)?;
                d.fold = Some(k);
                Ok(d)
            })
            .collect();
    }
    let (tr, va) = ratio_split(&spec.train, cfg.train_ratio, cfg.split_seed)?;
    if tr.len() < cfg.train.batch_size {
        return Err(Error::Data(format!(
            "train ratio {} leaves {} windows, less than one batch of {}",
            cfg.train_ratio,
            tr.len(),
            cfg.train.batch_size
        )));
    }
    Ok(vec![make_data(&ds, &tr, &va, &spec.test, cfg.dataset.standardize)?])
}

fn run_tagged(cfg: &ExperimentConfig, lambda: Option<f64>) -> Result<Archive> {
    let units = training_units(cfg)?;
    let mut records = Vec::new();
    for &method in &cfg.methods {
        for &seed in &cfg.seeds {
            for data in &units {
                let fold = &data.fold;
                let tc = TrainConfig {
                    method,
                    seed,
                    ..cfg.train.clone()
                };
                log::info!("training {method} seed {seed} fold {fold:?}");
                let (result, error) = match train(data, &tc) {
                    Ok(out) => (Some(out.result), None),
                    Err(e) => {
                        log::warn!("{method} seed {seed} fold {fold:?} failed: {e}");
                        (None, Some(e.to_string()))
                    }
                };
                records.push(RunRecord {
                    method,
                    seed,
                    fold: *fold,
                    train_ratio: (!cfg.cv).then_some(cfg.train_ratio),
                    lambda,
                    result,
                    error,
                });
            }
        }
    }
    Ok(Archive { records })
}

/// One smooth-distill comparison per λ.
pub fn sweep_lambda(cfg: &ExperimentConfig, values: &[f64]) -> Result<Archive> {
    if !cfg.methods.contains(&Method::SmoothDistill) {
        return Err(Error::Config("the λ sweep needs smooth_distill among the methods".to_string()));
    }
    let mut out = Archive::default();
    for &l in values {
        let mut c = cfg.clone();
        c.methods = vec![Method::SmoothDistill];
        c.train.distill.lambda = l;
        out.records.extend(run_tagged(&c, Some(l))?.records);
    }
    Ok(out)
}

/// One comparison per training ratio on a fixed split.
pub fn sweep_train_ratio(cfg: &ExperimentConfig, ratios: &[f64]) -> Result<Archive> {
    if cfg.cv {
        return Err(Error::Config("the train-ratio sweep needs cv = false".to_string()));
    }
    let mut out = Archive::default();
    for &r in ratios {
        let c = ExperimentConfig {
            train_ratio: r,
            ..cfg.clone()
        };
        match run_comparison(&c) {
            Ok(a) => out.records.extend(a.records),
            // Too few windows at this ratio: record the cause, keep sweeping.
            Err(e @ Error::Data(_)) => {
                log::warn!("ratio {r}: {e}");
                for &method in &c.methods {
                    for &seed in &c.seeds {
                        out.records.push(RunRecord {
                            method,
                            seed,
                            fold: None,
                            train_ratio: Some(r),
                            lambda: None,
                            result: None,
                            error: Some(e.to_string()),
                        });
                    }
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct GroupKey {
    method: Method,
    lambda: Option<u64>,
    ratio: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; absent below two runs.
    pub std: Option<f64>,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n >= 2).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Some(Stat { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub lambda: Option<f64>,
    pub train_ratio: Option<f64>,
    pub runs: usize,
    pub failed: usize,
    /// Indexed `[split][task][0 = accuracy, 1 = F1]`.
    pub cells: [[[Option<Stat>; 2]; 2]; 2],
}

impl ComparisonRow {
    pub fn get(&self, split: Split, task: Task, f1: bool) -> Option<Stat> {
        self.cells[split as usize][task.index()][usize::from(f1)]
    }
}

/// Mean ± std per method, task and split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

fn split_eval(r: &RunResult, split: Split) -> Option<&EvalResult> {
    match split {
        Split::Val => Some(&r.val),
        Split::Test => r.test.as_ref(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

impl ComparisonTable {
    pub fn from_archive(archive: &Archive) -> Self {
        let mut groups: BTreeMap<GroupKey, Vec<&RunRecord>> = BTreeMap::new();
        for r in &archive.records {
            groups.entry(r.group()).or_default().push(r);
        }
        let rows = groups
            .into_values()
            .map(|recs| {
                let ok: Vec<&RunResult> = recs.iter().filter_map(|r| r.result.as_ref()).collect();
                let mut cells = [[[None; 2]; 2]; 2];
                for (si, split) in [Split::Val, Split::Test].into_iter().enumerate() {
                    for task in Task::BOTH {
                        let pick = |f: fn(&EvalResult, Task) -> Option<f64>| -> Vec<f64> {
                            ok.iter().filter_map(|r| split_eval(r, split).and_then(|e| f(e, task))).collect()
                        };
                        cells[si][task.index()] = [Stat::of(&pick(EvalResult::accuracy)), Stat::of(&pick(EvalResult::macro_f1))];
                    }
                }
                ComparisonRow {
                    method: recs[0].method,
                    lambda: recs[0].lambda,
                    train_ratio: recs[0].train_ratio,
                    runs: recs.len(),
                    failed: recs.len() - ok.len(),
                    cells,
                }
            })
            .collect();
        ComparisonTable { rows }
    }

    /// Wide CSV, one row per method; `-` marks a missing cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,lambda,train_ratio,runs,failed");
        for split in [Split::Val, Split::Test] {
            for task in Task::BOTH {
                for m in ["acc", "f1"] {
                    let _ = write!(s, ",{0}_task{1}_{m}_mean,{0}_task{1}_{m}_std", split.name(), task.index() + 1);
                }
            }
        }
        s.push('\n');
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
            let _ = write!(s, "{},{},{},{},{}", r.method, opt(r.lambda), opt(r.train_ratio), r.runs, r.failed);
            for split in [Split::Val, Split::Test] {
                for task in Task::BOTH {
                    for f1 in [false, true] {
                        let st = r.get(split, task, f1);
                        let _ = write!(s, ",{},{}", fmt_opt(st.map(|x| x.mean)), fmt_opt(st.and_then(|x| x.std)));
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}

/// λ or ratio against mean test accuracy, one row per comparison group.
pub fn sweep_csv(table: &ComparisonTable, key: &str) -> String {
    let mut s = format!("{key},method,runs,failed,test_task1_acc,test_task2_acc,test_mean_acc\n");
    for r in &table.rows {
        let k = if key == "lambda" { r.lambda } else { r.train_ratio };
        let a1 = r.get(Split::Test, Task::Task1, false).map(|x| x.mean);
        let a2 = r.get(Split::Test, Task::Task2, false).map(|x| x.mean);
        let mean = match (a1, a2) {
            (Some(x), Some(y)) => Some((x + y) / 2.0),
            (x, y) => x.or(y),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            k.map_or_else(|| "-".to_string(), |v| v.to_string()),
            r.method,
            r.runs,
            r.failed,
            fmt_opt(a1),
            fmt_opt(a2),
            fmt_opt(mean)
        );
    }
    s
}

/// Pairwise paired t-test p-values over per-fold means (per-seed means when
/// there are no folds), for one task and metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceTable {
    pub task: Task,
    pub metric: &'static str,
    pub labels: Vec<String>,
    pub p: Vec<Vec<Option<f64>>>,
}

fn label(k: &GroupKey) -> String {
    let mut s = k.method.to_string();
    if let Some(l) = k.lambda {
        let _ = write!(s, "@lambda={}", f64::from_bits(l));
    }
    if let Some(r) = k.ratio {
        let _ = write!(s, "@ratio={}", f64::from_bits(r));
    }
    s
}

pub fn significance(archive: &Archive, task: Task, f1: bool) -> SignificanceTable {
    // Cross-validation compares validation folds; a single split compares
    // held-out test results.
    let mut series: BTreeMap<GroupKey, BTreeMap<(bool, u64), Vec<f64>>> = BTreeMap::new();
    for r in &archive.records {
        let Some(res) = &r.result else { continue };
        let (split, unit) = match r.fold {
            Some(k) => (Split::Val, (true, k as u64)),
            None => (Split::Test, (false, r.seed)),
        };
        let v = split_eval(res, split).and_then(|e| if f1 { e.macro_f1(task) } else { e.accuracy(task) });
        if let Some(v) = v {
            series.entry(r.group()).or_default().entry(unit).or_default().push(v);
        }
    }
    let keys: Vec<&GroupKey> = series.keys().collect();
    let means: Vec<BTreeMap<(bool, u64), f64>> = keys
        .iter()
        .map(|k| series[k].iter().map(|(u, v)| (*u, v.iter().sum::<f64>() / v.len() as f64)).collect())
        .collect();
    let n = keys.len();
    let mut p = vec![vec![None; n]; n];
    for i in 0..n {
        p[i][i] = Some(1.0);
        for j in 0..i {
            let (a, b): (Vec<f64>, Vec<f64>) =
                means[i].iter().filter_map(|(u, x)| means[j].get(u).map(|y| (*x, *y))).unzip();
            let v = paired_t_test(&a, &b).ok().map(|t| t.p);
            p[i][j] = v;
            p[j][i] = v;
        }
    }
    SignificanceTable {
        task,
        metric: if f1 { "f1" } else { "accuracy" },
        labels: keys.iter().map(|k| label(k)).collect(),
        p,
    }
}

impl SignificanceTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("task,metric,method,{}\n", self.labels.join(","));
        for (l, row) in self.labels.iter().zip(&self.p) {
            let cells: Vec<String> = row.iter().map(|v| fmt_opt(*v)).collect();
            let _ = writeln!(s, "task{},{},{},{}", self.task.index() + 1, self.metric, l, cells.join(","));
        }
        s
    }
}

fn curve_csv(r: &RunResult) -> String {
    let mut s = String::from("stage,epoch,train_loss,train_acc1,train_acc2,val_loss,val_acc1,val_acc2,seconds\n");
    let stages: [(usize, &[EpochRecord]); 2] =
        [(1, r.stage1_epochs.as_deref().unwrap_or(&[])), (if r.stage1_epochs.is_some() { 2 } else { 1 }, &r.epochs)];
    for (stage, epochs) in stages {
        for e in epochs {
            let _ = writeln!(
                s,
                "{stage},{},{},{},{},{},{},{},{}",
                e.epoch,
                e.train_loss,
                fmt_opt(e.train_acc1),
                fmt_opt(e.train_acc2),
                e.val_loss,
                fmt_opt(e.val_acc1),
                fmt_opt(e.val_acc2),
                e.seconds
            );
        }
    }
    s
}

fn write(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text)?;
    written.push(path);
    Ok(())
}

/// Writes the comparison table, per-run JSON, training curves, confusion
/// matrices, significance tables and timings under `dir`.
pub fn emit_reports(archive: &Archive, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if archive.records.is_empty() {
        return Err(Error::Data("no runs to report".to_string()));
    }
    let dir = dir.as_ref();
    for sub in ["runs", "curves", "confusion"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let mut written = Vec::new();
    let table = ComparisonTable::from_archive(archive);
    write(dir.join("comparison.csv"), &table.to_csv(), &mut written)?;
    let mut timing = String::from("run,method,seed,fold,status,wall_clock_secs,epochs\n");
    // Id order, so a reloaded archive reproduces the same files.
    let mut ordered: Vec<&RunRecord> = archive.records.iter().collect();
    ordered.sort_by_cached_key(|r| r.id());
    for r in ordered {
        let id = r.id();
        write(dir.join("runs").join(format!("{id}.json")), &serde_json::to_string_pretty(r)?, &mut written)?;
        let Some(res) = &r.result else {
            let _ = writeln!(timing, "{id},{},{},{},failed,-,-", r.method, r.seed, fmt_fold(r.fold));
            continue;
        };
        let _ = writeln!(
            timing,
            "{id},{},{},{},ok,{:.3},{}",
            r.method,
            r.seed,
            fmt_fold(r.fold),
            res.wall_clock_secs,
            res.epochs.len() + res.stage1_epochs.as_ref().map_or(0, Vec::len)
        );
        write(dir.join("curves").join(format!("{id}.csv")), &curve_csv(res), &mut written)?;
        for (split, eval) in [(Split::Val, Some(&res.val)), (Split::Test, res.test.as_ref())] {
            let Some(eval) = eval else { continue };
            for task in Task::BOTH {
                if let Some(t) = eval.get(task) {
                    let name = format!("{id}-{}-task{}.csv", split.name(), task.index() + 1);
                    write(dir.join("confusion").join(name), &t.confusion.to_csv(), &mut written)?;
                }
            }
        }
    }
    write(dir.join("timing.csv"), &timing, &mut written)?;
    let mut sig = String::new();
    for task in Task::BOTH {
        for f1 in [false, true] {
            sig.push_str(&significance(archive, task, f1).to_csv());
            sig.push('\n');
        }
    }
    write(dir.join("significance.csv"), &sig, &mut written)?;
    Ok(written)
}

fn fmt_fold(f: Option<usize>) -> String {
    f.map_or_else(|| "-".to_string(), |k| k.to_string())
}

/// `<base>/<command>-<unix seconds>`, with a numeric suffix if taken.
pub fn stamped_dir(base: impl AsRef<Path>, command: &str) -> Result<PathBuf> {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let base = base.as_ref();
    let mut dir = base.join(format!("{command}-{secs}"));
    let mut k = 1;
    while dir.exists() {
        dir = base.join(format!("{command}-{secs}-{k}"));
        k += 1;
    }
    fs::create_dir_all(&dir)?;
    Ok(dir)
}
