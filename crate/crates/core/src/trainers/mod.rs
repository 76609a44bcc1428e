//! Training procedures: single-task, multitask, SD-Dropout, Born-Again and
//! Smooth-Distill, all driven by Adam with best-epoch model selection.

mod adam;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::distill::{
    cross_entropy, cross_entropy_var, kd_loss_var, multitask_ce_loss, multitask_ce_var,
    smooth_total_var, DistillConfig, TeacherState,
};
use crate::error::{Error, Result};
use crate::metrics::{confusion_named, report, ConfusionMatrix, MetricsReport};
use crate::model::{mtlnet_forward, predict_logits, MtlNet, MtlNetConfig, MultitaskModel, Task};
use crate::nn::{seeded_rng, Dropout, Mode, ParamStore, SeededRng, Session};
use crate::tensor::{Tape, Tensor, Var};

pub use adam::{adam_step, AdamConfig, AdamState, StepSite};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Singletask1,
    Singletask2,
    Multitask,
    SdDropout,
    BornAgain,
    SmoothDistill,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Singletask1,
        Method::Singletask2,
        Method::Multitask,
        Method::SdDropout,
        Method::BornAgain,
        Method::SmoothDistill,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Singletask1 => "singletask1",
            Method::Singletask2 => "singletask2",
            Method::Multitask => "multitask",
            Method::SdDropout => "sd_dropout",
            Method::BornAgain => "born_again",
            Method::SmoothDistill => "smooth_distill",
        }
    }

    /// Tasks the trained model predicts.
    pub fn tasks(self) -> Vec<Task> {
        match self {
            Method::Singletask1 => vec![Task::Task1],
            Method::Singletask2 => vec![Task::Task2],
            _ => Task::BOTH.to_vec(),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub method: Method,
    pub distill: DistillConfig,
    /// Dropout used to make the two views in SD-Dropout.
    pub sd_dropout_p: f32,
    pub adam: AdamConfig,
    /// Architecture; class counts are taken from the data.
    pub model: MtlNetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 300,
            seed: 0,
            method: Method::Multitask,
            distill: DistillConfig::default(),
            sd_dropout_p: 0.5,
            adam: AdamConfig::default(),
            model: MtlNetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".to_string()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.sd_dropout_p) {
            return Err(Error::Config(format!("sd_dropout_p {} not in [0, 1)", self.sd_dropout_p)));
        }
        self.distill.validate()
    }
}

/// Training, validation and optional test windows for one run.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: Option<WindowedDataset>,
    pub fold: Option<usize>,
}

impl TrainData {
    pub fn new(train: WindowedDataset, val: WindowedDataset) -> Self {
        TrainData {
            train,
            val,
            test: None,
            fold: None,
        }
    }

    pub fn with_test(mut self, test: WindowedDataset) -> Self {
        self.test = Some(test);
        self
    }
}

/// Metrics of one epoch. Task entries are `None` for tasks the model lacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc1: Option<f64>,
    pub train_acc2: Option<f64>,
    pub val_loss: f64,
    pub val_acc1: Option<f64>,
    pub val_acc2: Option<f64>,
    pub seconds: f64,
}

impl EpochRecord {
    /// Mean validation accuracy over the tasks present.
    pub fn selection_score(&self) -> f64 {
        let v: Vec<f64> = [self.val_acc1, self.val_acc2].into_iter().flatten().collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    pub fn tsv_header() -> &'static str {
        "epoch\ttrain_loss\ttrain_acc1\ttrain_acc2\tval_loss\tval_acc1\tval_acc2\tseconds"
    }

    pub fn tsv_line(&self) -> String {
        let o = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        format!(
            "{}\t{:.6}\t{}\t{}\t{:.6}\t{}\t{}\t{:.3}",
            self.epoch,
            self.train_loss,
            o(self.train_acc1),
            o(self.train_acc2),
            self.val_loss,
            o(self.val_acc1),
            o(self.val_acc2),
            self.seconds
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub report: MetricsReport,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task1: Option<TaskEval>,
    pub task2: Option<TaskEval>,
}

impl EvalResult {
    pub fn get(&self, task: Task) -> Option<&TaskEval> {
        match task {
            Task::Task1 => self.task1.as_ref(),
            Task::Task2 => self.task2.as_ref(),
        }
    }

    pub fn accuracy(&self, task: Task) -> Option<f64> {
        self.get(task).map(|e| e.report.accuracy)
    }

    pub fn macro_f1(&self, task: Task) -> Option<f64> {
        self.get(task).and_then(|e| e.report.macro_f1)
    }

    /// Mean accuracy over the tasks present.
    pub fn mean_accuracy(&self) -> Option<f64> {
        let v: Vec<f64> = Task::BOTH.iter().filter_map(|&t| self.accuracy(t)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub fold: Option<usize>,
    pub epochs: Vec<EpochRecord>,
    /// Teacher-training epochs (Born-Again only).
    #[serde(default)]
    pub stage1_epochs: Option<Vec<EpochRecord>>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_checkpoint: String,
    pub val: EvalResult,
    pub test: Option<EvalResult>,
    pub wall_clock_secs: f64,
}

impl RunResult {
    /// Same run modulo wall-clock fields.
    pub fn same_metrics(&self, other: &RunResult) -> bool {
        let strip = |r: &RunResult| {
            let mut r = r.clone();
            r.wall_clock_secs = 0.0;
            for e in r.epochs.iter_mut().chain(r.stage1_epochs.iter_mut().flatten()) {
                e.seconds = 0.0;
            }
            r
        };
        strip(self) == strip(other)
    }
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: RunResult,
    pub model: MtlNet,
    /// Parameters of the selected epoch.
    pub best: ParamStore,
    /// Parameters after the last epoch.
    pub last: ParamStore,
    /// Smoothed teacher (Smooth-Distill) or frozen teacher (Born-Again).
    pub teacher: Option<ParamStore>,
    /// Optimizer of the returned student; teachers never get one.
    pub optimizer: AdamState,
}

/// Generator for one purpose within a run.
pub fn stream_rng(seed: u64, stream: u64) -> SeededRng {
    let mut r = seeded_rng(seed);
    r.set_stream(stream);
    r
}

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Shuffled mini-batches covering `0..n`. A trailing batch of one is merged
/// into the batch before it.
pub fn make_batches(n: usize, batch_size: usize, rng: &mut SeededRng) -> Result<Vec<Vec<usize>>> {
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 training windows, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(2)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().unwrap().len() == 1 {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    Ok(batches)
}

fn model_config(cfg: &TrainConfig, data: &TrainData) -> MtlNetConfig {
    let mut m = cfg.model.clone();
    m.axes = 3;
    m.seq_len = data.train.seq_len();
    m.num_classes_task1 = data.train.num_classes1().max(2);
    m.num_classes_task2 = data.train.num_classes2().max(2);
    match cfg.method {
        Method::Singletask1 => m.single_head(Task::Task1),
        Method::Singletask2 => m.single_head(Task::Task2),
        _ => m,
    }
}

fn labels(ds: &WindowedDataset, task: Task) -> &[usize] {
    match task {
        Task::Task1 => &ds.y1,
        Task::Task2 => &ds.y2,
    }
}

fn class_names(ds: &WindowedDataset, task: Task, n: usize) -> Vec<String> {
    let names = match task {
        Task::Task1 => &ds.classes1,
        Task::Task2 => &ds.classes2,
    };
    (0..n).map(|k| names.get(k).cloned().unwrap_or_else(|| k.to_string())).collect()
}

/// Eval-mode metrics of `store` on `ds` for every head of `model`.
pub fn evaluate(model: &MtlNet, store: &ParamStore, ds: &WindowedDataset) -> Result<EvalResult> {
    let logits = predict_logits(model, store, &ds.windows, 256)?;
    let mut out = EvalResult::default();
    for (&task, z) in model.tasks().iter().zip(&logits) {
        let pred = z.argmax_rows()?;
        let cm = confusion_named(labels(ds, task), &pred, class_names(ds, task, model.num_classes(task)))?;
        let ev = TaskEval {
            report: report(&cm)?,
            confusion: cm,
        };
        match task {
            Task::Task1 => out.task1 = Some(ev),
            Task::Task2 => out.task2 = Some(ev),
        }
    }
    Ok(out)
}

/// Validation loss (task-weighted CE) and accuracies.
fn validate(
    model: &MtlNet,
    store: &ParamStore,
    ds: &WindowedDataset,
    alpha: f64,
) -> Result<(f64, Option<f64>, Option<f64>)> {
    if ds.is_empty() {
        return Err(Error::Data("empty validation set".to_string()));
    }
    let logits = predict_logits(model, store, &ds.windows, 256)?;
    let tasks = model.tasks();
    let mut acc = [None, None];
    for (&t, z) in tasks.iter().zip(&logits) {
        let pred = z.argmax_rows()?;
        let hit = pred.iter().zip(labels(ds, t)).filter(|(a, b)| a == b).count();
        acc[t.index()] = Some(hit as f64 / ds.len() as f64);
    }
    let loss = if tasks.len() == 2 {
        multitask_ce_loss(&logits[0], &ds.y1, &logits[1], &ds.y2, alpha)?
    } else {
        cross_entropy(&logits[0], labels(ds, tasks[0]))?
    };
    Ok((loss as f64, acc[0], acc[1]))
}

/// How the per-batch loss is built.
enum Regime {
    Single(Task),
    Multitask,
    SdDropout,
    /// EMA teacher, updated after every optimizer step.
    Smooth(TeacherState),
    /// Frozen teacher; its eval-mode logits for every training row.
    Frozen { store: ParamStore, logits: Vec<Tensor> },
}

struct Batch {
    x: Tensor,
    y: [Vec<usize>; 2],
    rows: Vec<usize>,
}

struct Loop<'a> {
    cfg: &'a TrainConfig,
    data: &'a TrainData,
    model: MtlNet,
    store: ParamStore,
    adam: AdamState,
    regime: Regime,
    shuffle: SeededRng,
    dropout: SeededRng,
}

struct LoopOutcome {
    epochs: Vec<EpochRecord>,
    best: ParamStore,
    best_epoch: usize,
}

impl<'a> Loop<'a> {
    fn new(cfg: &'a TrainConfig, data: &'a TrainData, model_cfg: MtlNetConfig, regime: Regime) -> Result<Self> {
        let (model, store) = MtlNet::new(model_cfg, cfg.seed)?;
        let regime = match regime {
            Regime::Smooth(_) => Regime::Smooth(TeacherState::from_student(&store)),
            r => r,
        };
        Ok(Loop {
            cfg,
            data,
            adam: AdamState::with_config(&store, cfg.adam),
            model,
            store,
            regime,
            shuffle: stream_rng(cfg.seed, SHUFFLE_STREAM),
            dropout: stream_rng(cfg.seed, DROPOUT_STREAM),
        })
    }

    fn batch(&self, rows: Vec<usize>) -> Result<Batch> {
        let ds = &self.data.train;
        Ok(Batch {
            x: ds.windows.select_rows(&rows)?,
            y: [
                rows.iter().map(|&i| ds.y1[i]).collect(),
                rows.iter().map(|&i| ds.y2[i]).collect(),
            ],
            rows,
        })
    }

    /// One optimizer step. Returns the loss and the predicted classes of
    /// each head from the training forward pass.
    fn step(&mut self, b: &Batch, site: StepSite) -> Result<(f32, Vec<Vec<usize>>)> {
        let d = self.cfg.distill;
        let teacher_logits: Option<Vec<Tensor>> = match &mut self.regime {
            Regime::Smooth(t) => {
                let z = mtlnet_forward(&self.model, &mut t.params, &b.x, Mode::Eval, None)?;
                Some(vec![z.z1, z.z2])
            }
            Regime::Frozen { logits, .. } => Some(
                logits
                    .iter()
                    .map(|z| z.select_rows(&b.rows))
                    .collect::<Result<_>>()?,
            ),
            _ => None,
        };
        let mut tape = Tape::new();
        let x = tape.constant(b.x.clone());
        let mut s = Session::new(&mut tape, &mut self.store, Mode::Train, Some(&mut self.dropout));
        let (loss, shown): (Var, Vec<Var>) = match &self.regime {
            Regime::Single(task) => {
                let z = self.model.forward(&mut s, x)?;
                let l = cross_entropy_var(s.tape, z[0], &b.y[task.index()])?;
                (l, z)
            }
            Regime::Multitask => {
                let z = self.model.forward(&mut s, x)?;
                let ce1 = cross_entropy_var(s.tape, z[0], &b.y[0])?;
                let ce2 = cross_entropy_var(s.tape, z[1], &b.y[1])?;
                (multitask_ce_var(s.tape, ce1, ce2, d.alpha)?, z)
            }
            Regime::Smooth(_) | Regime::Frozen { .. } => {
                let zt = teacher_logits.as_ref().unwrap();
                let z = self.model.forward(&mut s, x)?;
                let ce1 = cross_entropy_var(s.tape, z[0], &b.y[0])?;
                let kd1 = kd_loss_var(s.tape, &zt[0], z[0], d.tau)?;
                let ce2 = cross_entropy_var(s.tape, z[1], &b.y[1])?;
                let kd2 = kd_loss_var(s.tape, &zt[1], z[1], d.tau)?;
                (smooth_total_var(s.tape, (ce1, kd1), (ce2, kd2), d.alpha, d.lambda)?, z)
            }
            Regime::SdDropout => {
                let f = self.model.forward_features(&mut s, x)?;
                let drop = Dropout::new(self.cfg.sd_dropout_p)?;
                let fa = drop.forward(&mut s, f)?;
                let fb = drop.forward(&mut s, f)?;
                let za = self.model.apply_heads(&mut s, fa)?;
                let zb = self.model.apply_heads(&mut s, fb)?;
                let tape = &mut *s.tape;
                let mut terms = Vec::with_capacity(2);
                for k in 0..2 {
                    let ca = cross_entropy_var(tape, za[k], &b.y[k])?;
                    let cb = cross_entropy_var(tape, zb[k], &b.y[k])?;
                    let ce = tape.add(ca, cb)?;
                    let ce = tape.scale(ce, 0.5);
                    let a_const = tape.value(za[k]).clone();
                    let b_const = tape.value(zb[k]).clone();
                    let ab = kd_loss_var(tape, &a_const, zb[k], d.tau)?;
                    let ba = kd_loss_var(tape, &b_const, za[k], d.tau)?;
                    let kd = tape.add(ab, ba)?;
                    terms.push((ce, tape.scale(kd, 0.5)));
                }
                (smooth_total_var(tape, terms[0], terms[1], d.alpha, d.lambda)?, za)
            }
        };
        let bound = s.bound();
        let loss_value = tape.value(loss).item()?;
        let preds = shown
            .iter()
            .map(|&z| tape.value(z).argmax_rows())
            .collect::<Result<Vec<_>>>()?;
        let mut grads = tape.backward(loss)?;
        let mut g = Vec::with_capacity(bound.len());
        for (id, v) in bound {
            if self.store.param(id).trainable {
                let t = grads
                    .take(v)
                    .ok_or_else(|| Error::Contract("missing gradient for a trainable parameter".into()))?;
                g.push((id, t));
            }
        }
        adam_step(&mut self.store, &g, &mut self.adam, self.cfg.learning_rate, site)?;
        if let Regime::Smooth(t) = &mut self.regime {
            t.update(&self.store, d.beta)?;
        }
        Ok((loss_value, preds))
    }

    fn run(&mut self, mut progress: Option<&mut (dyn Write + '_)>, clock: &Instant) -> Result<LoopOutcome> {
        let n = self.data.train.len();
        if n == 0 {
            return Err(Error::Data("empty training set".to_string()));
        }
        let tasks = self.model.tasks().to_vec();
        let mut epochs = Vec::with_capacity(self.cfg.epochs);
        let mut best: Option<(f64, usize, ParamStore)> = None;
        if let Some(w) = progress.as_deref_mut() {
            writeln!(w, "{}", EpochRecord::tsv_header())?;
        }
        for epoch in 1..=self.cfg.epochs {
            let batches = make_batches(n, self.cfg.batch_size, &mut self.shuffle)?;
            let mut loss_sum = 0.0f64;
            let mut hits = [0usize; 2];
            for (bi, rows) in batches.into_iter().enumerate() {
                let b = self.batch(rows)?;
                let (loss, preds) = self.step(&b, StepSite { epoch, batch: bi })?;
                loss_sum += loss as f64 * b.rows.len() as f64;
                for (&t, p) in tasks.iter().zip(&preds) {
                    hits[t.index()] += p.iter().zip(&b.y[t.index()]).filter(|(a, b)| a == b).count();
                }
            }
            let has = |t: Task| tasks.contains(&t);
            let (val_loss, val_acc1, val_acc2) =
                validate(&self.model, &self.store, &self.data.val, self.cfg.distill.alpha)?;
            let rec = EpochRecord {
                epoch,
                train_loss: loss_sum / n as f64,
                train_acc1: has(Task::Task1).then(|| hits[0] as f64 / n as f64),
                train_acc2: has(Task::Task2).then(|| hits[1] as f64 / n as f64),
                val_loss,
                val_acc1,
                val_acc2,
                seconds: clock.elapsed().as_secs_f64(),
            };
            if let Some(w) = progress.as_deref_mut() {
                writeln!(w, "{}", rec.tsv_line())?;
            }
            let score = rec.selection_score();
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, epoch, self.store.clone()));
            }
            epochs.push(rec);
        }
        let (_, best_epoch, best) = best.unwrap();
        Ok(LoopOutcome {
            epochs,
            best,
            best_epoch,
        })
    }
}

/// Trains with `config.method`.
pub fn train(data: &TrainData, config: &TrainConfig) -> Result<RunOutput> {
    train_with_progress(data, config, None)
}

/// As [`train`], writing one tab-separated line per epoch to `progress`.
pub fn train_with_progress(
    data: &TrainData,
    config: &TrainConfig,
    mut progress: Option<&mut dyn Write>,
) -> Result<RunOutput> {
    config.validate()?;
    data.train.check()?;
    data.val.check()?;
    if data.train.is_empty() {
        return Err(Error::Data("empty training set".to_string()));
    }
    let clock = Instant::now();
    let model_cfg = model_config(config, data);
    let (lp, stage1_epochs, teacher_store) = match config.method {
        Method::BornAgain => {
            let mut stage1 = Loop::new(config, data, model_cfg.clone(), Regime::Multitask)?;
            let out1 = stage1.run(progress.as_deref_mut(), &clock)?;
            let logits = predict_logits(&stage1.model, &out1.best, &data.train.windows, 256)?;
            let regime = Regime::Frozen {
                store: out1.best.clone(),
                logits,
            };
            (Loop::new(config, data, model_cfg, regime)?, Some(out1.epochs), None)
        }
        m => {
            let regime = match m {
                Method::Singletask1 => Regime::Single(Task::Task1),
                Method::Singletask2 => Regime::Single(Task::Task2),
                Method::Multitask => Regime::Multitask,
                Method::SdDropout => Regime::SdDropout,
                Method::SmoothDistill => Regime::Smooth(TeacherState {
                    params: ParamStore::new(),
                }),
                Method::BornAgain => unreachable!(),
            };
            (Loop::new(config, data, model_cfg, regime)?, None, None::<ParamStore>)
        }
    };
    let mut lp = lp;
    let out = lp.run(progress, &clock)?;
    let val = evaluate(&lp.model, &out.best, &data.val)?;
    let test = match &data.test {
        Some(t) if !t.is_empty() => Some(evaluate(&lp.model, &out.best, t)?),
        _ => None,
    };
    let teacher = match lp.regime {
        Regime::Smooth(t) => Some(t.params),
        Regime::Frozen { store, .. } => Some(store),
        _ => teacher_store,
    };
    let result = RunResult {
        method: config.method,
        seed: config.seed,
        fold: data.fold,
        epochs: out.epochs,
        stage1_epochs,
        best_epoch: out.best_epoch,
        best_checkpoint: format!("{}-seed{}-epoch{}", config.method, config.seed, out.best_epoch),
        val,
        test,
        wall_clock_secs: clock.elapsed().as_secs_f64(),
    };
    Ok(RunOutput {
        result,
        model: lp.model,
        best: out.best,
        last: lp.store,
        teacher,
        optimizer: lp.adam,
    })
}

fn with_method(config: &TrainConfig, method: Method) -> TrainConfig {
    TrainConfig {
        method,
        ..config.clone()
    }
}

pub fn train_multitask(data: &TrainData, config: &TrainConfig) -> Result<RunOutput> {
    train(data, &with_method(config, Method::Multitask))
}

pub fn train_singletask(data: &TrainData, task: Task, config: &TrainConfig) -> Result<RunOutput> {
    let m = match task {
        Task::Task1 => Method::Singletask1,
        Task::Task2 => Method::Singletask2,
    };
    train(data, &with_method(config, m))
}

pub fn train_sd_dropout(data: &TrainData, config: &TrainConfig) -> Result<RunOutput> {
    train(data, &with_method(config, Method::SdDropout))
}

pub fn train_born_again(data: &TrainData, config: &TrainConfig) -> Result<RunOutput> {
    train(data, &with_method(config, Method::BornAgain))
}

pub fn train_smooth_distill(data: &TrainData, config: &TrainConfig) -> Result<RunOutput> {
    train(data, &with_method(config, Method::SmoothDistill))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_and_merge_tail() {
        let mut rng = stream_rng(0, 1);
        let b = make_batches(129, 64, &mut rng).unwrap();
        let sizes: Vec<usize> = b.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![64, 65]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..129).collect::<Vec<_>>());
        let b = make_batches(130, 64, &mut rng).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![64, 64, 2]);
        assert!(make_batches(1, 64, &mut rng).is_err());
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("smooth-distill".parse::<Method>().unwrap(), Method::SmoothDistill);
        assert!("foo".parse::<Method>().is_err());
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.batch_size, c.epochs), (0.001, 64, 300));
        assert_eq!(c.distill, DistillConfig { alpha: 0.5, lambda: 0.5, tau: 3.0, beta: 0.999 });
    }
}
