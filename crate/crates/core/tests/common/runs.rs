//! Desk-scale training runs on synthetic data.

use mtlkit::data::{split_and_fold, synth_generate, SynthSpec};
use mtlkit::model::{ConvBlockSpec, MtlNetConfig, Task};
use mtlkit::trainers::{train, EpochRecord, Method, RunOutput, TrainConfig, TrainData};

/// Batch size for the desk-scale runs. Small training sets need more
/// optimizer steps per epoch than the default 64 gives.
pub const DESK_BATCH: usize = 16;

/// Synthetic data split 80:20 with fold 0 as validation.
pub fn desk_data(n_per_class: usize, difficulty: f64) -> TrainData {
    let ds = synth_generate(&SynthSpec {
        n_per_class,
        c1: 4,
        c2: 3,
        seq_len: 100,
        seed: 0,
        difficulty,
    })
    .unwrap();
    let sp = split_and_fold(&ds, 0).unwrap();
    let (tr, va) = sp.fold(0);
    let mut data = TrainData::new(ds.subset(&tr).unwrap(), ds.subset(&va).unwrap())
        .with_test(ds.subset(&sp.test).unwrap());
    data.fold = Some(0);
    data
}

pub fn desk_config(method: Method, seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        method,
        seed,
        epochs,
        batch_size: DESK_BATCH,
        ..TrainConfig::default()
    }
}

/// A much smaller network for behavioural tests.
pub fn tiny_model() -> MtlNetConfig {
    MtlNetConfig {
        stem_channels: 4,
        blocks: vec![
            ConvBlockSpec { out_channels: 8, kernel: 5, pool: 2 },
            ConvBlockSpec { out_channels: 8, kernel: 5, pool: 2 },
        ],
        hidden: 16,
        ..MtlNetConfig::default()
    }
}

pub fn run(data: &TrainData, cfg: &TrainConfig) -> RunOutput {
    train(data, cfg).unwrap_or_else(|e| panic!("{} failed: {e}", cfg.method))
}

/// First epoch (1-based) whose running training accuracy reaches `level`
/// on every task the method trains.
pub fn first_epoch_at(epochs: &[EpochRecord], level: f64) -> Option<usize> {
    epochs
        .iter()
        .find(|e| e.train_acc1.unwrap_or(1.0) >= level && e.train_acc2.unwrap_or(1.0) >= level)
        .map(|e| e.epoch)
}

/// Mean test accuracy over both tasks.
pub fn mean_test_accuracy(out: &RunOutput) -> f64 {
    let t = out.result.test.as_ref().unwrap();
    (t.accuracy(Task::Task1).unwrap() + t.accuracy(Task::Task2).unwrap()) / 2.0
}

/// Student parameters after each of the first `epochs` epochs of `method`.
pub fn trajectory(data: &TrainData, base: &TrainConfig, method: Method, epochs: usize) -> Vec<(Vec<u32>, f64)> {
    (1..=epochs)
        .map(|e| {
            let out = run(data, &TrainConfig { method, epochs: e, ..base.clone() });
            let bits = out.last.iter().flat_map(|(_, p)| p.value.data().iter().map(|v| v.to_bits())).collect();
            (bits, out.result.epochs.last().unwrap().train_loss)
        })
        .collect()
}
