use serde::{Deserialize, Serialize};

use super::{MultitaskModel, Task};
use crate::error::{Error, Result};
use crate::nn::{
    seeded_rng, BatchNorm2d, Conv2d, Linear, MaxPool2d, ParamStore, Session,
};
use crate::tensor::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub out_channels: usize,
    /// Kernel length along the time axis; odd lengths keep the length.
    pub kernel: usize,
    pub pool: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadLayout {
    Dual,
    Single(Task),
}

impl HeadLayout {
    pub fn tasks(self) -> Vec<Task> {
        match self {
            HeadLayout::Dual => Task::BOTH.to_vec(),
            HeadLayout::Single(t) => vec![t],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MtlNetConfig {
    /// Accelerometer axes (rows of the `1×axes×L` input).
    pub axes: usize,
    pub seq_len: usize,
    pub num_classes_task1: usize,
    pub num_classes_task2: usize,
    /// Channels produced by the `axes×1` projection that mixes the axes.
    pub stem_channels: usize,
    pub blocks: Vec<ConvBlockSpec>,
    pub hidden: usize,
    pub dropout: f32,
    pub heads: HeadLayout,
}

impl Default for MtlNetConfig {
    fn default() -> Self {
        MtlNetConfig {
            axes: 3,
            seq_len: 100,
            num_classes_task1: 12,
            num_classes_task2: 3,
            stem_channels: 16,
            blocks: vec![
                ConvBlockSpec { out_channels: 32, kernel: 5, pool: 2 },
                ConvBlockSpec { out_channels: 64, kernel: 5, pool: 2 },
                ConvBlockSpec { out_channels: 128, kernel: 5, pool: 2 },
            ],
            hidden: 256,
            dropout: 0.3,
            heads: HeadLayout::Dual,
        }
    }
}

impl MtlNetConfig {
    pub fn with_classes(mut self, c1: usize, c2: usize) -> Self {
        self.num_classes_task1 = c1;
        self.num_classes_task2 = c2;
        self
    }

    pub fn single_head(&self, task: Task) -> Self {
        MtlNetConfig {
            heads: HeadLayout::Single(task),
            ..self.clone()
        }
    }

    pub fn num_classes(&self, task: Task) -> usize {
        match task {
            Task::Task1 => self.num_classes_task1,
            Task::Task2 => self.num_classes_task2,
        }
    }

    /// Time length after each block (conv keeps length, pool floors).
    pub fn block_lengths(&self) -> Vec<usize> {
        let mut len = self.seq_len;
        self.blocks
            .iter()
            .map(|b| {
                len = (len + 2 * (b.kernel / 2) + 1).saturating_sub(b.kernel);
                len /= b.pool.max(1);
                len
            })
            .collect()
    }

    pub fn flat_width(&self) -> usize {
        let ch = self.blocks.last().map_or(self.stem_channels, |b| b.out_channels);
        let len = self.block_lengths().last().copied().unwrap_or(self.seq_len);
        ch * len
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes_task1 < 2 || self.num_classes_task2 < 2 {
            return Err(Error::Config(format!(
                "both tasks need at least 2 classes, got {} and {}",
                self.num_classes_task1, self.num_classes_task2
            )));
        }
        if self.axes == 0 || self.seq_len == 0 || self.stem_channels == 0 || self.hidden == 0 {
            return Err(Error::Config("zero-sized layer in model config".to_string()));
        }
        if self.blocks.iter().any(|b| b.kernel == 0 || b.pool == 0 || b.out_channels == 0) {
            return Err(Error::Config("conv block with zero kernel, pool or channels".to_string()));
        }
        let mut len = self.seq_len;
        for (i, b) in self.blocks.iter().enumerate() {
            let padded = len + 2 * (b.kernel / 2);
            if padded < b.kernel {
                return Err(Error::Config(format!("block {i}: kernel longer than input")));
            }
            len = padded - b.kernel + 1;
            if len < b.pool {
                return Err(Error::Config(format!(
                    "block {i}: time length {len} shorter than pool {}",
                    b.pool
                )));
            }
            len /= b.pool;
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Trainable scalar count computed from the configuration alone.
pub fn param_count(config: &MtlNetConfig) -> usize {
    let conv = |cin: usize, cout: usize, kh: usize, kw: usize| cout * cin * kh * kw + cout;
    let bn = |c: usize| 2 * c;
    let mut total = conv(1, config.stem_channels, config.axes, 1) + bn(config.stem_channels);
    let mut cin = config.stem_channels;
    for b in &config.blocks {
        total += conv(cin, b.out_channels, 1, b.kernel) + bn(b.out_channels);
        cin = b.out_channels;
    }
    total += config.flat_width() * config.hidden + config.hidden;
    for t in config.heads.tasks() {
        total += config.hidden * config.num_classes(t) + config.num_classes(t);
    }
    total
}

#[derive(Debug, Clone)]
struct Block {
    conv: Conv2d,
    bn: BatchNorm2d,
    pool: MaxPool2d,
}

/// Shared CNN trunk with one linear head per task.
#[derive(Debug, Clone)]
pub struct MtlNet {
    config: MtlNetConfig,
    tasks: Vec<Task>,
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    blocks: Vec<Block>,
    fc: Linear,
    heads: Vec<Linear>,
}

impl MtlNet {
    /// Builds the architecture and its initial parameters from `seed`.
    pub fn new(config: MtlNetConfig, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let stem = Conv2d::new(
            &mut store,
            "stem.conv",
            1,
            config.stem_channels,
            (config.axes, 1),
            (1, 1),
            (0, 0),
            &mut rng,
        );
        let stem_bn = BatchNorm2d::new(&mut store, "stem.bn", config.stem_channels);
        let mut cin = config.stem_channels;
        let mut blocks = Vec::with_capacity(config.blocks.len());
        for (i, b) in config.blocks.iter().enumerate() {
            let conv = Conv2d::new(
                &mut store,
                &format!("block{i}.conv"),
                cin,
                b.out_channels,
                (1, b.kernel),
                (1, 1),
                (0, b.kernel / 2),
                &mut rng,
            );
            let bn = BatchNorm2d::new(&mut store, &format!("block{i}.bn"), b.out_channels);
            blocks.push(Block {
                conv,
                bn,
                pool: MaxPool2d::new((1, b.pool)),
            });
            cin = b.out_channels;
        }
        let fc = Linear::new(&mut store, "fc", config.flat_width(), config.hidden, &mut rng);
        let tasks = config.heads.tasks();
        let heads = tasks
            .iter()
            .map(|&t| {
                let name = match t {
                    Task::Task1 => "head1",
                    Task::Task2 => "head2",
                };
                Linear::new(&mut store, name, config.hidden, config.num_classes(t), &mut rng)
            })
            .collect();
        Ok((
            MtlNet {
                config,
                tasks,
                stem,
                stem_bn,
                blocks,
                fc,
                heads,
            },
            store,
        ))
    }

    pub fn config(&self) -> &MtlNetConfig {
        &self.config
    }

    pub fn head_layers(&self) -> &[Linear] {
        &self.heads
    }
}

impl MultitaskModel for MtlNet {
    fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    fn num_classes(&self, task: Task) -> usize {
        self.config.num_classes(task)
    }

    fn feature_width(&self) -> usize {
        self.config.hidden
    }

    fn head_dropout(&self) -> f32 {
        self.config.dropout
    }

    fn forward_features(&self, s: &mut Session, x: Var) -> Result<Var> {
        let expected = [1, self.config.axes, self.config.seq_len];
        let xs = s.tape.shape(x);
        if xs.len() != 4 || xs[1..] != expected {
            return Err(Error::shape("mtlnet input", xs, &expected));
        }
        let n = xs[0];
        let mut h = self.stem.forward(s, x)?;
        h = self.stem_bn.forward(s, h)?;
        h = s.tape.relu(h);
        for b in &self.blocks {
            h = b.conv.forward(s, h)?;
            h = b.bn.forward(s, h)?;
            h = s.tape.relu(h);
            h = b.pool.forward(s, h)?;
        }
        let flat = s.tape.reshape(h, &[n, self.config.flat_width()])?;
        let f = self.fc.forward(s, flat)?;
        Ok(s.tape.relu(f))
    }

    fn apply_heads(&self, s: &mut Session, features: Var) -> Result<Vec<Var>> {
        self.heads.iter().map(|h| h.forward(s, features)).collect()
    }
}
