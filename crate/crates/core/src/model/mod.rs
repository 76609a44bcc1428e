//! The multitask CNN: a shared convolutional trunk feeding one linear head
//! per task, plus the checkpoint container.

mod checkpoint;
mod mtlnet;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{Mode, ParamStore, SeededRng, Session};
use crate::tensor::{Tape, Tensor, Var};

pub use checkpoint::{Checkpoint, CheckpointRole};
pub use mtlnet::{param_count, ConvBlockSpec, HeadLayout, MtlNet, MtlNetConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    /// Activity or posture.
    Task1,
    /// Sensor placement.
    Task2,
}

impl Task {
    pub const BOTH: [Task; 2] = [Task::Task1, Task::Task2];

    pub fn index(self) -> usize {
        match self {
            Task::Task1 => 0,
            Task::Task2 => 1,
        }
    }
}

/// Interface the trainers drive. Any architecture that maps `N×1×3×L`
/// windows to per-task logits through a shared feature vector fits here.
pub trait MultitaskModel {
    /// Tasks served by the heads, in output order.
    fn tasks(&self) -> &[Task];

    fn num_classes(&self, task: Task) -> usize;

    /// Width of the shared feature vector.
    fn feature_width(&self) -> usize;

    /// Dropout applied between the features and the heads in train mode.
    fn head_dropout(&self) -> f32;

    /// Shared representation before dropout and heads.
    fn forward_features(&self, s: &mut Session, x: Var) -> Result<Var>;

    /// One logit tensor per entry of [`tasks`](Self::tasks).
    fn apply_heads(&self, s: &mut Session, features: Var) -> Result<Vec<Var>>;

    fn forward(&self, s: &mut Session, x: Var) -> Result<Vec<Var>> {
        let f = self.forward_features(s, x)?;
        let f = crate::nn::Dropout::new(self.head_dropout())?.forward(s, f)?;
        self.apply_heads(s, f)
    }

    /// Logits for `task`, or `None` when the model has no such head.
    fn head_index(&self, task: Task) -> Option<usize> {
        self.tasks().iter().position(|&t| t == task)
    }
}

/// Paired logits for the two tasks, rows aligned with the input windows.
#[derive(Debug, Clone, PartialEq)]
pub struct DualLogits {
    pub z1: Tensor,
    pub z2: Tensor,
}

/// Runs a dual-head model once and returns both logit tensors.
pub fn mtlnet_forward<M: MultitaskModel + ?Sized>(
    model: &M,
    store: &mut ParamStore,
    x: &Tensor,
    mode: Mode,
    rng: Option<&mut SeededRng>,
) -> Result<DualLogits> {
    let (i1, i2) = match (model.head_index(Task::Task1), model.head_index(Task::Task2)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(crate::Error::Contract(
                "mtlnet_forward needs a dual-head model".to_string(),
            ))
        }
    };
    let mut tape = Tape::no_grad();
    let xv = tape.constant(x.clone());
    let mut s = Session::new(&mut tape, store, mode, rng);
    let outs = model.forward(&mut s, xv)?;
    Ok(DualLogits {
        z1: tape.value(outs[i1]).clone(),
        z2: tape.value(outs[i2]).clone(),
    })
}

/// Shared features for a batch, without recording gradients.
pub fn forward_features<M: MultitaskModel + ?Sized>(
    model: &M,
    store: &mut ParamStore,
    x: &Tensor,
    mode: Mode,
) -> Result<Tensor> {
    let mut tape = Tape::no_grad();
    let xv = tape.constant(x.clone());
    let mut s = Session::new(&mut tape, store, mode, None);
    let f = model.forward_features(&mut s, xv)?;
    Ok(tape.value(f).clone())
}

/// Eval-mode logits per head over a whole dataset, in chunks of `batch`.
pub fn predict_logits<M: MultitaskModel + ?Sized>(
    model: &M,
    store: &ParamStore,
    x: &Tensor,
    batch: usize,
) -> Result<Vec<Tensor>> {
    let n = x.shape()[0];
    let heads = model.tasks().len();
    let mut parts: Vec<Vec<f32>> = vec![Vec::new(); heads];
    // Eval mode never writes to the store; a private copy keeps `store` shared.
    let mut local = store.clone();
    let mut start = 0;
    while start < n {
        let end = (start + batch.max(1)).min(n);
        let xb = x.slice_rows(start, end)?;
        let mut tape = Tape::no_grad();
        let xv = tape.constant(xb);
        let mut s = Session::new(&mut tape, &mut local, Mode::Eval, None);
        let outs = model.forward(&mut s, xv)?;
        for (h, v) in outs.iter().enumerate() {
            parts[h].extend_from_slice(tape.value(*v).data());
        }
        start = end;
    }
    Ok(model
        .tasks()
        .iter()
        .zip(parts)
        .map(|(&t, data)| Tensor::from_parts(vec![n, model.num_classes(t)], data))
        .collect())
}
