//! Recordings, sliding windows, splits and folds.

mod adapters;
mod cache;
mod canonical;
mod synth;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::seeded_rng;
use crate::tensor::Tensor;

pub use adapters::{adapt_public_dataset, read_prepared, AdapterOptions, AdapterSummary, DatasetKind};
pub use cache::{load_cache, save_cache};
pub use canonical::{ingest_csv, write_canonical_csv, CsvSchema};
pub use synth::{base_cycles, synth_generate, SynthSpec, OFFSET_DIRECTION};

pub const DEFAULT_SEQ_LEN: usize = 100;
pub const DEFAULT_STEP: usize = 60;
pub const NUM_FOLDS: usize = 5;

/// One continuous accelerometer stream from one sensor placement.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub subject_id: String,
    /// File or group the samples came from.
    pub source: String,
    pub placement: usize,
    /// `(x, y, z)` in g.
    pub samples: Vec<[f32; 3]>,
    /// Per-sample activity or posture id.
    pub activity: Vec<usize>,
    pub sampling_rate: Option<f64>,
}

impl RawRecording {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        if self.samples.len() != self.activity.len() {
            return Err(Error::Data(format!(
                "recording {}: {} samples but {} labels",
                self.source,
                self.samples.len(),
                self.activity.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub subject: String,
    pub source: String,
    pub start: usize,
}

/// A single `3×L` slice, axis-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub data: Vec<f32>,
    pub len: usize,
    pub y1: usize,
    pub y2: usize,
    pub provenance: Provenance,
}

/// Most frequent label; ties go to the smallest id.
pub fn majority_label(labels: &[usize]) -> Option<usize> {
    let max = *labels.iter().max()?;
    let mut counts = vec![0usize; max + 1];
    for &l in labels {
        counts[l] += 1;
    }
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    Some(best)
}

/// Windows of `len` samples starting every `step` samples.
pub fn window_slide(rec: &RawRecording, len: usize, step: usize) -> Result<Vec<Window>> {
    if len == 0 || step == 0 {
        return Err(Error::Config(format!(
            "window length and step must be positive, got {len} and {step}"
        )));
    }
    rec.check()?;
    let mut out = Vec::new();
    let mut start = 0;
    while start + len <= rec.len() {
        let slice = &rec.samples[start..start + len];
        let mut data = vec![0.0f32; 3 * len];
        for (t, s) in slice.iter().enumerate() {
            for a in 0..3 {
                data[a * len + t] = s[a];
            }
        }
        out.push(Window {
            data,
            len,
            y1: majority_label(&rec.activity[start..start + len]).unwrap(),
            y2: rec.placement,
            provenance: Provenance {
                subject: rec.subject_id.clone(),
                source: rec.source.clone(),
                start,
            },
        });
        start += step;
    }
    Ok(out)
}

/// Windowed, labelled samples shaped `N×1×3×L`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub windows: Tensor,
    pub y1: Vec<usize>,
    pub y2: Vec<usize>,
    pub provenance: Vec<Provenance>,
    pub classes1: Vec<String>,
    pub classes2: Vec<String>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.y1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y1.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.windows.shape()[3]
    }

    pub fn num_classes1(&self) -> usize {
        self.classes1.len()
    }

    pub fn num_classes2(&self) -> usize {
        self.classes2.len()
    }

    pub fn check(&self) -> Result<()> {
        let s = self.windows.shape();
        let n = self.len();
        if s.len() != 4 || s[0] != n || s[1] != 1 || s[2] != 3 {
            return Err(Error::shape("WindowedDataset", s, &[n, 1, 3, 0]));
        }
        if self.y2.len() != n || self.provenance.len() != n {
            return Err(Error::Data("label or provenance length mismatch".to_string()));
        }
        if let Some(&bad) = self.y1.iter().find(|&&y| y >= self.classes1.len()) {
            return Err(Error::Data(format!("task-1 label {bad} has no class name")));
        }
        if let Some(&bad) = self.y2.iter().find(|&&y| y >= self.classes2.len()) {
            return Err(Error::Data(format!("task-2 label {bad} has no class name")));
        }
        Ok(())
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<WindowedDataset> {
        Ok(WindowedDataset {
            windows: self.windows.select_rows(idx)?,
            y1: idx.iter().map(|&i| self.y1[i]).collect(),
            y2: idx.iter().map(|&i| self.y2[i]).collect(),
            provenance: idx.iter().map(|&i| self.provenance[i].clone()).collect(),
            classes1: self.classes1.clone(),
            classes2: self.classes2.clone(),
        })
    }

    /// Per-axis mean and standard deviation over all windows.
    pub fn channel_stats(&self) -> [(f32, f32); 3] {
        let l = self.seq_len();
        let mut out = [(0.0, 1.0); 3];
        for (a, slot) in out.iter_mut().enumerate() {
            let vals = self
                .windows
                .data()
                .chunks(3 * l)
                .flat_map(|w| w[a * l..(a + 1) * l].iter().map(|&v| v as f64));
            let (mut n, mut sum, mut sq) = (0f64, 0f64, 0f64);
            for v in vals {
                n += 1.0;
                sum += v;
                sq += v * v;
            }
            if n > 0.0 {
                let mean = sum / n;
                let var = (sq / n - mean * mean).max(0.0);
                let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                *slot = (mean as f32, std as f32);
            }
        }
        out
    }

    pub fn standardize(&mut self, stats: &[(f32, f32); 3]) {
        let l = self.seq_len();
        for w in self.windows.data_mut().chunks_mut(3 * l) {
            for (a, &(m, s)) in stats.iter().enumerate() {
                for v in &mut w[a * l..(a + 1) * l] {
                    *v = (*v - m) / s;
                }
            }
        }
    }
}

/// Stacks windows into a dataset. All windows must share `seq_len`.
pub fn assemble(
    windows: Vec<Window>,
    seq_len: usize,
    classes1: Vec<String>,
    classes2: Vec<String>,
) -> Result<WindowedDataset> {
    let n = windows.len();
    let mut data = Vec::with_capacity(n * 3 * seq_len);
    let mut y1 = Vec::with_capacity(n);
    let mut y2 = Vec::with_capacity(n);
    let mut provenance = Vec::with_capacity(n);
    for w in windows {
        if w.len != seq_len || w.data.len() != 3 * seq_len {
            return Err(Error::shape("assemble", &[3, w.len], &[3, seq_len]));
        }
        data.extend_from_slice(&w.data);
        y1.push(w.y1);
        y2.push(w.y2);
        provenance.push(w.provenance);
    }
    let ds = WindowedDataset {
        windows: Tensor::new(vec![n, 1, 3, seq_len], data)?,
        y1,
        y2,
        provenance,
        classes1,
        classes2,
    };
    ds.check()?;
    Ok(ds)
}

/// Windows every recording in order and stacks the result.
pub fn window_recordings(
    recs: &[RawRecording],
    len: usize,
    step: usize,
    schema: &CsvSchema,
) -> Result<WindowedDataset> {
    let mut all = Vec::new();
    for r in recs {
        all.extend(window_slide(r, len, step)?);
    }
    assemble(all, len, schema.activities.clone(), schema.placements.clone())
}

/// Train/test split with five folds over the training part. All lists are
/// sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
}

impl SplitSpec {
    /// `(train, val)` for cross-validation round `k`.
    pub fn fold(&self, k: usize) -> (Vec<usize>, Vec<usize>) {
        let val = self.folds[k].clone();
        let mut train: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != k)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        train.sort_unstable();
        (train, val)
    }
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

/// Partitions `items` into `k` consecutive chunks, earlier chunks taking the
/// remainder.
fn chunk_near_equal<T: Clone>(items: &[T], k: usize) -> Vec<Vec<T>> {
    let base = items.len() / k;
    let extra = items.len() % k;
    let mut out = Vec::with_capacity(k);
    let mut pos = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        out.push(items[pos..pos + size].to_vec());
        pos += size;
    }
    out
}

/// Seeded 80:20 split of `0..n` and five folds over the training part.
pub fn split_indices(n: usize, seed: u64) -> Result<SplitSpec> {
    if n < 10 {
        return Err(Error::Data(format!("need at least 10 windows to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let n_train = n * 4 / 5;
    let folds = chunk_near_equal(&order[..n_train], NUM_FOLDS)
        .into_iter()
        .map(sorted)
        .collect();
    Ok(SplitSpec {
        seed,
        train: sorted(order[..n_train].to_vec()),
        test: sorted(order[n_train..].to_vec()),
        folds,
    })
}

pub fn split_and_fold(ds: &WindowedDataset, seed: u64) -> Result<SplitSpec> {
    split_indices(ds.len(), seed)
}

/// Same proportions, but whole subjects go to one side.
pub fn split_and_fold_by_subject(ds: &WindowedDataset, seed: u64) -> Result<SplitSpec> {
    let subjects: Vec<String> = ds
        .provenance
        .iter()
        .map(|p| p.subject.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if subjects.len() < 10 {
        return Err(Error::Data(format!(
            "subject-level split needs at least 10 subjects, got {}",
            subjects.len()
        )));
    }
    let mut order = subjects.clone();
    order.shuffle(&mut seeded_rng(seed));
    let n_train = order.len() * 4 / 5;
    let rows_of = |set: &[String]| -> Vec<usize> {
        let set: BTreeSet<&String> = set.iter().collect();
        (0..ds.len())
            .filter(|&i| set.contains(&ds.provenance[i].subject))
            .collect()
    };
    let folds = chunk_near_equal(&order[..n_train], NUM_FOLDS)
        .iter()
        .map(|f| rows_of(f))
        .collect();
    Ok(SplitSpec {
        seed,
        train: rows_of(&order[..n_train]),
        test: rows_of(&order[n_train..]),
        folds,
    })
}
