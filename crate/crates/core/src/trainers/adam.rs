use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moments for the trainable parameters of one store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
    t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        Self::with_config(store, AdamConfig::default())
    }

    pub fn with_config(store: &ParamStore, config: AdamConfig) -> Self {
        let m: Vec<Option<Tensor>> = store
            .iter()
            .map(|(_, p)| p.trainable.then(|| Tensor::zeros_like(&p.value)))
            .collect();
        AdamState {
            config,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Number of parameters that carry moment estimates.
    pub fn tracked(&self) -> usize {
        self.m.iter().filter(|m| m.is_some()).count()
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&Tensor> {
        self.m.get(id.index()).and_then(Option::as_ref)
    }

    pub fn second_moment(&self, id: ParamId) -> Option<&Tensor> {
        self.v.get(id.index()).and_then(Option::as_ref)
    }
}

/// Where a step happens, for error reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepSite {
    pub epoch: usize,
    pub batch: usize,
}

/// One bias-corrected Adam update of every parameter in `grads`.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[(ParamId, Tensor)],
    state: &mut AdamState,
    lr: f64,
    site: StepSite,
) -> Result<()> {
    for (id, g) in grads {
        let p = store.param(*id);
        if state.m.get(id.index()).is_none_or(Option::is_none) {
            return Err(Error::Contract(format!("no optimizer state for `{}`", p.name)));
        }
        if g.shape() != p.value.shape() {
            return Err(Error::shape("adam_step", g.shape(), p.value.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient {
                epoch: site.epoch,
                batch: site.batch,
                param: p.name.clone(),
            });
        }
    }
    state.t += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    let step = lr / c1;
    for (id, g) in grads {
        let m = state.m[id.index()].as_mut().unwrap().data_mut();
        let v = state.v[id.index()].as_mut().unwrap().data_mut();
        let w = store.value_mut(*id).data_mut();
        for (((w, m), v), &g) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
            let g = g as f64;
            let mt = beta1 * *m as f64 + (1.0 - beta1) * g;
            let vt = beta2 * *v as f64 + (1.0 - beta2) * g * g;
            *m = mt as f32;
            *v = vt as f32;
            *w = (*w as f64 - step * mt / ((vt / c2).sqrt() + eps)) as f32;
        }
    }
    Ok(())
}
