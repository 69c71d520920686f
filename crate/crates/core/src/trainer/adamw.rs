use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffcore::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!("invalid optimizer settings: {self:?}")))
        }
    }
}

/// First and second moments per parameter, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<S> {
    pub step: u64,
    pub m: BTreeMap<String, Vec<S>>,
    pub v: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> AdamWState<S> {
    /// Zero moments shaped like `store`.
    pub fn new(store: &ParamStore<S>) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(n, p)| (n.to_string(), vec![S::zero(); p.value.numel()]))
                .collect()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One update from the gradients held in `store`:
/// `θ ← θ − η (m̂ / (√v̂ + ε) + wd · θ)`.
pub fn adamw_step<S: Scalar>(store: &mut ParamStore<S>, state: &mut AdamWState<S>, cfg: &AdamWConfig) -> Result<()> {
    for (name, p) in store.iter() {
        let n = p.value.numel();
        let m = state.m.get(name).map_or(0, Vec::len);
        let v = state.v.get(name).map_or(0, Vec::len);
        if m != n || v != n || p.grad.len() != n {
            return Err(Error::shape(format!("adamw_step({name})"), &[n], &[m, v, p.grad.len()]));
        }
    }
    if state.m.len() != store.len() || state.v.len() != store.len() {
        return Err(Error::shape("adamw_step(state)", &[store.len()], &[state.m.len(), state.v.len()]));
    }

    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
    let c1 = S::of(1.0 - cfg.beta1.powf(t));
    let c2 = S::of(1.0 - cfg.beta2.powf(t));
    let (lr, eps, wd) = (S::of(cfg.lr), S::of(cfg.eps), S::of(cfg.weight_decay));
    let one = S::one();
    for (name, p) in store.iter_mut() {
        let m = state.m.get_mut(name).expect("checked above");
        let v = state.v.get_mut(name).expect("checked above");
        let grad = &p.grad;
        for (i, theta) in p.value.data_mut().iter_mut().enumerate() {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *theta = *theta - lr * (m_hat / (v_hat.sqrt() + eps) + wd * *theta);
        }
    }
    Ok(())
}
