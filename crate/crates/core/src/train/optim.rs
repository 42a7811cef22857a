use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.95, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

/// One bias-corrected Adam update of every parameter that has a gradient.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads {
        let p = store.get(name).ok_or_else(|| Error::invalid(format!("gradient for unknown parameter `{name}`")))?;
        if p.shape() != g.shape() {
            return Err(Error::shape(format!("adam: parameter `{name}` {:?} vs gradient {:?}", p.shape(), g.shape())));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads {
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        let p = store.get_mut(name).expect("checked above");
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads.values().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([(name.to_string(), Tensor::new(&[1], vec![v]).unwrap())])
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [1e-6, -3.0, 250.0] {
            let mut store = ParamStore::new();
            store.insert("w", Tensor::new(&[1], vec![0.5]).unwrap());
            let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
            let mut st = AdamState::default();
            adam_step(&mut store, &one("w", g), &mut st, &cfg).unwrap();
            let d = (store.get("w").unwrap().data()[0] - 0.5).abs();
            assert!((d / cfg.lr - 1.0).abs() < 1e-7 + cfg.eps / g.abs(), "{g}: {d}");
        }
    }

    #[test]
    fn zero_grad_is_a_no_op() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::new(&[1], vec![0.5]).unwrap());
        let mut st = AdamState::default();
        adam_step(&mut store, &one("w", 0.0), &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(store.get("w").unwrap().data()[0], 0.5);
        assert_eq!(st.m["w"].data()[0], 0.0);
        assert_eq!(st.v["w"].data()[0], 0.0);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = BTreeMap::from([
            ("a".to_string(), Tensor::new(&[2], vec![3.0, 0.0]).unwrap()),
            ("b".to_string(), Tensor::new(&[1], vec![4.0]).unwrap()),
        ]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        assert!((g["a"].data()[0] - 0.6).abs() < 1e-12);
    }
}
