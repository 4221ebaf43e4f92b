use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Coverage, Gradients, ParameterStore, TrainableSet};

/// AdamW hyperparameters. The learning rate is constant.
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

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    /// `None` means every coordinate of the tensor.
    coords: Option<Vec<usize>>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// First and second moments, stored only for trainable coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    slots: IndexMap<String, Slot>,
}

impl AdamState {
    pub fn new(store: &ParameterStore, trainable: &TrainableSet) -> Result<Self> {
        let mut slots = IndexMap::new();
        for name in trainable.names() {
            let t = store.require(name)?;
            let coords = match trainable.coverage(name) {
                Some(Coverage::All) | None => None,
                Some(Coverage::Coords(c)) => Some(c.clone()),
            };
            let n = coords.as_ref().map_or(t.len(), Vec::len);
            if n == 0 {
                continue;
            }
            slots.insert(
                name.to_string(),
                Slot {
                    coords,
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                },
            );
        }
        Ok(Self { step: 0, slots })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Number of stored `f64` values (first plus second moments).
    pub fn element_count(&self) -> usize {
        self.slots.values().map(|s| s.m.len() + s.v.len()).sum()
    }

    /// Number of coordinates the state tracks.
    pub fn tracked_coords(&self) -> usize {
        self.slots.values().map(|s| s.m.len()).sum()
    }

    pub fn tracked_names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }
}

/// One AdamW update of every coordinate tracked by `state`. Parameters with
/// no gradient entry are treated as having a zero gradient. Coordinates
/// outside the state are never written.
pub fn adamw_step(
    store: &mut ParameterStore,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamWConfig,
) -> Result<()> {
    for (name, slot) in &state.slots {
        if let Some(g) = grads.get(name) {
            let bad = match &slot.coords {
                None => g.iter().any(|x| !x.is_finite()),
                Some(c) => c.iter().any(|&i| !g[i].is_finite()),
            };
            if bad {
                return Err(Error::NonFiniteGradient { name: name.clone() });
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, slot) in state.slots.iter_mut() {
        let g = grads.get(name);
        let theta = store
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.clone()))?
            .data_mut();
        let Slot { coords, m, v } = slot;
        for k in 0..m.len() {
            let i = coords.as_ref().map_or(k, |c| c[k]);
            let gi = g.map_or(0.0, |g| g[i]);
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gi;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            theta[i] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * theta[i]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Selector;
    use crate::tensor::Tensor;

    fn scalar_store(theta: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("x.bias", Tensor::vector(vec![theta])).unwrap();
        s
    }

    fn grads(v: Vec<f64>) -> Gradients {
        let mut g = Gradients::new();
        g.insert("x.bias".into(), v);
        g
    }

    #[test]
    fn zero_gradient_no_decay_is_a_no_op() {
        let mut s = scalar_store(0.7);
        let ts = Selector::full().resolve(&s.layout()).unwrap();
        let mut st = AdamState::new(&s, &ts).unwrap();
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        for _ in 0..3 {
            adamw_step(&mut s, &grads(vec![0.0]), &mut st, &cfg).unwrap();
        }
        assert_eq!(s.get("x.bias").unwrap().data(), &[0.7]);
    }

    #[test]
    fn degenerate_betas_hand_value() {
        let mut s = scalar_store(1.0);
        let ts = Selector::full().resolve(&s.layout()).unwrap();
        let mut st = AdamState::new(&s, &ts).unwrap();
        let cfg = AdamWConfig {
            lr: 0.1,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            weight_decay: 0.0,
        };
        adamw_step(&mut s, &grads(vec![1.0]), &mut st, &cfg).unwrap();
        assert_eq!(s.get("x.bias").unwrap().data(), &[0.9]);
    }

    #[test]
    fn quadratic_trajectory_matches_reference() {
        // f(x) = (x - 3)^2, reference AdamW written out step by step.
        let cfg = AdamWConfig {
            lr: 0.05,
            ..Default::default()
        };
        let mut s = scalar_store(0.5);
        let ts = Selector::full().resolve(&s.layout()).unwrap();
        let mut st = AdamState::new(&s, &ts).unwrap();

        let (b1, b2, eps, wd, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.01f64, 0.05f64);
        let mut x = 0.5f64;
        let mut m = 0.0f64;
        let mut v = 0.0f64;
        for t in 1..=3 {
            let g = 2.0 * (x - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * (mh / (vh.sqrt() + eps) + wd * x);

            let cur = s.get("x.bias").unwrap().data()[0];
            adamw_step(&mut s, &grads(vec![2.0 * (cur - 3.0)]), &mut st, &cfg).unwrap();
            let got = s.get("x.bias").unwrap().data()[0];
            assert!((got - x).abs() < 1e-12, "step {t}: {got} vs {x}");
        }
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = scalar_store(1.0);
        let ts = Selector::full().resolve(&s.layout()).unwrap();
        let mut st = AdamState::new(&s, &ts).unwrap();
        let err = adamw_step(&mut s, &grads(vec![f64::NAN]), &mut st, &AdamWConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("x.bias"));
        assert_eq!(s.get("x.bias").unwrap().data(), &[1.0]);
        assert_eq!(st.step(), 0);
    }

    #[test]
    fn frozen_tensors_untouched_and_state_sized_to_trainable() {
        let mut s = ParameterStore::new();
        s.insert("a.weight", Tensor::full(&[3, 4], 0.5)).unwrap();
        s.insert("a.bias", Tensor::full(&[3], 0.5)).unwrap();
        let ts = Selector::bitfit().resolve(&s.layout()).unwrap();
        let mut st = AdamState::new(&s, &ts).unwrap();
        assert_eq!(st.tracked_coords(), 3);
        assert_eq!(st.element_count(), 6);
        let mut g = Gradients::new();
        g.insert("a.weight".into(), vec![1.0; 12]);
        g.insert("a.bias".into(), vec![1.0; 3]);
        adamw_step(&mut s, &g, &mut st, &AdamWConfig::default()).unwrap();
        assert!(s.get("a.weight").unwrap().data().iter().all(|&x| x == 0.5));
        assert!(s.get("a.bias").unwrap().data().iter().all(|&x| x != 0.5));
    }
}
