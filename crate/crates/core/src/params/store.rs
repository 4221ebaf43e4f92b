use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::selector::TrainableSet;

/// Gradients of trainable parameters, keyed by name.
pub type Gradients = IndexMap<String, Vec<f64>>;

/// Name and shape of one parameter, without its values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered names and shapes of a parameter set. Lets selectors and counts run
/// on configurations too large to allocate.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Layout {
    pub specs: Vec<ParamSpec>,
}

impl Layout {
    pub fn total(&self) -> usize {
        self.specs.iter().map(ParamSpec::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }
}

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: IndexMap<String, Tensor>,
}

/// A bit-exact copy of a store's values.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSnapshot {
    entries: IndexMap<String, Tensor>,
}

impl ParamSnapshot {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn into_store(self) -> ParameterStore {
        ParameterStore {
            entries: self.entries,
        }
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Mismatch(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn total_coords(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn layout(&self) -> Layout {
        Layout {
            specs: self
                .entries
                .iter()
                .map(|(k, v)| ParamSpec::new(k.clone(), v.shape().to_vec()))
                .collect(),
        }
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.entries.retain(|k, _| keep(k));
    }

    /// Sets each tensor's `requires_grad` from membership in `trainable`.
    pub fn apply_trainable(&mut self, trainable: &TrainableSet) {
        for (name, t) in &mut self.entries {
            t.requires_grad = trainable.contains(name);
        }
    }

    /// Records every entry as a tape leaf, honouring `requires_grad`.
    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        let vars = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
            .collect();
        Bindings { vars }
    }

    pub fn snapshot(&self) -> ParamSnapshot {
        let entries = self
            .entries
            .iter()
            .map(|(k, v)| {
                let mut t = v.clone();
                t.grad = None;
                (k.clone(), t)
            })
            .collect();
        ParamSnapshot { entries }
    }

    /// Overwrites values from `snap`; names and shapes must match exactly.
    pub fn restore(&mut self, snap: &ParamSnapshot) -> Result<()> {
        if snap.entries.len() != self.entries.len() {
            return Err(Error::Mismatch(format!(
                "snapshot has {} entries, store has {}",
                snap.entries.len(),
                self.entries.len()
            )));
        }
        for (name, t) in &self.entries {
            let s = snap
                .entries
                .get(name)
                .ok_or_else(|| Error::Mismatch(format!("snapshot lacks `{name}`")))?;
            if s.shape() != t.shape() {
                return Err(Error::shape("restore", t.shape(), s.shape()));
            }
        }
        for (name, t) in &mut self.entries {
            let s = &snap.entries[name];
            t.data_mut().copy_from_slice(s.data());
        }
        Ok(())
    }

    /// Indices of coordinates whose bits differ from `snap`, per entry.
    pub fn changed_coords(&self, snap: &ParamSnapshot) -> IndexMap<String, Vec<usize>> {
        let mut out = IndexMap::new();
        for (name, t) in &self.entries {
            let Some(s) = snap.get(name) else { continue };
            let idx: Vec<usize> = t
                .data()
                .iter()
                .zip(s.data())
                .enumerate()
                .filter(|(_, (a, b))| a.to_bits() != b.to_bits())
                .map(|(i, _)| i)
                .collect();
            if !idx.is_empty() {
                out.insert(name.clone(), idx);
            }
        }
        out
    }
}

/// Tape variables for every parameter of a store.
#[derive(Debug, Clone)]
pub struct Bindings {
    vars: IndexMap<String, Var>,
}

impl Bindings {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Gradients of every bound leaf that received one.
    pub fn gradients(&self, tape: &Tape) -> Gradients {
        self.vars
            .iter()
            .filter_map(|(k, v)| tape.grad(*v).map(|g| (k.clone(), g.to_vec())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("a.weight", Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        s.insert("a.bias", Tensor::vector(vec![0.5, -0.5])).unwrap();
        s
    }

    #[test]
    fn snapshot_restore_is_bit_exact() {
        let mut s = small();
        let snap = s.snapshot();
        s.get_mut("a.weight").unwrap().data_mut()[0] = f64::from_bits(0x3ff0_0000_0000_0001);
        s.restore(&snap).unwrap();
        assert_eq!(s.get("a.weight").unwrap().data()[0].to_bits(), 1.0f64.to_bits());
        assert!(s.changed_coords(&snap).is_empty());
    }

    #[test]
    fn restore_rejects_extra_entry() {
        let snap = small().snapshot();
        let mut bigger = small();
        bigger.insert("extra.bias", Tensor::vector(vec![0.0])).unwrap();
        assert!(matches!(bigger.restore(&snap), Err(Error::Mismatch(_))));
    }

    #[test]
    fn restore_rejects_shape_change() {
        let snap = small().snapshot();
        let mut other = ParameterStore::new();
        other.insert("a.weight", Tensor::zeros(&[4])).unwrap();
        other.insert("a.bias", Tensor::zeros(&[2])).unwrap();
        assert!(other.restore(&snap).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = small();
        assert!(s.insert("a.bias", Tensor::zeros(&[2])).is_err());
    }
}
