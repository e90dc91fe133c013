//! Named parameter containers and their gradient buffers.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct ParamEntry {
    name: String,
    value: Arc<Tensor>,
    frozen: bool,
}

/// Ordered collection of named parameters. Insertion order is the
/// serialization order and the order Adam visits parameters in.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            value: Arc::new(value),
            frozen: false,
        });
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| TensorError::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.entries[id.0].value)
    }

    /// Mutable access; clones the buffer if a live tape still holds it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let current = self.get(id);
        if current.shape() != value.shape() {
            return Err(TensorError::Shape {
                op: "param_set",
                lhs: current.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.entries[id.0].value = Arc::new(value);
        Ok(())
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    /// Freezes or unfreezes every parameter whose name starts with `prefix`.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) {
        for e in &mut self.entries {
            if e.name.starts_with(prefix) {
                e.frozen = frozen;
            }
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e.name.as_str(), e.value.as_ref()))
    }

    /// Copies values for every name present in both stores.
    pub fn copy_matching_from(&mut self, other: &ParamStore) -> Result<usize> {
        let mut copied = 0;
        for (name, &id) in &self.by_name.clone() {
            if let Some(src) = other.id(name) {
                self.set(id, other.get(src).clone())?;
                copied += 1;
            }
        }
        Ok(copied)
    }

    /// Bitwise equality of names, shapes and values.
    pub fn bitwise_eq(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Gradient accumulator with one buffer per parameter. Accumulation is
/// explicit: callers reset with [`GradStore::zero`] between steps.
#[derive(Clone, Debug)]
pub struct GradStore {
    grads: Vec<Tensor>,
    dirty: bool,
}

impl GradStore {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            grads: store
                .entries
                .iter()
                .map(|e| Tensor::zeros(e.value.rows(), e.value.cols()))
                .collect(),
            dirty: false,
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        self.dirty = false;
    }

    /// True when nothing has been accumulated since the last reset.
    pub fn is_clean(&self) -> bool {
        !self.dirty
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[f64]) {
        let dst = self.grads[id.0].data_mut();
        debug_assert_eq!(dst.len(), grad.len());
        for (d, g) in dst.iter_mut().zip(grad) {
            *d += g;
        }
        self.dirty = true;
    }

    pub fn add(&mut self, id: ParamId, grad: &Tensor) -> Result<()> {
        if self.grads[id.0].shape() != grad.shape() {
            return Err(TensorError::Shape {
                op: "grad_add",
                lhs: self.grads[id.0].shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        self.accumulate(id, grad.data());
        Ok(())
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut s = ParamStore::new();
        let a = s.add("b.weight", Tensor::zeros(2, 2));
        let b = s.add("a.weight", Tensor::zeros(1, 3));
        assert_eq!(s.id("b.weight"), Some(a));
        assert_eq!(s.ids().collect::<Vec<_>>(), vec![a, b]);
        assert_eq!(s.num_scalars(), 7);
    }

    #[test]
    fn set_rejects_shape_change() {
        let mut s = ParamStore::new();
        let a = s.add("w", Tensor::zeros(2, 2));
        assert!(s.set(a, Tensor::zeros(2, 3)).is_err());
    }

    #[test]
    fn frozen_prefix() {
        let mut s = ParamStore::new();
        let a = s.add("clf.x", Tensor::zeros(1, 1));
        let b = s.add("ved.y", Tensor::zeros(1, 1));
        s.set_frozen_prefix("clf.", true);
        assert!(s.is_frozen(a));
        assert!(!s.is_frozen(b));
    }

    #[test]
    fn grad_store_tracks_dirty_state() {
        let mut s = ParamStore::new();
        let a = s.add("w", Tensor::zeros(1, 2));
        let mut g = GradStore::new(&s);
        assert!(g.is_clean());
        g.add(a, &Tensor::row(&[1.0, 2.0])).unwrap();
        g.add(a, &Tensor::row(&[1.0, 2.0])).unwrap();
        assert!(!g.is_clean());
        assert_eq!(g.get(a).data(), &[2.0, 4.0]);
        g.zero();
        assert!(g.is_clean());
        assert_eq!(g.get(a).data(), &[0.0, 0.0]);
    }
}
