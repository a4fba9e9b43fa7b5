//! Named parameter storage and the forward context that binds it to a tape.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::Mode;
use crate::tape::{BatchStats, Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub tensor: Tensor,
    /// Learnable weights are trainable; batch-norm running statistics are not.
    pub trainable: bool,
}

/// Ordered collection of named tensors. Insertion order is the
/// serialization order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry {
            name,
            tensor,
            trainable,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn entry(&self, id: ParamId) -> &Entry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of stored learnable scalars.
    pub fn count_params(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Learnable scalars whose names start with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable && e.name.starts_with(prefix))
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Set every entry whose name satisfies `pred` to a constant.
    pub fn fill_where(&mut self, pred: impl Fn(&str) -> bool, value: f64) {
        for e in self.entries.iter_mut().filter(|e| pred(&e.name)) {
            e.tensor.data_mut().iter_mut().for_each(|v| *v = value);
        }
    }

    /// Overwrite values from `other`, matching by name. Every entry of
    /// `self` must be present in `other` with the same shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for e in &mut self.entries {
            let src = other
                .by_name(&e.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing entry {:?}", e.name)))?;
            if src.shape() != e.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "entry {:?}: shape {:?} != expected {:?}",
                    e.name,
                    src.shape(),
                    e.tensor.shape()
                )));
            }
            e.tensor = src.clone();
        }
        Ok(())
    }
}

/// Running-statistics update produced by a train-mode batch norm.
#[derive(Debug, Clone)]
pub struct RunningUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats,
}

/// A tape with every store entry bound as a leaf, plus the forward mode.
#[derive(Debug)]
pub struct Ctx {
    pub tape: Tape,
    pub mode: Mode,
    vars: Vec<Var>,
    updates: Vec<RunningUpdate>,
}

impl Ctx {
    pub fn new(store: &ParamStore, mode: Mode) -> Self {
        let mut tape = Tape::new();
        let vars = store
            .entries
            .iter()
            .map(|e| {
                if e.trainable {
                    tape.param(e.tensor.clone())
                } else {
                    tape.constant(e.tensor.clone())
                }
            })
            .collect();
        Self {
            tape,
            mode,
            vars,
            updates: Vec::new(),
        }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn record_update(&mut self, update: RunningUpdate) {
        self.updates.push(update);
    }

    pub fn updates(&self) -> &[RunningUpdate] {
        &self.updates
    }

    /// Backpropagate `loss` and collect per-parameter gradients.
    pub fn backward(self, loss: Var) -> Result<ParamGrads> {
        let mut g = self.tape.backward(loss)?;
        let grads = self.vars.iter().map(|&v| g.take(v)).collect();
        Ok(ParamGrads {
            grads,
            updates: self.updates,
        })
    }

    /// Backpropagate and keep the raw [`Gradients`] (for input gradients).
    pub fn backward_raw(self, loss: Var) -> Result<(Gradients, Vec<Var>)> {
        Ok((self.tape.backward(loss)?, self.vars))
    }
}

#[derive(Debug)]
pub struct ParamGrads {
    grads: Vec<Option<Vec<f64>>>,
    pub updates: Vec<RunningUpdate>,
}

impl ParamGrads {
    /// `None` for non-trainable entries.
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }
}

/// Fold recorded batch statistics into the store's running buffers.
pub fn apply_running_updates(store: &mut ParamStore, updates: &[RunningUpdate]) {
    for u in updates {
        let mut rs = crate::ops::RunningStats {
            mean: store.get(u.mean).data().to_vec(),
            var: store.get(u.var).data().to_vec(),
        };
        rs.update(&u.stats.mean, &u.stats.var);
        store.get_mut(u.mean).data_mut().copy_from_slice(&rs.mean);
        store.get_mut(u.var).data_mut().copy_from_slice(&rs.var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("a.w", Tensor::ones([1, 1, 1, 1]), true).unwrap();
        assert!(s.add("a.w", Tensor::ones([1, 1, 1, 1]), true).is_err());
    }

    #[test]
    fn count_excludes_buffers() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::ones([2, 3, 1, 1]), true).unwrap();
        s.add("running_mean", Tensor::ones([1, 3, 1, 1]), false).unwrap();
        assert_eq!(s.count_params(), 6);
        assert_eq!(s.count_prefix("run"), 0);
    }
}
