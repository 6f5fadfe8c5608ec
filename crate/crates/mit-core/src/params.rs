//! Named parameter registry shared by the model, optimizer, checkpoint
//! writer, and gradient checker.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::tensor::{Graph, NodeId, Tensor};

/// Ordered collection of named tensors. Insertion order is preserved and
/// is the canonical iteration order everywhere (optimizer steps, gradient
/// checks, serialization), which keeps runs bit-reproducible.
#[derive(Default, Clone)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a tensor under a unique name. Duplicate names are a
    /// construction bug, so this panics rather than returning an error.
    pub fn insert(&mut self, name: &str, t: Tensor) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name: {name}"
        );
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), t));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = *self.index.get(name)?;
        Some(&mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), &mut *t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Scalar count across tensors marked trainable.
    pub fn trainable_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|(_, t)| t.requires_grad)
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Per-tensor (name, numel, trainable) listing in insertion order.
    pub fn report(&self) -> Vec<(String, usize, bool)> {
        self.entries
            .iter()
            .map(|(n, t)| (n.clone(), t.numel(), t.requires_grad))
            .collect()
    }

    /// Mark every tensor frozen (requires_grad = false).
    pub fn freeze_all(&mut self) {
        for (_, t) in self.entries.iter_mut() {
            t.requires_grad = false;
        }
    }
}

/// Totals produced by [`count_report`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CountReport {
    pub total: u64,
    pub trainable: u64,
    pub fraction: f64,
}

/// Enumerate every scalar in the set and report the trainable fraction.
pub fn count_report(ps: &ParamSet) -> CountReport {
    let total = ps.total_scalars() as u64;
    let trainable = ps.trainable_scalars() as u64;
    let fraction = if total == 0 { 0.0 } else { trainable as f64 / total as f64 };
    CountReport { total, trainable, fraction }
}

/// All parameters of a set entered onto one graph, addressable by name.
/// Every forward pass binds exactly once so gradients land on a single
/// leaf per parameter.
pub struct Bound {
    map: BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn new(g: &mut Graph, ps: &ParamSet) -> Self {
        let mut map = BTreeMap::new();
        for (name, t) in ps.iter() {
            map.insert(String::from(name), g.leaf(t));
        }
        Self { map }
    }

    pub fn get(&self, name: &str) -> Option<NodeId> {
        self.map.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.map.iter().map(|(n, id)| (n.as_str(), *id))
    }
}
