use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    tensor: Tensor,
    trainable: bool,
}

/// Named parameters. Handles are insertion indices; every name-facing
/// iteration is in sorted name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<Entry>,
    index: BTreeMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            tensor,
            trainable,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        self.entries[id.0].tensor.data()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    /// Freeze (or unfreeze) every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for e in self.entries.iter_mut().filter(|e| e.name.starts_with(prefix)) {
            e.trainable = trainable;
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Ids in sorted name order.
    pub fn sorted_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.index.values().map(|&i| ParamId(i))
    }

    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Copy values for every name present in both sets. Shapes must agree.
    /// Returns how many tensors were copied.
    pub fn copy_matching_from(&mut self, other: &ParameterSet, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for (name, &i) in &self.index {
            if !name.starts_with(prefix) {
                continue;
            }
            if let Some(src) = other.by_name(name) {
                let dst = &mut self.entries[i].tensor;
                if dst.shape() != src.shape() {
                    return Err(Error::config(format!(
                        "shape mismatch for {name}: {:?} vs {:?}",
                        dst.shape(),
                        src.shape()
                    )));
                }
                dst.data_mut().copy_from_slice(src.data());
                copied += 1;
            }
        }
        Ok(copied)
    }

    /// Little-endian bytes of every parameter under `prefix`, in name order.
    /// Used to assert that frozen weights were not touched.
    pub fn bytes_with_prefix(&self, prefix: &str) -> Vec<u8> {
        let mut out = Vec::new();
        for (name, &i) in &self.index {
            if name.starts_with(prefix) {
                out.extend(name.as_bytes());
                for v in self.entries[i].tensor.data() {
                    out.extend(v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn all_finite(&self) -> std::result::Result<(), String> {
        match self.entries.iter().find(|e| !e.tensor.is_finite()) {
            Some(e) => Err(e.name.clone()),
            None => Ok(()),
        }
    }
}

/// Gradient buffers aligned with the ids of one [`ParameterSet`].
/// Buffers are allocated on first touch; an empty buffer means zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    slots: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn for_params(params: &ParameterSet) -> Self {
        Gradients {
            slots: vec![Vec::new(); params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        let s = &self.slots[id.0];
        if s.is_empty() {
            None
        } else {
            Some(s)
        }
    }

    pub fn slot_mut(&mut self, id: ParamId, len: usize) -> &mut [f64] {
        let s = &mut self.slots[id.0];
        if s.is_empty() {
            s.resize(len, 0.0);
        }
        s
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (dst, src) in self.slots.iter_mut().zip(&other.slots) {
            if src.is_empty() {
                continue;
            }
            if dst.is_empty() {
                dst.extend_from_slice(src);
            } else {
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for s in &mut self.slots {
            s.iter_mut().for_each(|v| *v *= c);
        }
    }

    /// L2 norm over the gradients of trainable parameters.
    pub fn global_norm(&self, params: &ParameterSet) -> f64 {
        params
            .ids()
            .filter(|&id| params.is_trainable(id))
            .filter_map(|id| self.get(id))
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn first_non_finite(&self, params: &ParameterSet) -> Option<String> {
        params
            .sorted_ids()
            .find(|&id| self.get(id).is_some_and(|s| s.iter().any(|v| !v.is_finite())))
            .map(|id| params.name(id).to_string())
    }

    pub fn clear(&mut self) {
        self.slots.iter_mut().for_each(Vec::clear);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_unique_and_sorted() {
        let mut p = ParameterSet::new();
        p.add("b", Tensor::zeros(&[1]), true).unwrap();
        p.add("a", Tensor::zeros(&[2]), false).unwrap();
        assert!(p.add("a", Tensor::zeros(&[2]), true).is_err());
        let names: Vec<_> = p.sorted_ids().map(|id| p.name(id).to_string()).collect();
        assert_eq!(names, ["a", "b"]);
        assert_eq!(p.trainable_count(), 1);
    }

    #[test]
    fn copy_checks_shapes() {
        let mut a = ParameterSet::new();
        a.add("x", Tensor::zeros(&[2]), true).unwrap();
        let mut b = ParameterSet::new();
        b.add("x", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true).unwrap();
        assert_eq!(a.copy_matching_from(&b, "").unwrap(), 1);
        assert_eq!(a.by_name("x").unwrap().data(), &[1.0, 2.0]);
        let mut c = ParameterSet::new();
        c.add("x", Tensor::zeros(&[3]), true).unwrap();
        assert!(a.copy_matching_from(&c, "").is_err());
    }
}
