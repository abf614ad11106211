//! Named parameter tensors and the store that owns them.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

/// A trainable (or frozen) tensor: values plus a same-shape gradient slot.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub requires_grad: bool,
}

impl ParamTensor {
    pub fn new(
        name: impl Into<String>,
        shape: Vec<usize>,
        values: Vec<f64>,
        requires_grad: bool,
    ) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::InvalidArgument(format!(
                "parameter shape {shape:?} has a zero extent"
            )));
        }
        if values.len() != numel {
            return Err(Error::ShapeMismatch {
                op: "param_new",
                lhs: shape,
                rhs: vec![values.len()],
            });
        }
        Ok(ParamTensor {
            name: name.into(),
            shape,
            values,
            grad: vec![0.0; numel],
            requires_grad,
        })
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Flat registry of parameters with stable insertion order.
///
/// Insertion order is the iteration order everywhere (optimizers, checkpoint
/// writing), which is what makes training runs reproducible.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    params: Vec<ParamTensor>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, tensor: ParamTensor) -> Result<ParamId> {
        if self.by_name.contains_key(&tensor.name) {
            return Err(Error::DuplicateParam(tensor.name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(tensor.name.clone(), id);
        self.params.push(tensor);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.params[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Ids in insertion order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor)> {
        self.params.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        let err = ParamTensor::new("w", vec![2, 3], vec![0.0; 5], true).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn rejects_duplicate_names() {
        let mut store = ParamStore::new();
        store
            .add(ParamTensor::new("w", vec![1], vec![0.0], true).unwrap())
            .unwrap();
        let err = store
            .add(ParamTensor::new("w", vec![1], vec![0.0], true).unwrap())
            .unwrap_err();
        assert!(matches!(err, Error::DuplicateParam(_)));
    }

    #[test]
    fn zero_grad_clears_all() {
        let mut store = ParamStore::new();
        let id = store
            .add(ParamTensor::new("w", vec![2], vec![1.0, 2.0], true).unwrap())
            .unwrap();
        store.get_mut(id).grad.copy_from_slice(&[3.0, 4.0]);
        store.zero_grad();
        assert_eq!(store.get(id).grad, vec![0.0, 0.0]);
    }
}
