use ndarray::Array2;

use crate::error::{Error, Result};

/// Index of a parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
}

/// Named dense parameter tensors in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        self.params.push(Param { name: name.into(), value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Result<&mut Array2<f64>> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named `{name}`")))?;
        Ok(self.get_mut(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Flat `(tensor, offset)` addressing used by finite-difference checks.
    pub fn scalar_mut(&mut self, flat: usize) -> &mut f64 {
        let mut rem = flat;
        for p in &mut self.params {
            if rem < p.value.len() {
                return p.value.as_slice_mut().expect("parameters are contiguous").get_mut(rem).unwrap();
            }
            rem -= p.value.len();
        }
        panic!("flat parameter index {flat} out of range")
    }
}

/// One adjoint tensor per parameter, aligned with the owning [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) grads: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.params.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<f64>)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }

    /// Flattened in the same order as [`ParamStore::scalar_mut`].
    pub fn flatten(&self) -> Vec<f64> {
        self.grads.iter().flat_map(|g| g.iter().copied()).collect()
    }
}
