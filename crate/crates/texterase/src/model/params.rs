//! Named, ordered parameter storage.
//!
//! Parameter order is fixed at construction and drives RNG consumption,
//! checkpoint layout and optimizer state alignment, so two stores built
//! from the same config and seed are bit-identical.

use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

#[derive(Clone, Debug)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<ArrayD<f32>>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, name: &str, value: ArrayD<f32>) {
        assert!(
            self.index.insert(name.to_string(), self.values.len()).is_none(),
            "duplicate parameter name {name}"
        );
        self.names.push(name.to_string());
        self.values.push(value);
    }

    pub fn get(&self, name: &str) -> &ArrayD<f32> {
        &self.values[self.index[name]]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f32>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter())
    }

    pub fn values(&self) -> &[ArrayD<f32>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [ArrayD<f32>] {
        &mut self.values
    }

    /// Replace a tensor, keeping name and shape.
    pub fn set(&mut self, name: &str, value: ArrayD<f32>) -> Result<()> {
        let idx = *self
            .index
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if self.values[idx].shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} shape mismatch: {:?} vs {:?}",
                self.values[idx].shape(),
                value.shape()
            )));
        }
        self.values[idx] = value;
        Ok(())
    }

    /// Bind every parameter to the tape. On a gradient-enabled graph the
    /// parameters become differentiable leaves; on an inference tape
    /// (`Graph::inference`) they are plain constants.
    pub fn bind<'s>(&'s self, g: &mut Graph<f32>) -> Bound<'s> {
        let vars = self.values.iter().map(|v| g.leaf(v.clone())).collect();
        Bound { store: self, vars }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Graph handles for every parameter of a store, resolvable by name.
pub struct Bound<'s> {
    store: &'s ParamStore,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn var(&self, name: &str) -> Var {
        self.vars[self.store.index[name]]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Deterministic fan-in-scaled uniform initializer.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `+-sqrt(6 / fan_in)`.
    pub fn conv_weight(&mut self, shape: &[usize], fan_in: usize) -> ArrayD<f32> {
        let limit = (6.0 / fan_in as f64).sqrt();
        let rng = &mut self.rng;
        ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-limit..limit) as f32)
    }

    pub fn bias(&mut self, len: usize, value: f32) -> ArrayD<f32> {
        ArrayD::from_elem(IxDyn(&[len]), value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_tensors() {
        let mut a = Initializer::new(9);
        let mut b = Initializer::new(9);
        assert_eq!(a.conv_weight(&[4, 3, 3, 3], 27), b.conv_weight(&[4, 3, 3, 3], 27));
    }

    #[test]
    fn store_set_validates_shape() {
        let mut s = ParamStore::new();
        s.push("w", ArrayD::zeros(IxDyn(&[2, 2])));
        assert!(s.set("w", ArrayD::zeros(IxDyn(&[2, 3]))).is_err());
        assert!(s.set("missing", ArrayD::zeros(IxDyn(&[2, 2]))).is_err());
        assert!(s.set("w", ArrayD::ones(IxDyn(&[2, 2]))).is_ok());
        assert_eq!(s.get("w").sum(), 4.0);
        assert_eq!(s.scalar_count(), 4);
    }
}
