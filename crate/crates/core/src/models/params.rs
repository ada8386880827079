//! Named parameter storage.
//!
//! A `ParamStore` owns every weight of a model as one flat `Vec<f64>` plus a
//! name -> (shape, offset) table. Registration order is frozen: it defines
//! the layout of the flat vector, the order of the checkpoint manifest, and
//! the byte order of `weights.bin`. The optimizer works on the flat vector;
//! forward passes work on per-name tape tensors produced by `bind`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::autodiff::{Gradients, Tape, Tensor};

use super::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How a freshly registered parameter is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in ±1/sqrt(fan_in), the conventional scheme for the widths
    /// used here. The fan-in is passed explicitly because a bias vector's
    /// fan-in is its layer's input width, not its own length.
    UniformFanIn(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter and fills it. Draw order equals registration
    /// order, so a fixed seed reproduces every weight bit-for-bit.
    pub fn register(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut ChaCha20Rng,
    ) -> Result<(), ModelError> {
        if self.index.contains_key(name) {
            return Err(ModelError::Config(format!("duplicate parameter name {name:?}")));
        }
        let len: usize = shape.iter().product();
        if len == 0 {
            return Err(ModelError::Config(format!("parameter {name:?} has empty shape {shape:?}")));
        }
        let offset = self.data.len();
        match init {
            Init::UniformFanIn(fan_in) => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                self.data.extend((0..len).map(|_| rng.gen_range(-bound..bound)));
            }
            Init::Zeros => self.data.extend(std::iter::repeat(0.0).take(len)),
            Init::Ones => self.data.extend(std::iter::repeat(1.0).take(len)),
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry { name: name.to_string(), shape: shape.to_vec(), offset });
        Ok(())
    }

    /// Rebuilds a store from a checkpoint manifest plus the flat weight
    /// vector, without drawing any randomness.
    pub fn from_parts(shapes: &[(String, Vec<usize>)], data: Vec<f64>) -> Result<Self, ModelError> {
        let mut store = ParamStore::new();
        let mut offset = 0usize;
        for (name, shape) in shapes {
            if store.index.contains_key(name) {
                return Err(ModelError::Malformed(format!("duplicate parameter name {name:?}")));
            }
            let len: usize = shape.iter().product();
            if len == 0 {
                return Err(ModelError::Malformed(format!("parameter {name:?} has empty shape {shape:?}")));
            }
            store.index.insert(name.clone(), store.entries.len());
            store.entries.push(ParamEntry { name: name.clone(), shape: shape.clone(), offset });
            offset += len;
        }
        if offset != data.len() {
            return Err(ModelError::Malformed(format!(
                "weight vector holds {} values but the manifest describes {offset}",
                data.len()
            )));
        }
        store.data = data;
        Ok(store)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    /// Total size of parameters whose name starts with any of the prefixes.
    pub fn param_count_matching(&self, prefixes: &[&str]) -> usize {
        self.entries
            .iter()
            .filter(|e| prefixes.iter().any(|p| e.name.starts_with(p)))
            .map(|e| e.len())
            .sum()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn shape(&self, name: &str) -> Option<&[usize]> {
        self.index.get(name).map(|&i| self.entries[i].shape.as_slice())
    }

    pub fn values(&self, name: &str) -> Option<&[f64]> {
        self.index.get(name).map(|&i| {
            let e = &self.entries[i];
            &self.data[e.offset..e.offset + e.len()]
        })
    }

    pub fn values_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        match self.index.get(name) {
            Some(&i) => {
                let (offset, len) = (self.entries[i].offset, self.entries[i].len());
                Some(&mut self.data[offset..offset + len])
            }
            None => None,
        }
    }

    /// Overwrites one parameter; the value count must match its shape.
    pub fn set_values(&mut self, name: &str, values: &[f64]) -> Result<(), ModelError> {
        let slot = self
            .values_mut(name)
            .ok_or_else(|| ModelError::Config(format!("unknown parameter {name:?}")))?;
        if slot.len() != values.len() {
            return Err(ModelError::Config(format!(
                "parameter {name:?} holds {} values, got {}",
                slot.len(),
                values.len()
            )));
        }
        slot.copy_from_slice(values);
        Ok(())
    }

    /// Puts every parameter on a tape as a watched tensor. One bind per
    /// forward pass; gradients are read back through `flatten_grads`.
    pub fn bind(&self, tape: &Tape) -> BoundParams {
        let mut by_name = BTreeMap::new();
        for e in &self.entries {
            let t = Tensor::new(e.shape.clone(), self.data[e.offset..e.offset + e.len()].to_vec())
                .expect("stored shape matches stored length");
            by_name.insert(e.name.clone(), tape.watch(&t));
        }
        BoundParams { by_name }
    }

    /// Gradient of the swept root with respect to every parameter, laid out
    /// exactly like `data()`. Parameters the root never touched contribute
    /// zeros, so the optimizer can treat the result uniformly.
    pub fn flatten_grads(
        &self,
        bound: &BoundParams,
        grads: &Gradients,
    ) -> Result<Vec<f64>, ModelError> {
        let mut flat = Vec::with_capacity(self.data.len());
        for e in &self.entries {
            let g = grads.wrt(bound.get(&e.name))?;
            flat.extend_from_slice(g.data());
        }
        Ok(flat)
    }
}

/// Tape-watched views of every parameter, keyed by name. Valid only for the
/// tape that produced them.
#[derive(Debug)]
pub struct BoundParams {
    by_name: BTreeMap<String, Tensor>,
}

impl BoundParams {
    /// Panics on an unknown name: lookups are hard-coded next to the
    /// registrations, so a miss is a bug, not an input error.
    pub fn get(&self, name: &str) -> &Tensor {
        self.by_name
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} was never registered"))
    }
}
