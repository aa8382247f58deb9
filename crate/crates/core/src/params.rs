//! Named parameter stores.
//!
//! Each trainable network owns a [`ParamStore`]. Parameters are registered by
//! name and initialised from a generator seeded by `(store seed, name)`, so a
//! parameter with the same name and shape gets the same initial value in every
//! model variant that declares it.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{HtdError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreTag {
    Policy,
    Tactile,
    Teacher,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Globally unique handle for a parameter: which store and which slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub store: StoreTag,
    pub index: usize,
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
    Normal(f64),
}

#[derive(Clone, Debug)]
pub struct ParamStore {
    tag: StoreTag,
    seed: u64,
    names: Vec<String>,
    values: Vec<Tensor>,
    lookup: HashMap<String, usize>,
}

fn fnv1a(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(name.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl ParamStore {
    pub fn new(tag: StoreTag, seed: u64) -> Self {
        Self { tag, seed, names: Vec::new(), values: Vec::new(), lookup: HashMap::new() }
    }

    pub fn tag(&self) -> StoreTag {
        self.tag
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Panics on a duplicate name; that is a model-construction bug.
    pub fn register(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        assert!(!self.lookup.contains_key(name), "parameter {name} registered twice");
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(self.seed, name));
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform(b) => {
                let d = Uniform::new_inclusive(-b, b).expect("finite bound");
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            Init::Normal(s) => {
                let d = Normal::new(0.0, s).expect("finite std");
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
        };
        self.names.push(name.to_string());
        self.values.push(Tensor::new(shape.to_vec(), data));
        self.lookup.insert(name.to_string(), self.values.len() - 1);
        ParamId(self.values.len() - 1)
    }

    pub fn key(&self, id: ParamId) -> ParamKey {
        ParamKey { store: self.tag, index: id.0 }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Same names, shapes and values under another tag.
    pub fn retagged(&self, tag: StoreTag) -> Self {
        let mut s = self.clone();
        s.tag = tag;
        s
    }

    /// Errors unless both stores declare identical names and shapes in order.
    pub fn check_same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.len() != other.len() {
            return Err(HtdError::Shape(format!(
                "parameter count {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for i in 0..self.len() {
            if self.names[i] != other.names[i] || self.values[i].shape() != other.values[i].shape() {
                return Err(HtdError::Shape(format!(
                    "parameter {} {:?} vs {} {:?}",
                    self.names[i],
                    self.values[i].shape(),
                    other.names[i],
                    other.values[i].shape()
                )));
            }
        }
        Ok(())
    }

    /// Euclidean distance between two stores with the same layout.
    pub fn distance(&self, other: &ParamStore) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.data().iter().zip(b.data()))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// Flattened values in registration order.
    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrites values from a flat buffer in registration order.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(HtdError::Shape(format!(
                "flat parameter buffer has {} values, store needs {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut off = 0;
        for t in &mut self.values {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}
