use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

/// Named, ordered collection of trainable tensors.
pub struct ParamStore<T: Real> {
    uid: u64,
    names: Vec<String>,
    values: Vec<Arc<Tensor<T>>>,
    frozen: bool,
}

impl<T: Real> Clone for ParamStore<T> {
    /// Deep copy with a fresh identity.
    fn clone(&self) -> Self {
        Self {
            uid: NEXT_UID.fetch_add(1, Ordering::Relaxed),
            names: self.names.clone(),
            values: self.values.iter().map(|v| Arc::new((**v).clone())).collect(),
            frozen: self.frozen,
        }
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Serialized form of a [`ParamStore`]; values are kept in `f32`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NamedTensors {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub values: Vec<Vec<f32>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { uid: NEXT_UID.fetch_add(1, Ordering::Relaxed), names: vec![], values: vec![], frozen: false }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(Arc::new(t));
        self.values.len() - 1
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: usize) -> &Tensor<T> {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.values[id])
    }

    pub fn value_arc(&self, id: usize) -> Arc<Tensor<T>> {
        self.values[id].clone()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Copies every value from `other`, matching by name and shape.
    pub fn copy_from(&mut self, other: &ParamStore<T>) -> Result<(), String> {
        for id in 0..self.len() {
            let src = other.id_of(&self.names[id]).ok_or_else(|| format!("missing parameter {}", self.names[id]))?;
            if other.get(src).shape != self.get(id).shape {
                return Err(format!("shape mismatch for {}", self.names[id]));
            }
            self.values[id] = Arc::new(other.get(src).clone());
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            uid: NEXT_UID.fetch_add(1, Ordering::Relaxed),
            names: self.names.clone(),
            values: self.values.iter().map(|v| Arc::new(v.cast())).collect(),
            frozen: self.frozen,
        }
    }

    pub fn to_named(&self) -> NamedTensors {
        NamedTensors {
            names: self.names.clone(),
            shapes: self.values.iter().map(|v| v.shape.clone()).collect(),
            values: self.values.iter().map(|v| v.data.iter().map(|x| x.as_f64() as f32).collect()).collect(),
        }
    }

    /// Loads values by name into an already-built store (architecture must match).
    pub fn load_named(&mut self, named: &NamedTensors) -> Result<(), String> {
        if named.names.len() != self.len() {
            return Err(format!("expected {} tensors, found {}", self.len(), named.names.len()));
        }
        for id in 0..self.len() {
            let src = named
                .names
                .iter()
                .position(|n| n == &self.names[id])
                .ok_or_else(|| format!("missing parameter {}", self.names[id]))?;
            if named.shapes[src] != self.values[id].shape {
                return Err(format!("shape mismatch for {}", self.names[id]));
            }
            let data = named.values[src].iter().map(|&v| T::of(v as f64)).collect();
            self.values[id] = Arc::new(Tensor::new(&named.shapes[src], data));
        }
        Ok(())
    }
}

/// He-normal init for a weight with the given fan-in.
pub fn he_normal<T: Real>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    normal(shape, std, rng)
}

pub fn normal<T: Real>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("valid std");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::of(dist.sample(rng))).collect())
}

pub fn uniform<T: Real>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::of(rng.random_range(-bound..=bound))).collect())
}
