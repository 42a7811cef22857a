use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;

/// Initialisation schemes for newly registered parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// `U(−1/√fan_in, 1/√fan_in)`
    Uniform {
        fan_in: usize,
    },
    Normal {
        std: f64,
    },
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Named parameter tensors, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    frozen: BTreeSet<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `name` with values drawn from a stream keyed by `(seed, name)`,
    /// so a parameter's initial value does not depend on which other
    /// parameters exist. Panics on a duplicate name, which is always a
    /// model-construction bug.
    pub fn init(&mut self, name: &str, shape: &[usize], init: Init, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
        let rng = &mut rng;
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; numel],
            Init::Ones => vec![1.0; numel],
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..numel).map(|_| rng.random_range(-bound..bound)).collect()
            }
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..numel).map(|_| dist.sample(rng)).collect()
            }
        };
        self.insert(name, Tensor::new(shape, data).expect("valid parameter shape"));
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let prev = self.params.insert(name.to_string(), value);
        assert!(prev.is_none(), "parameter `{name}` registered twice");
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Scalars under names starting with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.params.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, v)| v.numel()).sum()
    }

    /// Stops gradient flow into every parameter under `prefix`.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        let names: Vec<String> = self.params.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
        self.frozen.extend(names);
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        !self.frozen.contains(name)
    }

    /// Copies every parameter of `other` whose name and shape match; returns
    /// how many were loaded.
    pub fn load_matching(&mut self, other: &ParamStore) -> usize {
        let mut n = 0;
        for (name, value) in &other.params {
            if let Some(slot) = self.params.get_mut(name) {
                if slot.shape() == value.shape() {
                    *slot = value.clone();
                    n += 1;
                }
            }
        }
        n
    }
}
