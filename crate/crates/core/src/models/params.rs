use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Gradients, Graph, NodeId, Real, Tensor};
use crate::error::{Error, Result};

/// Ordered set of named tensors belonging to one network.
///
/// Entries whose name ends in `.running_mean` or `.running_var` are
/// normalization buffers: they are saved and loaded with the network but
/// never optimized.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Default for NetworkParams<T> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

pub fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

impl<T: Real> NetworkParams<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut p = Self::new();
        for (name, t) in entries {
            p.insert(name, t)?;
        }
        Ok(p)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::config(format!("duplicate parameter `{name}`")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn expect(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn into_entries(self) -> Vec<(String, Tensor<T>)> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str()).filter(|n| !is_buffer(n))
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Bitwise equality of names, shapes and payloads.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    /// Adds every tensor to `graph`; trainable entries become parameter
    /// leaves when `trainable` is set, everything else becomes a constant.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> Bound {
        let ids = self
            .entries
            .iter()
            .map(|(name, t)| {
                if trainable && !is_buffer(name) {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        Bound {
            names: self.entries.iter().map(|(n, _)| n.clone()).collect(),
            ids,
        }
    }
}

/// Graph node ids of a bound [`NetworkParams`].
#[derive(Clone, Debug)]
pub struct Bound {
    names: Vec<String>,
    ids: Vec<NodeId>,
}

impl Bound {
    /// Binds `params` to nodes already in a graph, one id per entry in
    /// iteration order.
    pub fn from_ids<T: Real>(params: &NetworkParams<T>, ids: &[NodeId]) -> Result<Self> {
        if ids.len() != params.len() {
            return Err(Error::shape(format!("{} ids for {} parameters", ids.len(), params.len())));
        }
        Ok(Self {
            names: params.iter().map(|(n, _)| n.to_string()).collect(),
            ids: ids.to_vec(),
        })
    }

    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.ids[i])
            .ok_or_else(|| Error::config(format!("parameter `{name}` not bound")))
    }

    /// Collects gradients for every trainable entry under its name.
    pub fn gradients<T: Real>(&self, grads: &mut Gradients<T>) -> NetworkParams<T> {
        let entries = self
            .names
            .iter()
            .zip(&self.ids)
            .filter(|(n, _)| !is_buffer(n))
            .filter_map(|(n, id)| grads.take(*id).map(|g| (n.clone(), g)))
            .collect();
        NetworkParams { entries }
    }
}

/// Seeded source of initial weights.
pub(crate) struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Normal noise with std `sqrt(2 / fan_in)`.
    pub fn he<T: Real>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of_f64(normal.sample(&mut self.rng))).collect();
        Tensor::from_vec(shape.to_vec(), data).expect("shape product matches")
    }
}
