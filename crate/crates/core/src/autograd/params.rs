use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named learnable tensors, keyed by hierarchical dotted names such as
/// `encoder.stage2.block0.pw1.weight`.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn census(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Scalar count of every parameter whose name starts with `prefix`.
    pub fn census_prefix(&self, prefix: &str) -> usize {
        self.index
            .range(prefix.to_string()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(_, &id)| self.values[id.0].len())
            .sum()
    }

    /// Zero every parameter whose name starts with `prefix`; returns how
    /// many tensors were touched.
    pub fn zero_prefix(&mut self, prefix: &str) -> usize {
        let ids: Vec<ParamId> = self
            .index
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, &id)| id)
            .collect();
        for &id in &ids {
            self.values[id.0].data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        ids.len()
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Overwrite values from a name → tensor map; every stored parameter
    /// must be present with a matching shape.
    pub fn load(&mut self, mut values: BTreeMap<String, Tensor>) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let v = values
                .remove(name)
                .ok_or_else(|| Error::Config(format!("checkpoint is missing parameter {name}")))?;
            if v.shape() != self.values[i].shape() {
                return Err(Error::Shape(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    v.shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = v;
        }
        if let Some(extra) = values.keys().next() {
            return Err(Error::Config(format!("checkpoint has unknown parameter {extra}")));
        }
        Ok(())
    }
}

/// Parameter factory that prefixes names and draws initial values.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: &str) -> Init<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Init {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn tensor(&mut self, name: &str, value: Tensor) -> ParamId {
        let full = self.full_name(name);
        self.store.add(full, value)
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        self.store.get_mut(id)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.tensor(name, Tensor::full(shape, value))
    }

    /// Gaussian values with the given standard deviation.
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut *self.rng);
                z * std
            })
            .collect();
        self.tensor(name, Tensor::new(shape, data).expect("shape"))
    }

    /// Uniform values in `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.tensor(name, Tensor::new(shape, data).expect("shape"))
    }
}
