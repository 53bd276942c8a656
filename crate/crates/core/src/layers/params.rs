use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// Named trainable tensors, ordered by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore<T> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name.to_string(), value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Number of named tensors.
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Scalar parameter count of every tensor whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Replaces every value with the one of the same name in `other`,
    /// checking names and shapes.
    pub fn assign_from(&mut self, other: &ParameterStore<T>) -> Result<()> {
        for (name, dst) in self.params.iter_mut() {
            let src = other.get(name).ok_or_else(|| Error::MissingParameter(name.clone()))?;
            if src.shape() != dst.shape() {
                return Err(crate::error::shape_err("assign", dst.shape(), src.shape()));
            }
            *dst = src.clone();
        }
        Ok(())
    }

    /// Adds every parameter to `g` as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self.params.iter().map(|(k, v)| (k.clone(), g.param(v.clone()))).collect(),
        }
    }

    /// Fills a parameter of the given shape from `U(-bound, bound)`.
    pub(crate) fn init_uniform<R: Rng>(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut R) -> Result<()> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n)
            .map(|_| if bound > 0.0 { T::of(rng.gen_range(-bound..bound)) } else { T::zero() })
            .collect();
        self.insert(name, Tensor::new(shape, data)?)
    }
}

/// Graph variables of a [`ParameterStore`] bound into one graph.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Accumulated gradients by name; parameters that received no gradient
    /// report zeros.
    pub fn grads<T: Real>(&self, g: &Graph<T>) -> BTreeMap<String, Vec<T>> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let grad = match g.grad(v) {
                    Some(d) => d.to_vec(),
                    None => alloc::vec![T::zero(); g.value(v).len()],
                };
                (k.clone(), grad)
            })
            .collect()
    }
}
