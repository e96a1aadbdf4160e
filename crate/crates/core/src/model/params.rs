use std::collections::BTreeMap;

use vfs_tensor::{Element, Graph, Tensor, Var};

use crate::error::{Error, Result};

/// Ordered, named tensors. Order is insertion order and defines the
/// correspondence between online, target and optimizer tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensors<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Element> Default for NamedTensors<T> {
    fn default() -> Self {
        NamedTensors {
            names: Vec::new(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }
}

impl<T: Element> NamedTensors<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.tensors[i] = t,
            None => {
                self.index.insert(name.clone(), self.names.len());
                self.names.push(name);
                self.tensors.push(t);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::Contract(format!("missing tensor {}", name)))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Element>(&self) -> NamedTensors<U> {
        let mut out = NamedTensors::new();
        for (n, t) in self.iter() {
            out.insert(n, t.cast());
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = NamedTensors::new();
        for (n, t) in self.iter() {
            out.insert(n, Tensor::zeros(t.shape().to_vec()));
        }
        out
    }

    /// Same names in the same order with the same shapes.
    pub fn congruent(&self, other: &Self) -> bool {
        self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.shape() == b.shape())
    }
}

/// Graph handles for a [`NamedTensors`] set.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
    order: Vec<Var>,
}

impl Bound {
    /// Registers every tensor as a leaf, trainable or constant.
    pub fn bind<T: Element>(g: &mut Graph<T>, set: &NamedTensors<T>, trainable: bool) -> Bound {
        let mut vars = BTreeMap::new();
        let mut order = Vec::with_capacity(set.len());
        for (name, t) in set.iter() {
            let v = if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            };
            vars.insert(name.to_string(), v);
            order.push(v);
        }
        Bound { vars, order }
    }

    pub fn from_vars(names: &[String], vars: &[Var]) -> Bound {
        Bound {
            vars: names.iter().cloned().zip(vars.iter().copied()).collect(),
            order: vars.to_vec(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter {} is not bound", name)))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    /// Vars in the order of the bound set.
    pub fn order(&self) -> &[Var] {
        &self.order
    }
}
