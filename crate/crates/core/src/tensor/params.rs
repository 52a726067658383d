use std::collections::HashMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::{checkpoint, Element, Grads, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Optimized by gradient descent.
    Weight,
    /// Non-differentiable state such as batch-norm running statistics.
    Buffer,
}

/// Ordered, named collection of model tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T: Element = f32> {
    entries: Vec<(String, Kind, Tensor<T>)>,
    index: HashMap<String, usize>,
}

/// Tape handles for every entry of a [`ParamSet`], in entry order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    names: HashMap<String, usize>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        match self.names.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("parameter {name} is not bound"),
        }
    }
}

impl<T: Element> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn insert(&mut self, name: &str, kind: Kind, tensor: Tensor<T>) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), kind, tensor));
    }

    pub fn add_weight(&mut self, name: &str, tensor: Tensor<T>) {
        self.insert(name, Kind::Weight, tensor.trainable());
    }

    pub fn add_buffer(&mut self, name: &str, mut tensor: Tensor<T>) {
        tensor.requires_grad = false;
        self.insert(name, Kind::Buffer, tensor);
    }

    /// He-uniform weight of the given shape, limits `±sqrt(6 / fan_in)`.
    pub fn add_he_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut impl Rng) {
        self.add_uniform(name, shape, (6.0 / fan_in as f64).sqrt(), rng);
    }

    /// Weight drawn from `U(-limit, limit)`.
    pub fn add_uniform(&mut self, name: &str, shape: &[usize], limit: f64, rng: &mut impl Rng) {
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| T::from_f64(rng.random_range(-limit..limit))).collect();
        self.add_weight(name, Tensor::new(shape.to_vec(), data).expect("valid init shape"));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].2)
            .ok_or_else(|| Error::param(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].2),
            None => Err(Error::param(format!("unknown parameter {name}"))),
        }
    }

    /// Mutable access to two distinct entries at once.
    pub fn pair_mut(&mut self, a: &str, b: &str) -> Result<(&mut Tensor<T>, &mut Tensor<T>)> {
        let ia = *self.index.get(a).ok_or_else(|| Error::param(format!("unknown parameter {a}")))?;
        let ib = *self.index.get(b).ok_or_else(|| Error::param(format!("unknown parameter {b}")))?;
        assert_ne!(ia, ib, "pair_mut needs two distinct entries");
        if ia < ib {
            let (lo, hi) = self.entries.split_at_mut(ib);
            Ok((&mut lo[ia].2, &mut hi[0].2))
        } else {
            let (lo, hi) = self.entries.split_at_mut(ia);
            Ok((&mut hi[0].2, &mut lo[ib].2))
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Kind, &Tensor<T>)> {
        self.entries.iter().map(|(n, k, t)| (n.as_str(), *k, t))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, Kind, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, k, t)| (n.as_str(), *k, t))
    }

    pub fn num_weights(&self) -> usize {
        self.entries
            .iter()
            .filter(|(_, k, _)| *k == Kind::Weight)
            .map(|(_, _, t)| t.numel())
            .sum()
    }

    /// Enables or disables gradient tracking for every weight.
    pub fn set_trainable(&mut self, trainable: bool) {
        for (_, kind, t) in &mut self.entries {
            if *kind == Kind::Weight {
                t.requires_grad = trainable;
                if !trainable {
                    t.clear_grad();
                }
            }
        }
    }

    /// Records every entry on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        let vars = self.entries.iter().map(|(_, _, t)| tape.leaf(t.clone())).collect();
        let names = self.index.clone();
        Bound { vars, names }
    }

    /// Adds the gradients of one backward pass into the per-weight stores.
    pub fn accumulate(&mut self, grads: &Grads<T>, bound: &Bound) -> Result<()> {
        for ((_, kind, t), &v) in self.entries.iter_mut().zip(&bound.vars) {
            if *kind != Kind::Weight || !t.requires_grad {
                continue;
            }
            if let Some(g) = grads.get(v) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for (_, _, t) in &mut self.entries {
            t.zero_grad();
        }
    }

    /// Copies values by name from `other`; every name of `self` must be present.
    pub fn load_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        for (name, _, t) in &mut self.entries {
            let src = other.get(name)?;
            if src.shape() != t.shape() {
                return Err(Error::shape(format!(
                    "parameter {name}: stored shape {:?} but model expects {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Overwrites values from checkpoint records.
    pub fn load_records(&mut self, records: &[checkpoint::Record]) -> Result<()> {
        let mut seen = 0;
        for rec in records {
            let Some(&i) = self.index.get(&rec.name) else {
                return Err(Error::Format(format!("checkpoint holds unknown parameter {}", rec.name)));
            };
            let t = &mut self.entries[i].2;
            if rec.shape != t.shape() {
                return Err(Error::Format(format!(
                    "parameter {}: checkpoint shape {:?} but model expects {:?}",
                    rec.name,
                    rec.shape,
                    t.shape()
                )));
            }
            for (dst, &v) in t.data_mut().iter_mut().zip(&rec.values) {
                *dst = T::from_f64(v as f64);
            }
            seen += 1;
        }
        if seen != self.entries.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {seen} of {} parameters",
                self.entries.len()
            )));
        }
        Ok(())
    }

    pub fn to_records(&self) -> Vec<checkpoint::Record> {
        self.entries
            .iter()
            .map(|(name, _, t)| checkpoint::Record {
                name: name.clone(),
                shape: t.shape().to_vec(),
                values: t.data().iter().map(|v| v.to_f64() as f32).collect(),
            })
            .collect()
    }

    /// Entries whose name starts with `prefix`, in order.
    pub fn subset(&self, prefix: &str) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for (name, kind, t) in &self.entries {
            if name.starts_with(prefix) {
                let mut t = t.clone();
                t.clear_grad();
                out.insert(name, *kind, t);
            }
        }
        out
    }

    /// SHA-256 over the serialized checkpoint bytes.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(checkpoint::encode(&self.to_records())))
    }

    /// Largest absolute elementwise difference to `other` (same layout required).
    pub fn max_abs_diff(&self, other: &ParamSet<T>) -> Result<f64> {
        let mut worst = 0.0f64;
        for (name, _, t) in &self.entries {
            let o = other.get(name)?;
            if o.shape() != t.shape() {
                return Err(Error::shape(format!("parameter {name} differs in shape")));
            }
            for (a, b) in t.data().iter().zip(o.data()) {
                worst = worst.max((a.to_f64() - b.to_f64()).abs());
            }
        }
        Ok(worst)
    }

    pub fn cast<U: Element>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for (name, kind, t) in &self.entries {
            out.insert(name, *kind, t.cast());
        }
        out
    }
}
