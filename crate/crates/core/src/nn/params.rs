use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ordered name → tensor map plus string metadata.
///
/// `Params<f64>` ([`ParamStore`]) holds network weights; the same type
/// carries gradients and optimizer moments, which share the weights' names
/// and shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T = f64> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: BTreeMap<String, usize>,
    pub meta: BTreeMap<String, String>,
}

pub type ParamStore = Params<f64>;

impl<T: Scalar> Default for Params<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        if self.index.contains_key(name) {
            bail!(Config, "duplicate parameter name `{name}`");
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        match self.index.get(name) {
            Some(&i) => Ok(&self.tensors[i]),
            None => bail!(Config, "missing parameter `{name}`"),
        }
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.tensors[i]),
            None => bail!(Config, "missing parameter `{name}`"),
        }
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    /// Total number of scalar entries.
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U + Copy) -> Params<U> {
        Params {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.map(f)).collect(),
            index: self.index.clone(),
            meta: self.meta.clone(),
        }
    }

    /// Same names and shapes, all zeros, no metadata.
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            index: self.index.clone(),
            meta: BTreeMap::new(),
        }
    }

    /// Adds `t` into the entry `name`, creating it when absent.
    pub fn accumulate(&mut self, name: &str, t: Tensor<T>) -> Result<()> {
        match self.index.get(name) {
            Some(&i) => {
                if self.tensors[i].shape() != t.shape() {
                    bail!(Shape, "gradient for `{name}` has shape {:?}, expected {:?}", t.shape(), self.tensors[i].shape());
                }
                self.tensors[i].add_assign(&t);
                Ok(())
            }
            None => self.insert(name, t),
        }
    }

    /// Ensures the same name set and shapes as `other`.
    pub fn check_layout<U: Scalar>(&self, other: &Params<U>) -> Result<()> {
        if self.names != other.names {
            bail!(Config, "parameter sets differ ({} vs {} tensors)", self.len(), other.len());
        }
        for ((n, a), b) in self.names.iter().zip(&self.tensors).zip(&other.tensors) {
            if a.shape() != b.shape() {
                bail!(Shape, "`{n}`: shape {:?} vs {:?}", a.shape(), b.shape());
            }
        }
        Ok(())
    }
}

impl Params<f64> {
    /// Gradients ordered like `layout`; absent entries become zeros.
    pub fn aligned_to(mut self, layout: &ParamStore) -> Result<Self> {
        let mut out = layout.zeros_like();
        for (name, t) in out.iter_mut() {
            if let Some(&i) = self.index.get(name) {
                let src = core::mem::replace(&mut self.tensors[i], Tensor::zeros(&[0]));
                if src.shape() != t.shape() {
                    bail!(Shape, "`{name}`: shape {:?} vs {:?}", src.shape(), t.shape());
                }
                *t = src;
            }
        }
        if self.names.iter().any(|n| !layout.contains(n)) {
            bail!(Config, "gradient names not present in the parameter layout");
        }
        Ok(out)
    }

    /// Hex SHA-256 over names, shapes and little-endian payloads.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            h.update([0u8]);
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// First tensor containing a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter().find(|(_, t)| !t.is_finite()).map(|(n, _)| n)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Short content hash of a canonical configuration string.
pub fn config_hash(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    hex(&digest[..8])
}
