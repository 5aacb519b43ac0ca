//! Named parameter storage shared by the generator and discriminator.
//!
//! Parameters keep their construction order, which fixes both the
//! checkpoint layout and the digest. Names follow a dotted path scheme
//! (`map.0.weight`, `blocks.16.conv1.affine.bias`, ...) that freeze sets
//! and layer swapping match against by prefix.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn expect(&self, name: &str) -> &Tensor {
        self.get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let idx = *self
            .index
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))?;
        if self.entries[idx].1.shape() != tensor.shape() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {name}: {:?} vs {:?}",
                self.entries[idx].1.shape(),
                tensor.shape()
            )));
        }
        self.entries[idx].1 = tensor;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Names matching a prefix pattern.
    pub fn matching(&self, prefix: &str) -> Vec<&str> {
        self.entries
            .iter()
            .map(|(n, _)| n.as_str())
            .filter(|n| n.starts_with(prefix))
            .collect()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Same names, shapes and bit-identical values.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
    }

    /// Same names and shapes, values ignored.
    pub fn same_architecture(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_matching() {
        let mut p = ParamSet::new();
        p.insert("map.0.weight", Tensor::zeros(&[2, 2]));
        p.insert("map.0.bias", Tensor::zeros(&[2]));
        p.insert("blocks.8.conv0.weight", Tensor::zeros(&[1, 1, 3, 3]));
        assert_eq!(p.matching("map.").len(), 2);
        assert_eq!(p.matching("blocks.8.").len(), 1);
        assert!(p.matching("nope").is_empty());
    }

    #[test]
    fn set_checks_shape() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(&[2, 2]));
        assert!(p.set("w", Tensor::zeros(&[2, 3])).is_err());
        assert!(p.set("w", Tensor::full(&[2, 2], 1.0)).is_ok());
        assert_eq!(p.expect("w").data()[0], 1.0);
    }
}
