//! Dense real tensors and ordered, name-indexed collections of them.
//!
//! A [`ParamSet`] holds model parameters and a [`GradSet`] holds gradients
//! with the identical layout. Both are the same [`NamedTensors`] type; the
//! aliases only document intent at call sites.

use crate::error::{Error, Result};

/// Row-major n-dimensional array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Euclidean norm of the flattened tensor.
    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Ordered list of uniquely named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NamedTensors {
    entries: Vec<(String, Tensor)>,
}

/// Model parameters.
pub type ParamSet = NamedTensors;
/// Gradients, mirroring a [`ParamSet`] entry for entry.
pub type GradSet = NamedTensors;

impl NamedTensors {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::param(format!("duplicate tensor name '{name}'")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
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

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.entries[idx].1
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.entries[idx].1
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Same names, same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        NamedTensors {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// True when `other` has the same names and shapes in the same order.
    pub fn same_layout(&self, other: &NamedTensors) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }

    /// `self += factor * other`. Layouts must match.
    pub fn add_scaled(&mut self, other: &NamedTensors, factor: f64) {
        debug_assert!(self.same_layout(other));
        for ((_, dst), (_, src)) in self.entries.iter_mut().zip(&other.entries) {
            for (d, s) in dst.data.iter_mut().zip(&src.data) {
                *d += factor * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.entries.iter_mut().for_each(|(_, t)| t.scale(factor));
    }

    /// Per-tensor Euclidean norms in entry order.
    pub fn norms(&self) -> Vec<f64> {
        self.entries.iter().map(|(_, t)| t.norm_l2()).collect()
    }

    /// Norm of all entries concatenated into one vector.
    pub fn global_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|(_, t)| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, t)| !t.is_finite())
            .map(|(n, _)| n.as_str())
    }

    /// Mutable data slices of every entry, in entry order.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.entries
            .iter_mut()
            .map(|(_, t)| t.data.as_mut_slice())
            .collect()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut set = NamedTensors::new();
        set.push("w", Tensor::zeros(&[2])).unwrap();
        assert!(set.push("w", Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::from_vec(&[2, 2], vec![3.0, 0.0, 0.0, 4.0]).unwrap();
        assert_eq!(t.norm_l2(), 5.0);
    }

    #[test]
    fn global_norm_spans_entries() {
        let mut set = NamedTensors::new();
        set.push("a", Tensor::from_vec(&[1], vec![3.0]).unwrap())
            .unwrap();
        set.push("b", Tensor::from_vec(&[1], vec![4.0]).unwrap())
            .unwrap();
        assert_eq!(set.global_norm(), 5.0);
        assert_eq!(set.norms(), vec![3.0, 4.0]);
    }
}
