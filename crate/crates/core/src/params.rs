//! Named, ordered collections of tensors.
//!
//! Parameters, gradients, moment estimates, selection scores and masks all
//! share this layout, so "ParamSet-shaped" in the rest of the crate means
//! "same names, same order, same shapes".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<NamedTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::invalid(format!("duplicate tensor name `{name}`")));
        }
        self.entries.push(NamedTensor { name, tensor });
        Ok(())
    }

    pub fn with(mut self, name: impl Into<String>, tensor: Tensor) -> Result<Self> {
        self.push(name, tensor)?;
        Ok(self)
    }

    /// Single flat tensor named `"x"`; handy for tests and the C ABI.
    pub fn single(values: Vec<f64>) -> Result<Self> {
        ParamSet::new().with("x", Tensor::from_vec(values)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn entries(&self) -> &[NamedTensor] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.tensor))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|e| &e.tensor)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|e| &mut e.tensor)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|e| e.name == name).map(|e| &mut e.tensor)
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.entries[i].tensor
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].tensor
    }

    /// Concatenation of all tensors in order.
    pub fn flat_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().flat_map(|e| e.tensor.data().iter().copied())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.flat_values().collect()
    }

    /// Overwrite every value from a flat buffer of length `numel()`.
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(Error::shape(format!(
                "flat buffer of {} for {} parameters",
                values.len(),
                self.numel()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_| 0.0)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| NamedTensor {
                    name: e.name.clone(),
                    tensor: e.tensor.map(&f),
                })
                .collect(),
        }
    }

    pub fn zip_map(&self, other: &ParamSet, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_layout(other)?;
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| {
                Ok(NamedTensor {
                    name: a.name.clone(),
                    tensor: a.tensor.zip_map(&b.tensor, &f)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ParamSet { entries })
    }

    /// Same names in the same order with the same shapes.
    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::shape(format!(
                "{} tensors vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::shape(format!(
                    "`{}` {:?} vs `{}` {:?}",
                    a.name,
                    a.tensor.shape(),
                    b.name,
                    b.tensor.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        self.flat_values().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &ParamSet) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self
            .flat_values()
            .zip(other.flat_values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.flat_values().all(f64::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_checks_names_and_shapes() {
        let a = ParamSet::new().with("w", Tensor::zeros(&[2, 2]).unwrap()).unwrap();
        let b = ParamSet::new().with("v", Tensor::zeros(&[2, 2]).unwrap()).unwrap();
        let c = ParamSet::new().with("w", Tensor::zeros(&[4]).unwrap()).unwrap();
        assert!(a.check_layout(&a.zeros_like()).is_ok());
        assert!(a.check_layout(&b).is_err());
        assert!(a.check_layout(&c).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let p = ParamSet::single(vec![1.0]).unwrap();
        assert!(p.with("x", Tensor::zeros(&[1]).unwrap()).is_err());
    }

    #[test]
    fn flat_roundtrip() {
        let mut p = ParamSet::new()
            .with("a", Tensor::zeros(&[2]).unwrap())
            .unwrap()
            .with("b", Tensor::zeros(&[1, 3]).unwrap())
            .unwrap();
        p.set_flat(&[1., 2., 3., 4., 5.]).unwrap();
        assert_eq!(p.to_flat(), vec![1., 2., 3., 4., 5.]);
        assert_eq!(p.get("b").unwrap().data(), &[3., 4., 5.]);
        assert!(p.set_flat(&[1.0]).is_err());
    }
}
