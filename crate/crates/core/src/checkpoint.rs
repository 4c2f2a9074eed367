//! JSON checkpoint layout shared by models and optimizer state.
//!
//! A tensor is stored as `{"name": ..., "shape": [...], "values": [...]}`
//! with values in row-major order.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn to_records(params: &ParamSet) -> Vec<TensorRecord> {
    params
        .iter()
        .map(|(name, t)| TensorRecord {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            values: t.data().to_vec(),
        })
        .collect()
}

pub fn from_records(records: &[TensorRecord]) -> Result<ParamSet> {
    let mut params = ParamSet::new();
    for r in records {
        params.push(r.name.clone(), Tensor::new(r.shape.clone(), r.values.clone())?)?;
    }
    Ok(params)
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
