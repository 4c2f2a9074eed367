//! Bernoulli keep-masks and inverted dropout.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    keep_prob: f64,
    mask: Tensor,
}

impl DropoutMask {
    /// All-ones mask, used in eval mode.
    pub fn keep_all(shape: &[usize]) -> Result<Self> {
        Ok(DropoutMask {
            keep_prob: 1.0,
            mask: Tensor::full(shape, 1.0)?,
        })
    }

    pub fn from_tensor(mask: Tensor, keep_prob: f64) -> Result<Self> {
        check_keep_prob(keep_prob)?;
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("dropout mask entries must be 0 or 1"));
        }
        Ok(DropoutMask { keep_prob, mask })
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    pub fn ones(&self) -> usize {
        self.mask.data().iter().filter(|&&v| v == 1.0).count()
    }

    /// Multiplier applied to each position: `mask / keep_prob`.
    pub fn scale_at(&self, i: usize) -> f64 {
        self.mask.data()[i] / self.keep_prob
    }
}

fn check_keep_prob(keep_prob: f64) -> Result<()> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::invalid(format!(
            "keep probability must be in (0, 1], got {keep_prob}"
        )));
    }
    Ok(())
}

/// Each entry is independently 1 with probability `keep_prob`. Consumes one
/// word from `rng` per entry, including when `keep_prob == 1`.
pub fn sample_dropout_mask(rng: &mut RngStream, shape: &[usize], keep_prob: f64) -> Result<DropoutMask> {
    check_keep_prob(keep_prob)?;
    let mut mask = Tensor::zeros(shape)?;
    for v in mask.data_mut() {
        *v = if rng.uniform() < keep_prob { 1.0 } else { 0.0 };
    }
    Ok(DropoutMask { keep_prob, mask })
}

/// `x · mask / keep_prob`
pub fn apply_inverted_dropout(x: &Tensor, mask: &DropoutMask) -> Result<Tensor> {
    x.same_shape(&mask.mask)?;
    if mask.keep_prob == 1.0 {
        return x.zip_map(&mask.mask, |a, m| a * m);
    }
    x.zip_map(&mask.mask, |a, m| a * m / mask.keep_prob)
}
