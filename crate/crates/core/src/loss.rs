use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-example supervision for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    /// Integer class labels, one per row.
    Classes(Vec<usize>),
    /// Real targets, row-major `[rows × outputs]`.
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(rows.iter().map(|&i| c[i]).collect()),
            Targets::Values(v) => Targets::Values(rows.iter().map(|&i| v[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossFn {
    SoftmaxCrossEntropy,
    MeanSquaredError,
}

impl LossFn {
    /// Mean-over-batch loss and its gradient with respect to the logits.
    ///
    /// Cross-entropy: `mean_b(logsumexp(z_b) - z_b[y_b])`.
    /// Squared error: `mean_b Σ_o (z_bo - t_bo)²`, so `d/dz = 2 (z - t) / B`.
    pub fn value_and_grad(&self, logits: &Tensor, targets: &Targets) -> Result<(f64, Tensor)> {
        let (rows, cols) = logits.dims2()?;
        let scale = 1.0 / rows as f64;
        let mut grad = logits.zeros_like();
        let mut total = 0.0;
        match (self, targets) {
            (LossFn::SoftmaxCrossEntropy, Targets::Classes(labels)) => {
                if labels.len() != rows {
                    return Err(Error::shape(format!("{} labels for {rows} rows", labels.len())));
                }
                for (b, &y) in labels.iter().enumerate() {
                    if y >= cols {
                        return Err(Error::ClassOutOfRange {
                            label: y,
                            classes: cols,
                        });
                    }
                    let z = logits.row(b);
                    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
                    let lse = max + sum.ln();
                    total += lse - z[y];
                    let g = &mut grad.data_mut()[b * cols..(b + 1) * cols];
                    for (o, gv) in g.iter_mut().enumerate() {
                        let p = (z[o] - lse).exp();
                        let onehot = if o == y { 1.0 } else { 0.0 };
                        *gv = (p - onehot) * scale;
                    }
                }
            }
            (LossFn::MeanSquaredError, Targets::Values(t)) => {
                if t.len() != rows * cols {
                    return Err(Error::shape(format!("{} targets for {rows}x{cols} outputs", t.len())));
                }
                for ((g, &z), &tv) in grad.data_mut().iter_mut().zip(logits.data()).zip(t) {
                    let d = z - tv;
                    total += d * d;
                    *g = 2.0 * d * scale;
                }
            }
            (LossFn::SoftmaxCrossEntropy, Targets::Values(_)) => {
                return Err(Error::invalid("cross-entropy needs class targets"))
            }
            (LossFn::MeanSquaredError, Targets::Classes(_)) => {
                return Err(Error::invalid("squared error needs real targets"))
            }
        }
        let loss = total * scale;
        if !loss.is_finite() {
            return Err(Error::NumericOverflow(format!("loss is {loss}")));
        }
        Ok((loss, grad))
    }
}
