//! Evaluation metrics: accuracy, binary F1 and Matthews correlation for
//! classification (class 1 is the positive class), squared error for
//! regression.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{LossFn, Targets};
use crate::model::MlpModel;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryConfusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl BinaryConfusion {
    /// Counts with `positive` as the positive class, every other class negative.
    pub fn from_predictions(truth: &[usize], predicted: &[usize], positive: usize) -> Self {
        let mut c = BinaryConfusion::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t == positive, p == positive) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }

    /// Zero when any marginal is empty.
    pub fn mcc(&self) -> f64 {
        let (tp, tn, fp, fn_) = (self.tp as f64, self.tn as f64, self.fp as f64, self.fn_ as f64);
        let denom = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        if denom == 0.0 {
            0.0
        } else {
            (tp * tn - fp * fn_) / denom
        }
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let denom = self.tp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            self.tp as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub mcc: Option<f64>,
    /// Accuracy restricted to rows whose true label is class 1.
    pub positive_recall: Option<f64>,
    pub mse: Option<f64>,
}

impl MetricRecord {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "loss" => Some(self.loss),
            "accuracy" => self.accuracy,
            "f1" => self.f1,
            "mcc" => self.mcc,
            "positive_recall" => self.positive_recall,
            "mse" => self.mse,
            _ => None,
        }
    }

    pub const NAMES: [&'static str; 6] = ["loss", "accuracy", "f1", "mcc", "positive_recall", "mse"];
}

pub fn argmax_rows(logits: &Tensor) -> Result<Vec<usize>> {
    let (rows, _) = logits.dims2()?;
    Ok((0..rows)
        .map(|r| {
            logits
                .row(r)
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                )
                .0
        })
        .collect())
}

pub fn classification_metrics(truth: &[usize], predicted: &[usize], loss: f64) -> Result<MetricRecord> {
    if truth.is_empty() {
        return Err(Error::Empty("no rows to score".into()));
    }
    let correct = truth.iter().zip(predicted).filter(|(t, p)| t == p).count();
    let c = BinaryConfusion::from_predictions(truth, predicted, 1);
    Ok(MetricRecord {
        loss,
        accuracy: Some(correct as f64 / truth.len() as f64),
        f1: Some(c.f1()),
        mcc: Some(c.mcc()),
        positive_recall: Some(c.recall()),
        mse: None,
    })
}

/// Eval-mode metrics over a whole split; never touches any RNG.
pub fn predict_metrics(model: &MlpModel, data: &Dataset) -> Result<MetricRecord> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation split".into()));
    }
    let (logits, _) = model.forward_eval(data.features())?;
    match data.targets() {
        Targets::Classes(labels) => {
            let (loss, _) = LossFn::SoftmaxCrossEntropy.value_and_grad(&logits, data.targets())?;
            classification_metrics(labels, &argmax_rows(&logits)?, loss)
        }
        Targets::Values(_) => {
            let (loss, _) = LossFn::MeanSquaredError.value_and_grad(&logits, data.targets())?;
            let n = logits.len() as f64;
            let rows = logits.dims2()?.0 as f64;
            Ok(MetricRecord {
                loss,
                mse: Some(loss * rows / n),
                ..Default::default()
            })
        }
    }
}
