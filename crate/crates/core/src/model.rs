//! A small multilayer perceptron with explicit forward and backward passes.
//!
//! Dropout is applied after every hidden activation (never to the inputs or
//! the output layer) using inverted scaling. Each training-mode forward pass
//! samples fresh masks and records them in the [`ForwardTrace`], which is
//! everything the backward pass needs to be exact for that pass.
//!
//! Parameters live in a single [`ParamSet`] ordered
//! `layer0.weight, layer0.bias, layer1.weight, ...`; weights are
//! `[fan_in × fan_out]` so a layer computes `x · W + b`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, TensorRecord};
use crate::dropout::{apply_inverted_dropout, sample_dropout_mask, DropoutMask};
use crate::error::{Error, Result};
use crate::loss::{LossFn, Targets};
use crate::params::ParamSet;
use crate::rng::RngStream;
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
}

/// Architecture description used to build a freshly initialized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub keep_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<LayerShape>,
    keep_probs: Vec<f64>,
    params: ParamSet,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer (the batch for layer 0, post-dropout activations after).
    pub layer_inputs: Vec<Tensor>,
    /// Pre-activation of each layer.
    pub pre_activations: Vec<Tensor>,
    /// One mask per hidden layer.
    pub masks: Vec<DropoutMask>,
}

fn weight_name(i: usize) -> String {
    format!("layer{i}.weight")
}

fn bias_name(i: usize) -> String {
    format!("layer{i}.bias")
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new(spec: &MlpSpec, rng: &mut RngStream) -> Result<Self> {
        if spec.input_dim == 0 || spec.output_dim == 0 || spec.hidden.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut dims = vec![spec.input_dim];
        dims.extend(&spec.hidden);
        dims.push(spec.output_dim);
        let n_layers = dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        let mut params = ParamSet::new();
        for i in 0..n_layers {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let activation = if i + 1 == n_layers {
                Activation::Identity
            } else {
                spec.hidden_activation
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.uniform_range(-limit, limit))
                .collect();
            params.push(weight_name(i), Tensor::new(vec![fan_in, fan_out], w)?)?;
            params.push(bias_name(i), Tensor::zeros(&[fan_out])?)?;
            layers.push(LayerShape {
                fan_in,
                fan_out,
                activation,
            });
        }
        Self::from_parts(layers, vec![spec.keep_prob; n_layers - 1], params)
    }

    /// Build from explicit `(weight, bias, activation)` triples.
    pub fn from_layers(layers: Vec<(Tensor, Tensor, Activation)>, keep_probs: Vec<f64>) -> Result<Self> {
        let mut shapes = Vec::new();
        let mut params = ParamSet::new();
        for (i, (w, b, activation)) in layers.into_iter().enumerate() {
            let (fan_in, fan_out) = w.dims2()?;
            params.push(weight_name(i), w)?;
            params.push(bias_name(i), b)?;
            shapes.push(LayerShape {
                fan_in,
                fan_out,
                activation,
            });
        }
        Self::from_parts(shapes, keep_probs, params)
    }

    fn from_parts(layers: Vec<LayerShape>, keep_probs: Vec<f64>, params: ParamSet) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("model needs at least one layer"));
        }
        if keep_probs.len() != layers.len() - 1 {
            return Err(Error::invalid(format!(
                "{} keep probabilities for {} hidden layers",
                keep_probs.len(),
                layers.len() - 1
            )));
        }
        if let Some(p) = keep_probs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::invalid(format!("keep probability {p} outside (0, 1]")));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out != pair[1].fan_in {
                return Err(Error::shape(format!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].fan_out, pair[1].fan_in
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            let w = params.tensor(2 * i);
            let b = params.tensor(2 * i + 1);
            if w.shape() != [l.fan_in, l.fan_out] || b.shape() != [l.fan_out] {
                return Err(Error::shape(format!("layer {i} parameter shapes")));
            }
        }
        Ok(MlpModel {
            layers,
            keep_probs,
            params,
        })
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn keep_probs(&self) -> &[f64] {
        &self.keep_probs
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Values may change; the layout may not.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    /// Training mode samples a fresh mask per hidden layer from `rng`; eval
    /// mode uses all-ones masks and leaves `rng` untouched.
    pub fn forward(&self, x: &Tensor, rng: &mut RngStream, train: bool) -> Result<(Tensor, ForwardTrace)> {
        if train {
            self.forward_train(x, rng)
        } else {
            self.forward_eval(x)
        }
    }

    pub fn forward_train(&self, x: &Tensor, rng: &mut RngStream) -> Result<(Tensor, ForwardTrace)> {
        let (rows, _) = x.dims2()?;
        let masks = self.layers[..self.layers.len() - 1]
            .iter()
            .zip(&self.keep_probs)
            .map(|(l, &p)| sample_dropout_mask(rng, &[rows, l.fan_out], p))
            .collect::<Result<Vec<_>>>()?;
        self.forward_with_masks(x, masks)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<(Tensor, ForwardTrace)> {
        let (rows, _) = x.dims2()?;
        let masks = self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| DropoutMask::keep_all(&[rows, l.fan_out]))
            .collect::<Result<Vec<_>>>()?;
        self.forward_with_masks(x, masks)
    }

    /// Forward pass with caller-supplied dropout masks (one per hidden layer).
    pub fn forward_with_masks(&self, x: &Tensor, masks: Vec<DropoutMask>) -> Result<(Tensor, ForwardTrace)> {
        let (rows, cols) = x.dims2()?;
        if cols != self.input_dim() {
            return Err(Error::shape(format!(
                "input has {cols} features, model expects {}",
                self.input_dim()
            )));
        }
        if masks.len() != self.layers.len() - 1 {
            return Err(Error::shape("one dropout mask per hidden layer required"));
        }
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let w = self.params.tensor(2 * i);
            let b = self.params.tensor(2 * i + 1).data();
            let mut z = matmul(&current, w)?;
            for r in 0..rows {
                for (v, bv) in z.data_mut()[r * layer.fan_out..(r + 1) * layer.fan_out]
                    .iter_mut()
                    .zip(b)
                {
                    *v += bv;
                }
            }
            let a = z.map(|v| layer.activation.apply(v));
            layer_inputs.push(std::mem::replace(&mut current, a));
            pre_activations.push(z);
            if let Some(mask) = masks.get(i) {
                current = apply_inverted_dropout(&current, mask)?;
            }
        }
        if !current.is_finite() {
            return Err(Error::NumericOverflow("non-finite logits".into()));
        }
        Ok((
            current,
            ForwardTrace {
                layer_inputs,
                pre_activations,
                masks,
            },
        ))
    }

    /// Mean-over-batch loss and its exact gradient for the pass recorded in
    /// `trace`.
    pub fn loss_and_grad(
        &self,
        trace: &ForwardTrace,
        logits: &Tensor,
        targets: &Targets,
        loss: LossFn,
    ) -> Result<(f64, ParamSet)> {
        let (value, mut upstream) = loss.value_and_grad(logits, targets)?;
        let mut grads = self.params.zeros_like();
        for i in (0..self.layers.len()).rev() {
            let layer = self.layers[i];
            let z = &trace.pre_activations[i];
            let dz = upstream.zip_map(z, |g, zv| g * layer.activation.derivative(zv))?;
            let dw = matmul_tn(&trace.layer_inputs[i], &dz)?;
            grads.tensor_mut(2 * i).data_mut().copy_from_slice(dw.data());
            let db = grads.tensor_mut(2 * i + 1).data_mut();
            for r in 0..dz.dims2()?.0 {
                for (d, g) in db.iter_mut().zip(dz.row(r)) {
                    *d += g;
                }
            }
            if i > 0 {
                let da = matmul_nt(&dz, self.params.tensor(2 * i))?;
                let mask = &trace.masks[i - 1];
                upstream = da;
                for (j, v) in upstream.data_mut().iter_mut().enumerate() {
                    *v *= mask.scale_at(j);
                }
            }
        }
        Ok((value, grads))
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            layers: self.layers.clone(),
            keep_probs: self.keep_probs.clone(),
            params: checkpoint::to_records(&self.params),
        }
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        Self::from_parts(
            ckpt.layers.clone(),
            ckpt.keep_probs.clone(),
            checkpoint::from_records(&ckpt.params)?,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_json(&self.to_checkpoint(), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&checkpoint::load_json(path)?)
    }
}

/// On-disk model layout: architecture plus named row-major tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub layers: Vec<LayerShape>,
    pub keep_probs: Vec<f64>,
    pub params: Vec<TensorRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(r: usize, c: usize, v: &[f64]) -> Tensor {
        Tensor::new(vec![r, c], v.to_vec()).unwrap()
    }

    #[test]
    fn hand_linear_map() {
        let m = MlpModel::from_layers(
            vec![(
                t2(2, 1, &[1.0, 1.0]),
                Tensor::zeros(&[1]).unwrap(),
                Activation::Identity,
            )],
            vec![],
        )
        .unwrap();
        let (y, _) = m.forward_eval(&t2(1, 2, &[2.0, 3.0])).unwrap();
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn mse_hand_gradient() {
        let m = MlpModel::from_layers(
            vec![(t2(1, 1, &[1.0]), Tensor::zeros(&[1]).unwrap(), Activation::Identity)],
            vec![],
        )
        .unwrap();
        let x = t2(1, 1, &[1.0]);
        let (y, tr) = m.forward_eval(&x).unwrap();
        let (l, g) = m
            .loss_and_grad(&tr, &y, &Targets::Values(vec![0.0]), LossFn::MeanSquaredError)
            .unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g.get("layer0.weight").unwrap().data(), &[2.0]);
        assert_eq!(g.get("layer0.bias").unwrap().data(), &[2.0]);
    }

    #[test]
    fn zero_network_cross_entropy() {
        let m = MlpModel::from_layers(
            vec![
                (
                    Tensor::zeros(&[3, 4]).unwrap(),
                    Tensor::zeros(&[4]).unwrap(),
                    Activation::Tanh,
                ),
                (
                    Tensor::zeros(&[4, 2]).unwrap(),
                    Tensor::zeros(&[2]).unwrap(),
                    Activation::Identity,
                ),
            ],
            vec![1.0],
        )
        .unwrap();
        let x = t2(1, 3, &[0.3, -1.0, 2.0]);
        let (y, tr) = m.forward_eval(&x).unwrap();
        let (l, g) = m
            .loss_and_grad(&tr, &y, &Targets::Classes(vec![1]), LossFn::SoftmaxCrossEntropy)
            .unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert_eq!(g.get("layer1.bias").unwrap().data(), &[0.5, -0.5]);
    }

    #[test]
    fn eval_is_pure() {
        let spec = MlpSpec {
            input_dim: 3,
            hidden: vec![8],
            output_dim: 2,
            hidden_activation: Activation::Relu,
            keep_prob: 0.5,
        };
        let m = MlpModel::new(&spec, &mut RngStream::new(0)).unwrap();
        let x = t2(2, 3, &[0.1, 0.2, 0.3, -1.0, 0.0, 1.0]);
        let mut rng = RngStream::new(5);
        let (a, _) = m.forward(&x, &mut rng, false).unwrap();
        let (b, _) = m.forward(&x, &mut rng, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(rng.position(), 0);
    }

    #[test]
    fn train_mode_masks_differ() {
        // Two independent 32-unit masks coincide with probability 2^-32.
        let spec = MlpSpec {
            input_dim: 4,
            hidden: vec![32],
            output_dim: 2,
            hidden_activation: Activation::Tanh,
            keep_prob: 0.5,
        };
        let m = MlpModel::new(&spec, &mut RngStream::new(3)).unwrap();
        let x = t2(1, 4, &[0.5, -0.2, 0.9, 1.1]);
        let mut rng = RngStream::new(17);
        let (a, ta) = m.forward_train(&x, &mut rng).unwrap();
        let (b, tb) = m.forward_train(&x, &mut rng).unwrap();
        assert_ne!(ta.masks[0], tb.masks[0]);
        assert_ne!(a, b);
    }

    #[test]
    fn dimension_mismatch() {
        let spec = MlpSpec {
            input_dim: 3,
            hidden: vec![],
            output_dim: 2,
            hidden_activation: Activation::Relu,
            keep_prob: 1.0,
        };
        let m = MlpModel::new(&spec, &mut RngStream::new(0)).unwrap();
        assert!(m.forward_eval(&t2(1, 2, &[1.0, 2.0])).is_err());
    }

    #[test]
    fn layers_must_chain() {
        let r = MlpModel::from_layers(
            vec![
                (
                    Tensor::zeros(&[2, 3]).unwrap(),
                    Tensor::zeros(&[3]).unwrap(),
                    Activation::Relu,
                ),
                (
                    Tensor::zeros(&[4, 1]).unwrap(),
                    Tensor::zeros(&[1]).unwrap(),
                    Activation::Identity,
                ),
            ],
            vec![1.0],
        );
        assert!(r.is_err());
    }

    #[test]
    fn glorot_bounds() {
        let spec = MlpSpec {
            input_dim: 10,
            hidden: vec![20],
            output_dim: 2,
            hidden_activation: Activation::Relu,
            keep_prob: 0.9,
        };
        let m = MlpModel::new(&spec, &mut RngStream::new(1)).unwrap();
        let lim = (6.0f64 / 30.0).sqrt();
        assert!(m.params().tensor(0).data().iter().all(|w| w.abs() <= lim));
        assert!(m.params().tensor(1).data().iter().all(|&b| b == 0.0));
        assert_eq!(m.num_params(), 10 * 20 + 20 + 20 * 2 + 2);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let spec = MlpSpec {
            input_dim: 2,
            hidden: vec![3],
            output_dim: 2,
            hidden_activation: Activation::Tanh,
            keep_prob: 0.9,
        };
        let m = MlpModel::new(&spec, &mut RngStream::new(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        assert_eq!(MlpModel::load(&path).unwrap(), m);
    }
}
