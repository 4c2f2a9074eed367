//! Masked parameter updates.
//!
//! [`masked_adam_step`] zeroes the unselected gradient entries *before* the
//! moment updates, so the moments of unselected parameters decay towards
//! zero instead of being frozen, and bias correction is always applied.
//! [`reference_adam_step`] is an independent unmasked Adam used as the
//! oracle for the all-ones case.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, TensorRecord};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::select::SubnetMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::invalid(format!("eps_adam must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    moments: Option<(ParamSet, ParamSet)>,
    t: u64,
}

impl AdamState {
    /// State without moment buffers; stepping it is an error.
    pub fn uninit(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            moments: None,
            t: 0,
        })
    }

    /// Zero moments shaped like `params`, `t = 0`.
    pub fn new(params: &ParamSet, config: AdamConfig) -> Result<Self> {
        let mut s = Self::uninit(config)?;
        s.moments = Some((params.zeros_like(), params.zeros_like()));
        Ok(s)
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> Option<&ParamSet> {
        self.moments.as_ref().map(|m| &m.0)
    }

    pub fn second_moment(&self) -> Option<&ParamSet> {
        self.moments.as_ref().map(|m| &m.1)
    }

    fn moments_for(&mut self, params: &ParamSet) -> Result<&mut (ParamSet, ParamSet)> {
        let moments = self.moments.as_mut().ok_or(Error::OptimizerUninitialized)?;
        moments.0.check_layout(params)?;
        Ok(moments)
    }

    pub fn to_checkpoint(&self) -> Result<OptimizerCheckpoint> {
        let (m, v) = self.moments.as_ref().ok_or(Error::OptimizerUninitialized)?;
        Ok(OptimizerCheckpoint {
            config: self.config,
            t: self.t,
            m: checkpoint::to_records(m),
            v: checkpoint::to_records(v),
        })
    }

    pub fn from_checkpoint(ckpt: &OptimizerCheckpoint) -> Result<Self> {
        let m = checkpoint::from_records(&ckpt.m)?;
        let v = checkpoint::from_records(&ckpt.v)?;
        m.check_layout(&v)?;
        let mut s = Self::uninit(ckpt.config)?;
        s.moments = Some((m, v));
        s.t = ckpt.t;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_json(&self.to_checkpoint()?, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&checkpoint::load_json(path)?)
    }
}

/// Optimizer state on disk: named `m`/`v` tensors plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerCheckpoint {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<TensorRecord>,
    pub v: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub step: u64,
    pub selected: usize,
    /// L2 norm of the applied change, per tensor.
    pub update_norms: Vec<(String, f64)>,
    pub masked_grad_norm: f64,
}

/// Adam on `grad ⊙ mask`.
pub fn masked_adam_step(
    params: &mut ParamSet,
    grad: &ParamSet,
    mask: &SubnetMask,
    state: &mut AdamState,
) -> Result<UpdateRecord> {
    params.check_layout(grad)?;
    params.check_layout(mask.as_params())?;
    let cfg = state.config;
    let t = state.t + 1;
    let (m, v) = state.moments_for(params)?;
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    let mut update_norms = Vec::with_capacity(params.len());
    let mut grad_sq = 0.0;
    for i in 0..params.len() {
        let g = grad.tensor(i).data();
        let keep = mask.as_params().tensor(i).data();
        let m = m.tensor_mut(i).data_mut();
        let v = v.tensor_mut(i).data_mut();
        let theta = params.tensor_mut(i).data_mut();
        let mut sq = 0.0;
        for j in 0..theta.len() {
            let gj = g[j] * keep[j];
            grad_sq += gj * gj;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            let delta = cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            theta[j] -= delta;
            sq += delta * delta;
        }
        update_norms.push((params.entries()[i].name.clone(), sq.sqrt()));
    }
    state.t = t;
    if !params.is_finite() {
        return Err(Error::NumericOverflow(format!(
            "non-finite parameter after Adam step {t}"
        )));
    }
    Ok(UpdateRecord {
        step: t,
        selected: mask.selected(),
        update_norms,
        masked_grad_norm: grad_sq.sqrt(),
    })
}

/// Plain Adam, written independently of [`masked_adam_step`].
pub fn reference_adam_step(params: &mut ParamSet, grad: &ParamSet, state: &mut AdamState) -> Result<UpdateRecord> {
    params.check_layout(grad)?;
    let cfg = state.config;
    state.t += 1;
    let t = state.t;
    let (m, v) = state.moments_for(params)?;
    let mut update_norms = Vec::new();
    for ((name, g), (mt, vt)) in grad.iter().zip(m.tensors_mut().zip(v.tensors_mut())) {
        let theta = params.get_mut(name).expect("layout checked");
        let mut sq = 0.0;
        for (((th, &gj), mj), vj) in theta
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(mt.data_mut())
            .zip(vt.data_mut())
        {
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = *mj / (1.0 - cfg.beta1.powi(t as i32));
            let v_hat = *vj / (1.0 - cfg.beta2.powi(t as i32));
            let delta = cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            *th -= delta;
            sq += delta * delta;
        }
        update_norms.push((name.to_string(), sq.sqrt()));
    }
    Ok(UpdateRecord {
        step: t,
        selected: params.numel(),
        update_norms,
        masked_grad_norm: grad.l2_norm(),
    })
}

/// `θ ← θ − lr · g ⊙ mask`
pub fn masked_sgd_step(params: &mut ParamSet, grad: &ParamSet, mask: &SubnetMask, lr: f64) -> Result<UpdateRecord> {
    params.check_layout(grad)?;
    params.check_layout(mask.as_params())?;
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be >= 0, got {lr}")));
    }
    let mut update_norms = Vec::with_capacity(params.len());
    let mut grad_sq = 0.0;
    for i in 0..params.len() {
        let g = grad.tensor(i).data();
        let keep = mask.as_params().tensor(i).data();
        let mut sq = 0.0;
        for (j, th) in params.tensor_mut(i).data_mut().iter_mut().enumerate() {
            let gj = g[j] * keep[j];
            grad_sq += gj * gj;
            let delta = lr * gj;
            *th -= delta;
            sq += delta * delta;
        }
        update_norms.push((params.entries()[i].name.clone(), sq.sqrt()));
    }
    Ok(UpdateRecord {
        step: 0,
        selected: mask.selected(),
        update_norms,
        masked_grad_norm: grad_sq.sqrt(),
    })
}
