//! Parameter-importance scoring and update-mask selection.
//!
//! The step-wise scores are computed from the `k` gradients of one batch,
//! each taken under a different dropout mask:
//!
//! ```text
//! μ      = (1/k) Σ_j g⁽ʲ⁾
//! F_per  = |μ| / (sqrt(Σ_j (g⁽ʲ⁾ − μ)²) + ε)
//! F_sca  = |μ| / (|θ| + ε)
//! F      = F_per · F_sca
//! ```
//!
//! and the mask keeps the `ceil((1 − p)·n)` largest scores over the flattened
//! concatenation of every parameter tensor. Equal scores are broken in favour
//! of the smaller flat index.
//!
//! The baselines share the same mask type: a Fisher mask fixed once before
//! training, a Fisher mask re-estimated every `W` steps from the most recent
//! batch gradients, a uniformly random mask and the all-ones mask.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::keep_count;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::rng::RngStream;

/// Per-pass gradients `g⁽¹⁾..g⁽ᵏ⁾` for one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSamples {
    samples: Vec<ParamSet>,
}

impl GradSamples {
    pub fn new(samples: Vec<ParamSet>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::Empty("gradient sample list".into()));
        };
        for s in &samples[1..] {
            first.check_layout(s)?;
        }
        Ok(GradSamples { samples })
    }

    pub fn k(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[ParamSet] {
        &self.samples
    }

    fn layout(&self) -> &ParamSet {
        &self.samples[0]
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("stabilizer must be finite and >= 0, got {eps}")));
    }
    Ok(())
}

pub fn mean_gradient(samples: &GradSamples) -> ParamSet {
    let k = samples.k() as f64;
    let mut sum = samples.layout().zeros_like();
    for s in samples.samples() {
        for (acc, g) in sum.tensors_mut().zip(s.tensors()) {
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v;
            }
        }
    }
    sum.map(|v| v / k)
}

/// `|μ| / (sqrt(Σ_j (g⁽ʲ⁾ − μ)²) + eps)`. The deviation is the raw root sum
/// of squares, not divided by `k`. With `eps == 0` a zero deviation yields
/// `+inf` (or NaN where `μ` is also zero).
pub fn perturbation_factor(samples: &GradSamples, mean: &ParamSet, eps: f64) -> Result<ParamSet> {
    check_eps(eps)?;
    mean.check_layout(samples.layout())?;
    let mut dev = mean.zeros_like();
    for s in samples.samples() {
        for ((acc, g), m) in dev.tensors_mut().zip(s.tensors()).zip(mean.tensors()) {
            for ((a, gv), mv) in acc.data_mut().iter_mut().zip(g.data()).zip(m.data()) {
                let d = gv - mv;
                *a += d * d;
            }
        }
    }
    mean.zip_map(&dev, |m, d| m.abs() / (d.sqrt() + eps))
}

/// `|μ| / (|θ| + eps)`
pub fn scaling_factor(mean: &ParamSet, theta: &ParamSet, eps: f64) -> Result<ParamSet> {
    check_eps(eps)?;
    mean.zip_map(theta, |m, t| m.abs() / (t.abs() + eps))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionScores {
    pub mean: ParamSet,
    pub perturbation: ParamSet,
    pub scaling: ParamSet,
    pub final_score: ParamSet,
}

impl SelectionScores {
    pub fn compute(samples: &GradSamples, theta: &ParamSet, eps: f64) -> Result<Self> {
        let mean = mean_gradient(samples);
        let perturbation = perturbation_factor(samples, &mean, eps)?;
        let scaling = scaling_factor(&mean, theta, eps)?;
        let final_score = perturbation.zip_map(&scaling, |a, b| a * b)?;
        Ok(SelectionScores {
            mean,
            perturbation,
            scaling,
            final_score,
        })
    }
}

/// Binary update mask with the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SubnetMask {
    mask: ParamSet,
    selected: usize,
}

impl SubnetMask {
    pub fn ones(layout: &ParamSet) -> Self {
        SubnetMask {
            mask: layout.map(|_| 1.0),
            selected: layout.numel(),
        }
    }

    pub fn zeros(layout: &ParamSet) -> Self {
        SubnetMask {
            mask: layout.zeros_like(),
            selected: 0,
        }
    }

    /// Mask selecting the given flat indices.
    pub fn from_indices(layout: &ParamSet, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let n = layout.numel();
        let mut flat = vec![0.0; n];
        for i in indices {
            if i >= n {
                return Err(Error::invalid(format!("flat index {i} out of range for {n}")));
            }
            flat[i] = 1.0;
        }
        let mut mask = layout.zeros_like();
        mask.set_flat(&flat)?;
        let selected = flat.iter().filter(|&&v| v == 1.0).count();
        Ok(SubnetMask { mask, selected })
    }

    pub fn from_bits(layout: &ParamSet, bits: &[bool]) -> Result<Self> {
        Self::from_indices(layout, bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i))
    }

    pub fn selected(&self) -> usize {
        self.selected
    }

    pub fn numel(&self) -> usize {
        self.mask.numel()
    }

    pub fn as_params(&self) -> &ParamSet {
        &self.mask
    }

    pub fn bits(&self) -> Vec<bool> {
        self.mask.flat_values().map(|v| v == 1.0).collect()
    }

    /// Fraction of entries that differ from `other`.
    pub fn churn(&self, other: &SubnetMask) -> Result<f64> {
        self.mask.check_layout(&other.mask)?;
        let n = self.numel();
        let changed = self
            .mask
            .flat_values()
            .zip(other.mask.flat_values())
            .filter(|(a, b)| a != b)
            .count();
        Ok(if n == 0 { 0.0 } else { changed as f64 / n as f64 })
    }
}

fn check_quantile(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("quantile p must be in [0, 1), got {p}")));
    }
    Ok(())
}

/// Keep the `ceil((1 − p)·n)` highest scores across all tensors; ties go to
/// the smaller flat index.
pub fn select_subnet(scores: &ParamSet, p: f64) -> Result<SubnetMask> {
    check_quantile(p)?;
    let n = scores.numel();
    select_top(scores, keep_count(p, n))
}

/// Keep exactly `keep` entries by descending score, ascending flat index.
pub fn select_top(scores: &ParamSet, keep: usize) -> Result<SubnetMask> {
    let n = scores.numel();
    if keep > n {
        return Err(Error::invalid(format!("cannot keep {keep} of {n}")));
    }
    let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (i, v) in scores.flat_values().enumerate() {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::invalid(format!(
                "score at flat index {i} is {v}; scores must be finite and >= 0"
            )));
        }
        ranked.push((v, i));
    }
    if keep == n {
        return Ok(SubnetMask::ones(scores));
    }
    if keep == 0 {
        return Ok(SubnetMask::zeros(scores));
    }
    let order = |a: &(f64, usize), b: &(f64, usize)| -> Ordering { b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)) };
    ranked.select_nth_unstable_by(keep - 1, order);
    SubnetMask::from_indices(scores, ranked[..keep].iter().map(|&(_, i)| i))
}

/// `ceil((1 − p)·n)` entries chosen uniformly without replacement.
pub fn random_subnet(layout: &ParamSet, p: f64, rng: &mut RngStream) -> Result<SubnetMask> {
    check_quantile(p)?;
    let n = layout.numel();
    SubnetMask::from_indices(layout, index::sample(rng, n, keep_count(p, n)))
}

/// Elementwise sum of squared gradients over a stream of batches.
pub fn accumulate_fisher<'a>(grads: impl IntoIterator<Item = &'a ParamSet>) -> Result<ParamSet> {
    let mut acc = FisherAccumulator::unbounded();
    for g in grads {
        acc.push(g)?;
    }
    acc.scores()
}

/// Fisher score accumulator over either every pushed batch or the most
/// recent `window` batches.
#[derive(Debug, Clone)]
pub struct FisherAccumulator {
    window: Option<usize>,
    recent: VecDeque<ParamSet>,
    total: Option<ParamSet>,
    batches: usize,
}

impl FisherAccumulator {
    pub fn unbounded() -> Self {
        FisherAccumulator {
            window: None,
            recent: VecDeque::new(),
            total: None,
            batches: 0,
        }
    }

    pub fn windowed(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::invalid("Fisher window must be positive"));
        }
        Ok(FisherAccumulator {
            window: Some(window),
            ..Self::unbounded()
        })
    }

    pub fn push(&mut self, grad: &ParamSet) -> Result<()> {
        let sq = grad.map(|g| g * g);
        match self.window {
            None => match &mut self.total {
                None => self.total = Some(sq),
                Some(t) => *t = t.zip_map(&sq, |a, b| a + b)?,
            },
            Some(w) => {
                if let Some(first) = self.recent.front() {
                    first.check_layout(&sq)?;
                }
                self.recent.push_back(sq);
                if self.recent.len() > w {
                    self.recent.pop_front();
                }
            }
        }
        self.batches += 1;
        Ok(())
    }

    /// Batches pushed over the accumulator's lifetime.
    pub fn batches_seen(&self) -> usize {
        self.batches
    }

    pub fn scores(&self) -> Result<ParamSet> {
        match self.window {
            None => self
                .total
                .clone()
                .ok_or_else(|| Error::Empty("Fisher gradient stream".into())),
            Some(_) => {
                let mut it = self.recent.iter();
                let first = it.next().ok_or_else(|| Error::Empty("Fisher gradient stream".into()))?;
                it.try_fold(first.clone(), |acc, sq| acc.zip_map(sq, |a, b| a + b))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    BidropFull,
    BidropPerturbationOnly,
    BidropScalingOnly,
    GavgOnly,
    RandomSubnet,
    StaticFisher,
    DynamicFisher,
    FullNet,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::BidropFull,
        StrategyKind::BidropPerturbationOnly,
        StrategyKind::BidropScalingOnly,
        StrategyKind::GavgOnly,
        StrategyKind::RandomSubnet,
        StrategyKind::StaticFisher,
        StrategyKind::DynamicFisher,
        StrategyKind::FullNet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::BidropFull => "bidrop-full",
            StrategyKind::BidropPerturbationOnly => "bidrop-perturbation-only",
            StrategyKind::BidropScalingOnly => "bidrop-scaling-only",
            StrategyKind::GavgOnly => "gavg-only",
            StrategyKind::RandomSubnet => "random-subnet",
            StrategyKind::StaticFisher => "static-fisher",
            StrategyKind::DynamicFisher => "dynamic-fisher",
            StrategyKind::FullNet => "full-net",
        }
    }

    /// Scores derived from the k-pass gradients of the current batch.
    pub fn is_bidrop(self) -> bool {
        matches!(
            self,
            StrategyKind::BidropFull | StrategyKind::BidropPerturbationOnly | StrategyKind::BidropScalingOnly
        )
    }

    /// Strategies whose masks keep `ceil((1 − p)·n)` entries.
    pub fn is_masking(self) -> bool {
        !matches!(self, StrategyKind::GavgOnly | StrategyKind::FullNet)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub p: f64,
    pub eps_den: f64,
    pub fisher_window: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            kind: StrategyKind::BidropFull,
            p: 0.75,
            eps_den: 1e-8,
            fisher_window: 16,
        }
    }
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        StrategyConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_quantile(self.p)?;
        if !(self.eps_den > 0.0 && self.eps_den.is_finite()) {
            return Err(Error::invalid(format!("eps_den must be > 0, got {}", self.eps_den)));
        }
        if self.fisher_window == 0 {
            return Err(Error::invalid("fisher_window must be positive"));
        }
        Ok(())
    }
}

/// Inputs available to a strategy at one training step.
#[derive(Debug, Default)]
pub struct StepContext<'a> {
    pub step: u64,
    pub samples: Option<&'a GradSamples>,
    pub params: Option<&'a ParamSet>,
    pub rng: Option<&'a mut RngStream>,
}

/// Stateful mask producer for one training run.
#[derive(Debug, Clone)]
pub struct SubnetSelector {
    config: StrategyConfig,
    static_mask: Option<SubnetMask>,
    window: FisherAccumulator,
    cycle_mask: Option<SubnetMask>,
}

impl SubnetSelector {
    pub fn new(config: StrategyConfig) -> Result<Self> {
        config.validate()?;
        Ok(SubnetSelector {
            config,
            static_mask: None,
            window: FisherAccumulator::windowed(config.fisher_window)?,
            cycle_mask: None,
        })
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.config
    }

    /// Fix the static Fisher mask from scores accumulated before training.
    pub fn prepare_static(&mut self, fisher: &ParamSet) -> Result<()> {
        self.static_mask = Some(select_subnet(fisher, self.config.p)?);
        Ok(())
    }

    pub fn needs_static_fisher(&self) -> bool {
        self.config.kind == StrategyKind::StaticFisher
    }

    pub fn mask(&mut self, ctx: StepContext<'_>) -> Result<SubnetMask> {
        let kind = self.config.kind;
        let missing = |what| Error::MissingContext {
            strategy: kind.as_str(),
            what,
        };
        match kind {
            StrategyKind::FullNet | StrategyKind::GavgOnly => {
                let layout = ctx
                    .params
                    .or(ctx.samples.map(GradSamples::layout))
                    .ok_or_else(|| missing("parameters"))?;
                Ok(SubnetMask::ones(layout))
            }
            StrategyKind::BidropFull | StrategyKind::BidropPerturbationOnly | StrategyKind::BidropScalingOnly => {
                let samples = ctx.samples.ok_or_else(|| missing("gradient samples"))?;
                let params = ctx.params.ok_or_else(|| missing("parameters"))?;
                let scores = SelectionScores::compute(samples, params, self.config.eps_den)?;
                let score = match kind {
                    StrategyKind::BidropFull => &scores.final_score,
                    StrategyKind::BidropPerturbationOnly => &scores.perturbation,
                    _ => &scores.scaling,
                };
                select_subnet(score, self.config.p)
            }
            StrategyKind::RandomSubnet => {
                let layout = ctx
                    .params
                    .or(ctx.samples.map(GradSamples::layout))
                    .ok_or_else(|| missing("parameters"))?;
                let rng = ctx.rng.ok_or_else(|| missing("a random stream"))?;
                random_subnet(layout, self.config.p, rng)
            }
            StrategyKind::StaticFisher => self
                .static_mask
                .clone()
                .ok_or_else(|| missing("Fisher scores prepared before step 0")),
            StrategyKind::DynamicFisher => {
                let samples = ctx.samples.ok_or_else(|| missing("gradient samples"))?;
                self.window.push(&mean_gradient(samples))?;
                if self.cycle_mask.is_none() || ctx.step.is_multiple_of(self.config.fisher_window as u64) {
                    self.cycle_mask = Some(select_subnet(&self.window.scores()?, self.config.p)?);
                }
                Ok(self.cycle_mask.clone().expect("set above"))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(v: &[f64]) -> ParamSet {
        ParamSet::single(v.to_vec()).unwrap()
    }

    fn samples(gs: &[&[f64]]) -> GradSamples {
        GradSamples::new(gs.iter().map(|g| ps(g)).collect()).unwrap()
    }

    fn flat(p: &ParamSet) -> Vec<f64> {
        p.to_flat()
    }

    #[test]
    fn mean_fixtures() {
        assert_eq!(flat(&mean_gradient(&samples(&[&[5.0, -3.0]]))), vec![5.0, -3.0]);
        assert_eq!(
            flat(&mean_gradient(&samples(&[&[1.0, 2.0], &[-1.0, -2.0]]))),
            vec![0.0, 0.0]
        );
        assert_eq!(
            flat(&mean_gradient(&samples(&[&[1.0, 2.0], &[3.0, 2.0]]))),
            vec![2.0, 2.0]
        );
    }

    #[test]
    fn empty_and_mismatched_samples() {
        assert!(GradSamples::new(vec![]).is_err());
        assert!(GradSamples::new(vec![ps(&[1.0]), ps(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn perturbation_fixtures() {
        let s = samples(&[&[1.0, 2.0], &[3.0, 2.0]]);
        let mu = mean_gradient(&s);
        let f = perturbation_factor(&s, &mu, 0.0).unwrap();
        assert!((f.to_flat()[0] - 2f64.sqrt()).abs() < 1e-12);

        let s = samples(&[&[0.5, -4.0], &[0.5, -4.0]]);
        let mu = mean_gradient(&s);
        let f = perturbation_factor(&s, &mu, 1e-8).unwrap();
        assert_eq!(f.to_flat(), vec![0.5 / 1e-8, 4.0 / 1e-8]);

        let s = samples(&[&[1.0, 3.0], &[-1.0, 1.0]]);
        let mu = mean_gradient(&s);
        assert_eq!(perturbation_factor(&s, &mu, 1e-8).unwrap().to_flat()[0], 0.0);
    }

    #[test]
    fn scaling_fixtures() {
        let f = scaling_factor(&ps(&[2.0, 2.0]), &ps(&[4.0, -2.0]), 0.0).unwrap();
        assert_eq!(f.to_flat(), vec![0.5, 1.0]);
        let f = scaling_factor(&ps(&[0.0, 0.0]), &ps(&[4.0, -2.0]), 1e-8).unwrap();
        assert_eq!(f.to_flat(), vec![0.0, 0.0]);
        let f = scaling_factor(&ps(&[2.0]), &ps(&[0.0]), 1e-8).unwrap();
        assert!((f.to_flat()[0] - 2e8).abs() < 1e-6);
        assert!(scaling_factor(&ps(&[2.0]), &ps(&[0.0, 1.0]), 1e-8).is_err());
    }

    #[test]
    fn select_fixtures() {
        let m = select_subnet(&ps(&[1.0, 3.0, 2.0, 4.0]), 0.5).unwrap();
        assert_eq!(m.bits(), vec![false, true, false, true]);
        assert_eq!(m.selected(), 2);

        let m = select_subnet(&ps(&[1.0, 3.0, 2.0, 4.0]), 0.0).unwrap();
        assert_eq!(m.selected(), 4);

        let m = select_subnet(&ps(&[7.0; 4]), 0.5).unwrap();
        assert_eq!(m.bits(), vec![true, true, false, false]);
    }

    #[test]
    fn select_rejects_bad_input() {
        assert!(select_subnet(&ps(&[1.0]), 1.0).is_err());
        assert!(select_subnet(&ps(&[1.0]), -0.1).is_err());
        assert!(select_subnet(&ps(&[f64::NAN, 1.0]), 0.5).is_err());
        assert!(select_subnet(&ps(&[-1.0, 1.0]), 0.5).is_err());
    }

    #[test]
    fn selection_spans_tensors() {
        let scores = ParamSet::new()
            .with("a", crate::tensor::Tensor::from_vec(vec![0.1, 0.9]).unwrap())
            .unwrap()
            .with("b", crate::tensor::Tensor::from_vec(vec![0.8, 0.2, 0.7]).unwrap())
            .unwrap();
        let m = select_subnet(&scores, 0.4).unwrap();
        assert_eq!(m.selected(), 3);
        assert_eq!(m.bits(), vec![false, true, true, false, true]);
    }

    #[test]
    fn fisher_fixtures() {
        let f = accumulate_fisher([&ps(&[1.0, 2.0]), &ps(&[3.0, 0.0])]).unwrap();
        assert_eq!(f.to_flat(), vec![10.0, 4.0]);
        let f = accumulate_fisher([&ps(&[0.0, 0.0])]).unwrap();
        assert_eq!(f.to_flat(), vec![0.0, 0.0]);
        let f = accumulate_fisher([&ps(&[-1.5, 2.0])]).unwrap();
        assert_eq!(f.to_flat(), vec![2.25, 4.0]);
        assert!(accumulate_fisher(std::iter::empty()).is_err());
    }

    #[test]
    fn fisher_window_drops_old_batches() {
        let mut acc = FisherAccumulator::windowed(2).unwrap();
        for g in [[1.0], [2.0], [3.0]] {
            acc.push(&ps(&g)).unwrap();
        }
        assert_eq!(acc.scores().unwrap().to_flat(), vec![13.0]);
        assert_eq!(acc.batches_seen(), 3);
    }

    #[test]
    fn strategy_names_roundtrip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.as_str().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("bidrop".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn static_fisher_is_fixed() {
        let theta = ps(&[1.0; 8]);
        let mut sel = SubnetSelector::new(StrategyConfig {
            p: 0.5,
            ..StrategyConfig::new(StrategyKind::StaticFisher)
        })
        .unwrap();
        let missing = sel.mask(StepContext {
            params: Some(&theta),
            ..Default::default()
        });
        assert!(matches!(missing, Err(Error::MissingContext { .. })));
        sel.prepare_static(&ps(&[1., 5., 2., 6., 3., 7., 4., 8.])).unwrap();
        let a = sel
            .mask(StepContext {
                step: 1,
                ..Default::default()
            })
            .unwrap();
        let b = sel
            .mask(StepContext {
                step: 500,
                ..Default::default()
            })
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.selected(), 4);
    }

    #[test]
    fn random_subnet_counts_and_varies() {
        let layout = ps(&[0.0; 1000]);
        let mut sel = SubnetSelector::new(StrategyConfig {
            p: 0.75,
            ..StrategyConfig::new(StrategyKind::RandomSubnet)
        })
        .unwrap();
        let mut rng = RngStream::new(3);
        let mut prev: Option<SubnetMask> = None;
        for step in 0..20 {
            let m = sel
                .mask(StepContext {
                    step,
                    params: Some(&layout),
                    rng: Some(&mut rng),
                    ..Default::default()
                })
                .unwrap();
            assert_eq!(m.selected(), 250);
            if let Some(p) = &prev {
                assert_ne!(p, &m);
            }
            prev = Some(m);
        }
    }

    #[test]
    fn bidrop_full_composes_fixtures() {
        // μ = [2, 2], deviation [√2, 0], θ = [4, −2]; with ε = 1e-8 the
        // second entry dominates (F_per ≈ 2e8).
        let s = samples(&[&[1.0, 2.0], &[3.0, 2.0]]);
        let theta = ps(&[4.0, -2.0]);
        let mut sel = SubnetSelector::new(StrategyConfig {
            p: 0.5,
            ..StrategyConfig::new(StrategyKind::BidropFull)
        })
        .unwrap();
        let m = sel
            .mask(StepContext {
                samples: Some(&s),
                params: Some(&theta),
                ..Default::default()
            })
            .unwrap();
        assert_eq!(m.bits(), vec![false, true]);
    }

    #[test]
    fn dynamic_fisher_recomputes_on_cycle() {
        let theta = ps(&[0.0; 4]);
        let mut sel = SubnetSelector::new(StrategyConfig {
            p: 0.75,
            fisher_window: 2,
            ..StrategyConfig::new(StrategyKind::DynamicFisher)
        })
        .unwrap();
        let grads = [
            [4.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 9.0],
            [0.0, 0.0, 9.0, 0.0],
            [0.0, 9.0, 0.0, 0.0],
        ];
        let mut masks = vec![];
        for (step, g) in grads.iter().enumerate() {
            let s = samples(&[g]);
            masks.push(
                sel.mask(StepContext {
                    step: step as u64,
                    samples: Some(&s),
                    params: Some(&theta),
                    ..Default::default()
                })
                .unwrap()
                .bits(),
            );
        }
        assert_eq!(masks[0], vec![true, false, false, false]);
        assert_eq!(masks[1], masks[0]);
        // Window at step 2 holds steps 1 and 2; the tie 81 = 81 goes to index 2.
        assert_eq!(masks[2], vec![false, false, true, false]);
        assert_eq!(masks[3], masks[2]);
    }

    #[test]
    fn churn_fraction() {
        let layout = ps(&[0.0; 4]);
        let a = SubnetMask::from_indices(&layout, [0, 1]).unwrap();
        let b = SubnetMask::from_indices(&layout, [1, 2]).unwrap();
        assert_eq!(a.churn(&b).unwrap(), 0.5);
        assert_eq!(a.churn(&a).unwrap(), 0.0);
    }
}
