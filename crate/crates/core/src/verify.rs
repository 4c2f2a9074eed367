//! Self-checking property suite behind the `verify` subcommand.
//!
//! Each check compares the library against an oracle written independently
//! here (sort-based selection, closed-form quadratics, finite differences,
//! hand fixtures) and reports pass/fail with the measured discrepancy.

use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use crate::config::{DatasetSource, TrainConfig};
use crate::dropout::DropoutMask;
use crate::error::{Error, Result};
use crate::loss::{LossFn, Targets};
use crate::model::{Activation, MlpModel};
use crate::optim::{masked_adam_step, reference_adam_step, AdamConfig, AdamState};
use crate::params::ParamSet;
use crate::protocol::{run_protocol, ProtocolName, ABLATION_VARIANTS, LOW_RESOURCE_SIZES, NOISE_LEVELS};
use crate::report::emit_report;
use crate::rng::RngStream;
use crate::select::{
    accumulate_fisher, mean_gradient, perturbation_factor, scaling_factor, select_subnet, GradSamples, StrategyKind,
    SubnetMask,
};
use crate::tensor::Tensor;
use crate::train::{load_splits, run_experiment, run_seed, RunOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Option<Duration>,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        let budget = self
            .budget
            .map(|b| format!(" (budget {:.0}s)", b.as_secs_f64()))
            .unwrap_or_default();
        format!(
            "[{}] criterion {:>2} {}: {} in {:.2}s{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64(),
            budget
        )
    }
}

fn timed(
    id: u8,
    name: &'static str,
    budget: Option<Duration>,
    check: impl FnOnce() -> Result<(bool, String)>,
) -> CriterionResult {
    let start = Instant::now();
    let (ok, detail) = match check() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    let elapsed = start.elapsed();
    let in_budget = budget.is_none_or(|b| elapsed <= b);
    CriterionResult {
        id,
        name,
        passed: ok && in_budget,
        detail,
        elapsed,
        budget,
    }
}

/// Keep count for `p = tenths / 10`, in integer arithmetic.
fn oracle_keep(tenths: usize, n: usize) -> usize {
    ((10 - tenths) * n).div_ceil(10)
}

/// Indices of the `keep` largest scores, ties to the smaller index.
fn oracle_top(scores: &[f64], keep: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut bits = vec![false; scores.len()];
    for &i in &order[..keep] {
        bits[i] = true;
    }
    bits
}

fn random_scores(rng: &mut RngStream) -> Result<ParamSet> {
    let tensors = 1 + rng.below(3);
    let duplicates = rng.below(2) == 0;
    let mut ps = ParamSet::new();
    for t in 0..tensors {
        let n = 1 + rng.below(64);
        let values = (0..n)
            .map(|_| {
                if duplicates {
                    rng.below(4) as f64
                } else {
                    rng.uniform() * 10.0
                }
            })
            .collect();
        ps.push(format!("t{t}"), Tensor::from_vec(values)?)?;
    }
    Ok(ps)
}

pub fn mask_cardinality(trials: usize, seed: u64) -> Result<(bool, String)> {
    let mut rng = RngStream::new(seed);
    let mut checked = 0;
    for _ in 0..trials {
        let scores = random_scores(&mut rng)?;
        let flat = scores.to_flat();
        for tenths in 0..10 {
            let p = tenths as f64 / 10.0;
            let mask = select_subnet(&scores, p)?;
            let keep = oracle_keep(tenths, flat.len());
            if mask.selected() != keep || mask.bits() != oracle_top(&flat, keep) {
                return Ok((false, format!("mismatch at n={} p={p}", flat.len())));
            }
            checked += 1;
        }
    }
    Ok((true, format!("{checked} selections exact")))
}

pub fn full_mask_adam(steps: usize, n: usize, seed: u64) -> Result<(bool, String, f64)> {
    let mut rng = RngStream::new(seed);
    let curvature: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.1, 5.0)).collect();
    let centre: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let start: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let grad_of = |theta: &ParamSet| -> Result<ParamSet> {
        let g = theta
            .to_flat()
            .iter()
            .zip(&curvature)
            .zip(&centre)
            .map(|((t, a), c)| a * (t - c))
            .collect();
        ParamSet::single(g)
    };
    let cfg = AdamConfig {
        lr: 0.05,
        ..AdamConfig::default()
    };
    let mut masked = ParamSet::single(start.clone())?;
    let mut reference = ParamSet::single(start)?;
    let mut ms = AdamState::new(&masked, cfg)?;
    let mut rs = AdamState::new(&reference, cfg)?;
    let ones = SubnetMask::ones(&masked);
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let gm = grad_of(&masked)?;
        let gr = grad_of(&reference)?;
        masked_adam_step(&mut masked, &gm, &ones, &mut ms)?;
        reference_adam_step(&mut reference, &gr, &mut rs)?;
        worst = worst.max(masked.max_abs_diff(&reference)?);
    }
    Ok((
        worst < 1e-12,
        format!("max divergence {worst:.3e} over {steps} steps"),
        worst,
    ))
}

/// Denominator floor for the relative error: `|a − n| / max(|a|, |n|, floor)`.
/// Central differences at `h = 1e-5` carry roundoff near `1e-11`, so entries
/// below the floor are held to an absolute error of `1e-5 · floor`.
pub const FD_FLOOR: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

struct FdCase {
    model: MlpModel,
    x: Tensor,
    targets: Targets,
    loss: LossFn,
    masks: Vec<DropoutMask>,
}

fn random_case(rng: &mut RngStream) -> Result<FdCase> {
    loop {
        let n_layers = 1 + rng.below(3);
        let loss = if rng.below(2) == 0 {
            LossFn::SoftmaxCrossEntropy
        } else {
            LossFn::MeanSquaredError
        };
        let activation = [Activation::Relu, Activation::Tanh, Activation::Identity][rng.below(3)];
        let mut dims = vec![1 + rng.below(6)];
        for _ in 1..n_layers {
            dims.push(1 + rng.below(16));
        }
        dims.push(match loss {
            LossFn::SoftmaxCrossEntropy => 2 + rng.below(3),
            LossFn::MeanSquaredError => 1 + rng.below(3),
        });
        let mut layers = Vec::new();
        for i in 0..n_layers {
            let w = Tensor::new(
                vec![dims[i], dims[i + 1]],
                (0..dims[i] * dims[i + 1]).map(|_| rng.normal() * 0.7).collect(),
            )?;
            let b = Tensor::from_vec((0..dims[i + 1]).map(|_| rng.normal() * 0.3).collect())?;
            let act = if i + 1 == n_layers {
                Activation::Identity
            } else {
                activation
            };
            layers.push((w, b, act));
        }
        let keeps: Vec<f64> = (1..n_layers).map(|_| rng.uniform_range(0.5, 1.0)).collect();
        let model = MlpModel::from_layers(layers, keeps)?;
        let rows = 1 + rng.below(5);
        let x = Tensor::new(vec![rows, dims[0]], (0..rows * dims[0]).map(|_| rng.normal()).collect())?;
        let out = *dims.last().expect("nonempty");
        let targets = match loss {
            LossFn::SoftmaxCrossEntropy => Targets::Classes((0..rows).map(|_| rng.below(out)).collect()),
            LossFn::MeanSquaredError => Targets::Values((0..rows * out).map(|_| rng.normal()).collect()),
        };
        let (_, trace) = model.forward_train(&x, rng)?;
        // A finite-difference step must not straddle a ReLU kink.
        let near_kink = activation == Activation::Relu
            && trace.pre_activations[..n_layers - 1]
                .iter()
                .any(|z| z.data().iter().any(|v| v.abs() < 1e-3));
        if !near_kink {
            return Ok(FdCase {
                model,
                x,
                targets,
                loss,
                masks: trace.masks,
            });
        }
    }
}

fn fd_case_error(case: &mut FdCase) -> Result<f64> {
    let (logits, trace) = case.model.forward_with_masks(&case.x, case.masks.clone())?;
    let (_, analytic) = case.model.loss_and_grad(&trace, &logits, &case.targets, case.loss)?;
    let analytic = analytic.to_flat();
    let mut theta = case.model.params().to_flat();
    let eval = |theta: &[f64], model: &mut MlpModel| -> Result<f64> {
        model.params_mut().set_flat(theta)?;
        let (z, _) = model.forward_with_masks(&case.x, case.masks.clone())?;
        Ok(case.loss.value_and_grad(&z, &case.targets)?.0)
    };
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + FD_STEP;
        let up = eval(&theta, &mut case.model)?;
        theta[i] = orig - FD_STEP;
        let down = eval(&theta, &mut case.model)?;
        theta[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
        worst = worst.max(rel);
    }
    case.model.params_mut().set_flat(&theta)?;
    Ok(worst)
}

pub fn gradient_check(models: usize, seed: u64) -> Result<(bool, String, f64)> {
    let mut rng = RngStream::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..models {
        let mut case = random_case(&mut rng)?;
        worst = worst.max(fd_case_error(&mut case)?);
    }
    Ok((
        worst < 1e-5,
        format!("max relative error {worst:.3e} over {models} models (floor {FD_FLOOR:e})"),
        worst,
    ))
}

fn one(v: &[f64]) -> Result<ParamSet> {
    ParamSet::single(v.to_vec())
}

pub fn factor_fixtures() -> Result<(bool, String)> {
    let samples = GradSamples::new(vec![one(&[1.0, 2.0])?, one(&[3.0, 2.0])?])?;
    let mu = mean_gradient(&samples).to_flat();
    let per = perturbation_factor(&samples, &one(&mu)?, 0.0)?.to_flat();
    let sca = scaling_factor(&one(&[2.0, 2.0])?, &one(&[4.0, -2.0])?, 0.0)?.to_flat();
    let err = [
        (mu[0] - 2.0).abs(),
        (mu[1] - 2.0).abs(),
        (per[0] - 2f64.sqrt()).abs(),
        (sca[0] - 0.5).abs(),
        (sca[1] - 1.0).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    Ok((err < 1e-12, format!("max abs error {err:.3e}")))
}

pub fn fisher_oracle(seed: u64) -> Result<(bool, String)> {
    let mut rng = RngStream::new(seed);
    let layout = [vec![3, 4], vec![4]];
    let batches: Vec<ParamSet> = (0..3)
        .map(|_| {
            let mut ps = ParamSet::new();
            for (i, shape) in layout.iter().enumerate() {
                let n = shape.iter().product();
                ps.push(
                    format!("p{i}"),
                    Tensor::new(shape.clone(), (0..n).map(|_| rng.normal()).collect())?,
                )?;
            }
            Ok(ps)
        })
        .collect::<Result<_>>()?;
    let fisher = accumulate_fisher(&batches)?.to_flat();
    let flats: Vec<Vec<f64>> = batches.iter().map(ParamSet::to_flat).collect();
    let brute: Vec<f64> = (0..fisher.len())
        .map(|i| flats[0][i] * flats[0][i] + flats[1][i] * flats[1][i] + flats[2][i] * flats[2][i])
        .collect();
    Ok((fisher == brute, format!("{} entries compared bitwise", fisher.len())))
}

/// Small XOR configuration shared by the run-based checks.
pub fn small_config(kind: StrategyKind, steps: u64) -> TrainConfig {
    let mut c = TrainConfig {
        name: format!("verify-{kind}"),
        ..TrainConfig::default()
    };
    c.strategy.kind = kind;
    c.k = if kind.is_bidrop() { 2 } else { 1 };
    c.steps = steps;
    c.seeds = vec![0];
    c.hidden = vec![16, 16];
    c.dataset = DatasetSource::Xor { noise_std: 0.5 };
    c.train_size = 400;
    c.dev_size = 200;
    c.eval_every = 0;
    c
}

pub fn churn_observability(steps: u64) -> Result<(bool, String)> {
    let stat = small_config(StrategyKind::StaticFisher, steps);
    let bi = small_config(StrategyKind::BidropFull, steps);
    let splits = load_splits(&stat)?;
    let s = run_seed(&stat, &splits, 0, &RunOptions::default())?.churn;
    let b = run_seed(&bi, &splits, 0, &RunOptions::default())?.churn;
    let ok = s.steps_changed == 0 && s.max == 0.0 && 2 * b.steps_changed >= b.steps_measured;
    Ok((
        ok,
        format!(
            "static-fisher changed {}/{} steps; bidrop-full changed {}/{} steps",
            s.steps_changed, s.steps_measured, b.steps_changed, b.steps_measured
        ),
    ))
}

/// Scratch directory removed on drop.
struct Scratch(PathBuf);

impl Scratch {
    fn new(tag: &str) -> Result<Self> {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        let dir = std::env::temp_dir().join(format!("bidrop-{tag}-{}-{nanos}", std::process::id()));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Scratch(dir))
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}

pub fn determinism() -> Result<(bool, String)> {
    let mut cfg = small_config(StrategyKind::BidropFull, 50);
    cfg.seeds = vec![0, 1, 2];
    let scratch = Scratch::new("determinism")?;
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let dir = scratch.0.join(run);
        let report = run_experiment(&cfg, &RunOptions::default())?;
        let (json, _) = emit_report(&report, &dir)?;
        bytes.push(fs::read(&json).map_err(|e| Error::io(&json, e))?);
    }
    Ok((
        bytes[0] == bytes[1],
        format!("two report.json files of {} bytes compared", bytes[0].len()),
    ))
}

pub fn protocol_structure() -> Result<(bool, String)> {
    let mut base = small_config(StrategyKind::BidropFull, 3);
    base.train_size = 1000;
    base.dev_size = 100;
    base.hidden = vec![4];
    let opts = RunOptions::default();

    let ablation = run_protocol(ProtocolName::Ablation, &base, &opts)?;
    let rows: Vec<&str> = ablation.table.iter().map(|r| r.variant.as_str()).collect();
    let ablation_ok = rows == ABLATION_VARIANTS;

    let noise = run_protocol(ProtocolName::Noise, &base, &opts)?;
    let want: Vec<String> = NOISE_LEVELS.iter().map(|v| format!("noise={v}")).collect();
    let noise_ok = noise.settings() == want;
    let levels_ok = noise.cells.iter().all(|c| {
        let v: f64 = c.report.config["label_noise"].parse().unwrap_or(f64::NAN);
        NOISE_LEVELS.contains(&v)
    });

    let low = run_protocol(ProtocolName::LowResource, &base, &opts)?;
    let want: Vec<String> = LOW_RESOURCE_SIZES.iter().map(|v| format!("size={v}")).collect();
    let low_ok = low.settings() == want;

    Ok((
        ablation_ok && noise_ok && levels_ok && low_ok,
        format!(
            "ablation {:?}; noise {:?}; low-resource {:?}",
            rows,
            noise.settings(),
            low.settings()
        ),
    ))
}

/// Criteria 1 through 8, in order.
pub fn run_all() -> Vec<CriterionResult> {
    let secs = Duration::from_secs;
    vec![
        timed(1, "mask cardinality + sort oracle", Some(secs(10)), || {
            mask_cardinality(1000, 1)
        }),
        timed(2, "full-mask Adam equivalence", Some(secs(5)), || {
            full_mask_adam(100, 1000, 2).map(|(ok, d, _)| (ok, d))
        }),
        timed(3, "analytic vs finite-difference gradients", Some(secs(60)), || {
            gradient_check(100, 3).map(|(ok, d, _)| (ok, d))
        }),
        timed(4, "factor fixtures", None, factor_fixtures),
        timed(5, "Fisher accumulation oracle", None, || fisher_oracle(5)),
        timed(6, "mask churn observability", None, || churn_observability(200)),
        timed(7, "report determinism", None, determinism),
        timed(8, "protocol structure", None, protocol_structure),
    ]
}

/// Soft trend on noisy XOR: mean dev accuracy of `bidrop-full` minus `full-net`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendResult {
    pub vanilla_accuracy: f64,
    pub bidrop_accuracy: f64,
    /// `bidrop − vanilla`.
    pub gap: f64,
}

pub fn trend_config(kind: StrategyKind, seeds: u64, steps: u64) -> TrainConfig {
    let mut c = TrainConfig {
        name: format!("trend-{kind}"),
        ..TrainConfig::default()
    };
    c.strategy.kind = kind;
    c.strategy.p = 0.75;
    c.k = if kind.is_bidrop() { 2 } else { 1 };
    c.steps = steps;
    c.seeds = (0..seeds).collect();
    c.label_noise = 0.10;
    c.eval_every = 0;
    c
}

pub fn soft_trend(seeds: u64, steps: u64) -> Result<TrendResult> {
    let acc = |kind| -> Result<f64> {
        let r = run_experiment(&trend_config(kind, seeds, steps), &RunOptions::default())?;
        r.metric("accuracy")
            .map(|a| a.mean)
            .ok_or_else(|| Error::Empty("accuracy".into()))
    };
    let vanilla_accuracy = acc(StrategyKind::FullNet)?;
    let bidrop_accuracy = acc(StrategyKind::BidropFull)?;
    Ok(TrendResult {
        vanilla_accuracy,
        bidrop_accuracy,
        gap: bidrop_accuracy - vanilla_accuracy,
    })
}
