//! The training loop.
//!
//! One step: `k` forward/backward passes over the same batch, each with its
//! own dropout masks; the mean gradient and the strategy's mask; then one
//! masked Adam update with the masked mean gradient.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{DatasetSource, TrainConfig};
use crate::data::{self, keep_count, CsvSchema, Dataset, Split};
use crate::error::{Error, Result};
use crate::loss::{LossFn, Targets};
use crate::maskdump;
use crate::metrics::predict_metrics;
use crate::model::{MlpModel, MlpSpec};
use crate::optim::{masked_adam_step, AdamState, UpdateRecord};
use crate::params::ParamSet;
use crate::report::{ChurnStats, ExperimentReport, SeedRecord, TrajectoryPoint};
use crate::rng::{streams, RngStream};
use crate::select::{accumulate_fisher, mean_gradient, GradSamples, StepContext, SubnetMask, SubnetSelector};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub record: UpdateRecord,
    pub mask: SubnetMask,
    /// Mean of the `k` pass losses.
    pub loss: f64,
}

/// Model, optimizer state, selector and random streams for one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: MlpModel,
    pub optimizer: AdamState,
    pub selector: SubnetSelector,
    k: usize,
    loss: LossFn,
    dropout_rng: RngStream,
    selection_rng: RngStream,
    step: u64,
}

impl Trainer {
    pub fn new(
        model: MlpModel,
        optimizer: AdamState,
        selector: SubnetSelector,
        k: usize,
        loss: LossFn,
        seed: u64,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        Ok(Trainer {
            model,
            optimizer,
            selector,
            k,
            loss,
            dropout_rng: RngStream::with_stream(seed, streams::DROPOUT),
            selection_rng: RngStream::with_stream(seed, streams::SELECTION),
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Gradients of the `k` dropout-perturbed passes over one batch.
    pub fn gradient_samples(&mut self, x: &Tensor, targets: &Targets) -> Result<(GradSamples, f64)> {
        let mut samples = Vec::with_capacity(self.k);
        let mut total = 0.0;
        for _ in 0..self.k {
            let (logits, trace) = self.model.forward_train(x, &mut self.dropout_rng)?;
            let (loss, grads) = self.model.loss_and_grad(&trace, &logits, targets, self.loss)?;
            total += loss;
            samples.push(grads);
        }
        Ok((GradSamples::new(samples)?, total / self.k as f64))
    }

    pub fn train_step(&mut self, x: &Tensor, targets: &Targets) -> Result<StepOutcome> {
        if targets.is_empty() {
            return Err(Error::Empty("training batch".into()));
        }
        let (samples, loss) = self.gradient_samples(x, targets)?;
        let mean = mean_gradient(&samples);
        let mask = self.selector.mask(StepContext {
            step: self.step,
            samples: Some(&samples),
            params: Some(self.model.params()),
            rng: Some(&mut self.selection_rng),
        })?;
        let record = masked_adam_step(self.model.params_mut(), &mean, &mask, &mut self.optimizer)?;
        self.step += 1;
        Ok(StepOutcome { record, mask, loss })
    }

    /// Sum of squared eval-mode batch gradients over the whole training set,
    /// at the current parameters, fixed into the static mask.
    pub fn prepare_static_fisher(&mut self, train: &Dataset, batch_size: usize) -> Result<()> {
        let grads = fisher_batch_gradients(&self.model, train, batch_size, self.loss)?;
        self.selector.prepare_static(&accumulate_fisher(&grads)?)
    }
}

fn fisher_batch_gradients(model: &MlpModel, train: &Dataset, batch_size: usize, loss: LossFn) -> Result<Vec<ParamSet>> {
    let rows: Vec<usize> = (0..train.len()).collect();
    rows.chunks(batch_size.max(1))
        .map(|chunk| {
            let (x, t) = train.batch(chunk)?;
            let (logits, trace) = model.forward_eval(&x)?;
            Ok(model.loss_and_grad(&trace, &logits, &t, loss)?.1)
        })
        .collect()
}

/// Train and dev splits after corruption.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub dev: Dataset,
}

/// Build the datasets a config describes. Data and corruption draw from
/// `data_seed`, so every training seed sees the same splits.
pub fn load_splits(cfg: &TrainConfig) -> Result<Splits> {
    let s = cfg.data_seed;
    let (train, dev) = match &cfg.dataset {
        DatasetSource::Xor { noise_std } => (
            data::make_xor(
                cfg.train_size,
                *noise_std,
                &mut RngStream::with_stream(s, streams::TRAIN_DATA),
            )?,
            data::make_xor(
                cfg.dev_size,
                *noise_std,
                &mut RngStream::with_stream(s, streams::DEV_DATA),
            )?,
        ),
        DatasetSource::Blobs { dim, separation } => (
            data::make_blobs(
                cfg.train_size,
                *dim,
                *separation,
                &mut RngStream::with_stream(s, streams::TRAIN_DATA),
            )?,
            data::make_blobs(
                cfg.dev_size,
                *dim,
                *separation,
                &mut RngStream::with_stream(s, streams::DEV_DATA),
            )?,
        ),
        DatasetSource::Csv { train, dev, task } => (
            data::load_csv(
                train,
                CsvSchema {
                    task: *task,
                    split: Split::Train,
                },
            )?,
            data::load_csv(
                dev,
                CsvSchema {
                    task: *task,
                    split: Split::Dev,
                },
            )?,
        ),
    };
    let dev = dev.with_split(Split::Dev);
    if train.dim() != dev.dim() {
        return Err(Error::shape(format!(
            "train has {} features, dev has {}",
            train.dim(),
            dev.dim()
        )));
    }
    let mut rng = RngStream::with_stream(s, streams::CORRUPTION);
    let mut train = train;
    if cfg.subsample > 0 {
        train = data::subsample(&train, cfg.subsample, &mut rng)?;
    }
    if cfg.imbalance > 0.0 {
        train = data::make_imbalanced(&train, cfg.minority_class, cfg.imbalance, &mut rng)?;
    }
    if cfg.label_noise > 0.0 {
        train = data::inject_label_noise(&train, cfg.label_noise, &mut rng)?;
    }
    Ok(Splits { train, dev })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory for mask dumps and checkpoints; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
}

fn model_spec(cfg: &TrainConfig, splits: &Splits) -> MlpSpec {
    MlpSpec {
        input_dim: splits.train.dim(),
        hidden: cfg.hidden.clone(),
        output_dim: splits.train.num_classes().unwrap_or(1),
        hidden_activation: cfg.activation,
        keep_prob: cfg.keep_prob,
    }
}

pub fn build_trainer(cfg: &TrainConfig, splits: &Splits, seed: u64) -> Result<Trainer> {
    let model = MlpModel::new(
        &model_spec(cfg, splits),
        &mut RngStream::with_stream(seed, streams::INIT),
    )?;
    let optimizer = AdamState::new(model.params(), cfg.adam)?;
    let selector = SubnetSelector::new(cfg.strategy)?;
    let mut trainer = Trainer::new(model, optimizer, selector, cfg.k, cfg.loss, seed)?;
    if trainer.selector.needs_static_fisher() {
        trainer.prepare_static_fisher(&splits.train, cfg.effective_batch())?;
    }
    Ok(trainer)
}

/// Reshuffled each epoch from the seed's order stream.
struct BatchSampler {
    rng: RngStream,
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
}

impl BatchSampler {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        BatchSampler {
            rng: RngStream::with_stream(seed, streams::ORDER),
            order: (0..n).collect(),
            cursor: n,
            batch: batch.min(n),
        }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.cursor + self.batch > self.order.len() {
            rand::seq::SliceRandom::shuffle(self.order.as_mut_slice(), &mut self.rng);
            self.cursor = 0;
        }
        let b = self.order[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        b
    }
}

pub fn run_seed(cfg: &TrainConfig, splits: &Splits, seed: u64, opts: &RunOptions) -> Result<SeedRecord> {
    let mut trainer = build_trainer(cfg, splits, seed)?;
    let n = trainer.model.num_params();
    let expected = cfg.strategy.kind.is_masking().then(|| keep_count(cfg.strategy.p, n));
    let mut sampler = BatchSampler::new(splits.train.len(), cfg.effective_batch(), seed);
    let mask_dir = match (&opts.out_dir, cfg.dump_masks_every) {
        (Some(dir), every) if every > 0 => {
            let d = dir.join("masks");
            crate::report::ensure_dir(&d)?;
            Some(d)
        }
        _ => None,
    };

    let mut prev: Option<SubnetMask> = None;
    let mut churn = ChurnStats::default();
    let mut churn_sum = 0.0;
    let mut violations = 0;
    let mut trajectory = Vec::new();
    for step in 0..cfg.steps {
        let (x, t) = splits.train.batch(&sampler.next())?;
        let out = trainer.train_step(&x, &t)?;
        if expected.is_some_and(|e| e != out.record.selected) {
            violations += 1;
        }
        if let Some(p) = &prev {
            let c = out.mask.churn(p)?;
            churn.steps_measured += 1;
            churn.steps_changed += u64::from(c > 0.0);
            churn.max = churn.max.max(c);
            churn_sum += c;
        }
        if let Some(dir) = &mask_dir {
            if step % cfg.dump_masks_every == 0 {
                dump_mask(&dir.join(format!("seed{seed}_step{step}.bin")), step, &out.mask)?;
            }
        }
        let last = step + 1 == cfg.steps;
        if last || (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
            trajectory.push(TrajectoryPoint {
                step: step + 1,
                train_loss: out.loss,
                dev: predict_metrics(&trainer.model, &splits.dev)?,
            });
        }
        prev = Some(out.mask);
    }
    if churn.steps_measured > 0 {
        churn.mean = churn_sum / churn.steps_measured as f64;
    }
    if cfg.save_checkpoints {
        if let Some(dir) = &opts.out_dir {
            let d = dir.join("checkpoints");
            crate::report::ensure_dir(&d)?;
            trainer.model.save(&d.join(format!("seed{seed}.model.json")))?;
            trainer.optimizer.save(&d.join(format!("seed{seed}.adam.json")))?;
        }
    }
    Ok(SeedRecord {
        seed,
        final_metrics: trajectory.last().expect("at least one step").dev,
        trajectory,
        churn,
        expected_selected: expected,
        selected_count_violations: violations,
    })
}

fn dump_mask(path: &Path, step: u64, mask: &SubnetMask) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    maskdump::write_mask(&mut BufWriter::new(file), step, mask).map_err(|e| Error::io(path, e))
}

/// Train every seed (in parallel) and evaluate the last checkpoint on the dev split.
pub fn run_experiment(cfg: &TrainConfig, opts: &RunOptions) -> Result<ExperimentReport> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    let num_params = build_trainer(cfg, &splits, cfg.seeds[0])?.model.num_params();
    let seeds = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(cfg, &splits, s, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        name: cfg.name.clone(),
        fingerprint: cfg.fingerprint(),
        config: cfg.canonical(),
        num_params,
        warnings: cfg.warnings(),
        aggregates: ExperimentReport::compute_aggregates(&seeds),
        seeds,
    })
}
