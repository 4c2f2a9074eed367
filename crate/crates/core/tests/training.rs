use bidrop::data::{keep_count, make_blobs, Dataset};
use bidrop::loss::LossFn;
use bidrop::metrics::predict_metrics;
use bidrop::model::{Activation, MlpModel, MlpSpec};
use bidrop::optim::{masked_sgd_step, reference_adam_step, AdamConfig, AdamState};
use bidrop::report::{load_report, ExperimentReport};
use bidrop::rng::streams;
use bidrop::select::{mean_gradient, GradSamples, StrategyConfig, StrategyKind, SubnetMask, SubnetSelector};
use bidrop::train::{load_splits, run_experiment, run_seed, RunOptions, Trainer};
use bidrop::{emit_report, RngStream, TrainConfig};

fn blobs() -> Dataset {
    make_blobs(64, 3, 4.0, &mut RngStream::new(5)).unwrap()
}

fn model(keep: f64) -> MlpModel {
    let spec = MlpSpec {
        input_dim: 3,
        hidden: vec![8, 8],
        output_dim: 2,
        hidden_activation: Activation::Tanh,
        keep_prob: keep,
    };
    MlpModel::new(&spec, &mut RngStream::new(11)).unwrap()
}

fn trainer(kind: StrategyKind, k: usize, keep: f64) -> Trainer {
    let m = model(keep);
    let opt = AdamState::new(m.params(), AdamConfig::default()).unwrap();
    let sel = SubnetSelector::new(StrategyConfig::new(kind)).unwrap();
    Trainer::new(m, opt, sel, k, LossFn::SoftmaxCrossEntropy, 3).unwrap()
}

#[test]
fn full_net_single_pass_matches_reference_adam() {
    let data = blobs();
    let (x, t) = data.batch(&(0..32).collect::<Vec<_>>()).unwrap();
    let mut tr = trainer(StrategyKind::FullNet, 1, 1.0);
    let mut reference = model(1.0);
    let mut state = AdamState::new(reference.params(), AdamConfig::default()).unwrap();
    for _ in 0..50 {
        tr.train_step(&x, &t).unwrap();
        let (z, trace) = reference.forward_eval(&x).unwrap();
        let (_, g) = reference
            .loss_and_grad(&trace, &z, &t, LossFn::SoftmaxCrossEntropy)
            .unwrap();
        reference_adam_step(reference.params_mut(), &g, &mut state).unwrap();
    }
    assert_eq!(tr.model.params(), reference.params());
}

#[test]
fn gavg_updates_with_mean_of_two_dropout_gradients() {
    let data = blobs();
    let (x, t) = data.batch(&(0..16).collect::<Vec<_>>()).unwrap();
    let mut tr = trainer(StrategyKind::GavgOnly, 2, 0.8);
    let mut reference = model(0.8);
    let mut state = AdamState::new(reference.params(), AdamConfig::default()).unwrap();
    // The trainer draws dropout masks from the seed's dropout stream.
    let mut rng = RngStream::with_stream(3, streams::DROPOUT);
    for _ in 0..5 {
        let out = tr.train_step(&x, &t).unwrap();
        assert_eq!(out.mask, SubnetMask::ones(reference.params()));
        let grads: Vec<_> = (0..2)
            .map(|_| {
                let (z, trace) = reference.forward_train(&x, &mut rng).unwrap();
                reference
                    .loss_and_grad(&trace, &z, &t, LossFn::SoftmaxCrossEntropy)
                    .unwrap()
                    .1
            })
            .collect();
        assert_ne!(grads[0], grads[1]);
        let g = mean_gradient(&GradSamples::new(grads).unwrap());
        reference_adam_step(reference.params_mut(), &g, &mut state).unwrap();
    }
    assert!(tr.model.params().max_abs_diff(reference.params()).unwrap() < 1e-15);
}

#[test]
fn bidrop_first_step_changes_exactly_the_selected_quarter() {
    let data = blobs();
    let (x, t) = data.batch(&(0..32).collect::<Vec<_>>()).unwrap();
    let mut tr = trainer(StrategyKind::BidropFull, 2, 0.9);
    let n = tr.model.num_params();
    let before = tr.model.params().to_flat();
    let out = tr.train_step(&x, &t).unwrap();
    let after = tr.model.params().to_flat();
    let changed: Vec<bool> = before.iter().zip(&after).map(|(a, b)| a != b).collect();
    assert_eq!(out.record.selected, n.div_ceil(4));
    assert_eq!(changed, out.mask.bits());

    // Later steps: an unselected element with zero first moment is bitwise unchanged.
    for _ in 0..10 {
        let m_before = tr.optimizer.first_moment().unwrap().to_flat();
        let before = tr.model.params().to_flat();
        let out = tr.train_step(&x, &t).unwrap();
        assert_eq!(out.record.selected, n.div_ceil(4));
        let after = tr.model.params().to_flat();
        for (i, selected) in out.mask.bits().into_iter().enumerate() {
            if !selected && m_before[i] == 0.0 {
                assert_eq!(before[i], after[i]);
            }
        }
    }
}

#[test]
fn k_passes_use_distinct_dropout_masks() {
    let data = blobs();
    let (x, t) = data.batch(&(0..8).collect::<Vec<_>>()).unwrap();
    let mut tr = trainer(StrategyKind::BidropFull, 3, 0.5);
    let (samples, _) = tr.gradient_samples(&x, &t).unwrap();
    let s = samples.samples();
    assert!(s[0] != s[1] && s[1] != s[2]);
}

#[test]
fn vanilla_sgd_separates_blobs() {
    let data = blobs();
    let rows: Vec<usize> = (0..data.len()).collect();
    let (x, t) = data.batch(&rows).unwrap();
    let mut m = model(1.0);
    let ones = SubnetMask::ones(m.params());
    for _ in 0..200 {
        let (z, trace) = m.forward_eval(&x).unwrap();
        let (_, g) = m.loss_and_grad(&trace, &z, &t, LossFn::SoftmaxCrossEntropy).unwrap();
        masked_sgd_step(m.params_mut(), &g, &ones, 0.1).unwrap();
    }
    assert_eq!(predict_metrics(&m, &data).unwrap().accuracy, Some(1.0));
}

fn small(kind: StrategyKind) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.strategy.kind = kind;
    c.k = if kind.is_bidrop() { 2 } else { 1 };
    c.steps = 60;
    c.seeds = vec![0, 1];
    c.train_size = 200;
    c.dev_size = 100;
    c.hidden = vec![8];
    c.eval_every = 20;
    c
}

#[test]
fn evaluation_does_not_perturb_training() {
    let mut a = small(StrategyKind::BidropFull);
    a.eval_every = 1;
    let mut b = a.clone();
    b.eval_every = 0;
    let splits = load_splits(&a).unwrap();
    let ra = run_seed(&a, &splits, 0, &RunOptions::default()).unwrap();
    let rb = run_seed(&b, &splits, 0, &RunOptions::default()).unwrap();
    assert_eq!(ra.trajectory.len(), 60);
    assert_eq!(rb.trajectory.len(), 1);
    assert_eq!(ra.final_metrics, rb.final_metrics);
    assert_eq!(ra.churn, rb.churn);
}

#[test]
fn selected_count_matches_quantile_for_masking_strategies() {
    for kind in StrategyKind::ALL {
        let cfg = small(kind);
        let splits = load_splits(&cfg).unwrap();
        let rec = run_seed(&cfg, &splits, 0, &RunOptions::default()).unwrap();
        assert_eq!(rec.selected_count_violations, 0, "{kind}");
        if kind.is_masking() {
            let n = 2 * 8 + 8 + 8 * 2 + 2;
            assert_eq!(rec.expected_selected, Some(keep_count(0.75, n)));
        } else {
            assert_eq!(rec.expected_selected, None);
            assert_eq!(rec.churn.steps_changed, 0);
        }
    }
}

#[test]
fn report_counts_roundtrip_and_self_consistency() {
    let mut cfg = small(StrategyKind::BidropFull);
    cfg.seeds = (0..10).collect();
    cfg.steps = 20;
    let report = run_experiment(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(report.seeds.len(), 10);
    assert!(report.is_consistent());
    assert!(report.metric("accuracy").unwrap().max >= report.metric("accuracy").unwrap().mean);

    let dir = tempfile::tempdir().unwrap();
    let (json, csv) = emit_report(&report, dir.path()).unwrap();
    assert_eq!(load_report(&json).unwrap(), report);
    let rows = std::fs::read_to_string(csv).unwrap().lines().count();
    assert_eq!(rows, 1 + 10);

    let mut tampered: ExperimentReport = report.clone();
    tampered.seeds.pop();
    assert!(!tampered.is_consistent());
}

#[test]
fn single_pass_bidrop_is_flagged() {
    let mut cfg = small(StrategyKind::BidropFull);
    cfg.k = 1;
    cfg.steps = 5;
    let report = run_experiment(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(report.warnings.len(), 1);
    assert!(small(StrategyKind::BidropFull).warnings().is_empty());
}

#[test]
fn corruption_touches_train_only() {
    let mut cfg = small(StrategyKind::FullNet);
    cfg.label_noise = 0.1;
    let noisy = load_splits(&cfg).unwrap();
    cfg.label_noise = 0.0;
    let clean = load_splits(&cfg).unwrap();
    assert_eq!(noisy.dev, clean.dev);
    let flipped = noisy
        .train
        .labels()
        .unwrap()
        .iter()
        .zip(clean.train.labels().unwrap())
        .filter(|(a, b)| a != b)
        .count();
    assert_eq!(flipped, 20);
    assert_eq!(noisy.train.features(), clean.train.features());
}

#[test]
fn mask_dumps_and_checkpoints_are_written() {
    let mut cfg = small(StrategyKind::BidropFull);
    cfg.seeds = vec![4];
    cfg.dump_masks_every = 30;
    cfg.save_checkpoints = true;
    let dir = tempfile::tempdir().unwrap();
    run_experiment(
        &cfg,
        &RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
        },
    )
    .unwrap();
    let dump = dir.path().join("masks").join("seed4_step30.bin");
    let (step, mask) = bidrop::maskdump::read_mask(&mut std::fs::File::open(dump).unwrap()).unwrap();
    assert_eq!(step, 30);
    assert_eq!(mask.selected(), keep_count(0.75, mask.numel()));
    let m = MlpModel::load(&dir.path().join("checkpoints").join("seed4.model.json")).unwrap();
    let o = AdamState::load(&dir.path().join("checkpoints").join("seed4.adam.json")).unwrap();
    assert_eq!(o.step_count(), 60);
    assert_eq!(m.num_params(), mask.numel());
}
