mod common;

use loran_core::adapter::{LoraAdapter, WeightUpdate};
use loran_core::config::TrainConfig;
use loran_core::harness::execute_run;
use loran_core::config::{ExperimentConfig, TaskConfig};
use loran_core::task::{gen_blobs, AdapterSite, BlobsTask, ToyClassifier};
use loran_core::train::{train, Problem};

#[test]
fn blobs_are_separable_by_logistic_regression() {
    let cfg = BlobsTask::default();
    let data = gen_blobs(&cfg).unwrap();
    let n = data.len();
    let (w, b) = common::fit_softmax_regression(
        data.features.data(),
        cfg.dim,
        n,
        &data.labels,
        cfg.classes,
        0.5,
        300,
    );
    let acc = common::softmax_regression_accuracy(
        data.features.data(),
        cfg.dim,
        n,
        &data.labels,
        cfg.classes,
        &w,
        &b,
    );
    assert!(acc >= 0.99, "oracle train accuracy {acc}");
}

#[test]
fn zero_spread_is_at_chance_on_fresh_points() {
    let train_cfg = BlobsTask {
        spread: 0.0,
        ..BlobsTask::default()
    };
    let held_out = BlobsTask {
        seed: 1,
        ..train_cfg.clone()
    };
    let (tr, te) = (gen_blobs(&train_cfg).unwrap(), gen_blobs(&held_out).unwrap());
    let (w, b) = common::fit_softmax_regression(
        tr.features.data(),
        16,
        tr.len(),
        &tr.labels,
        4,
        0.5,
        300,
    );
    let acc =
        common::softmax_regression_accuracy(te.features.data(), 16, te.len(), &te.labels, 4, &w, &b);
    assert!(acc <= 0.25 + 0.1, "held-out accuracy {acc}");
}

#[test]
fn lora_learns_blobs_within_fifty_epochs() {
    let cfg = BlobsTask::default();
    let data = gen_blobs(&cfg).unwrap();
    let model = ToyClassifier::new(cfg.dim, 32, cfg.classes, AdapterSite::Hidden, 0);
    let (d, k) = model.adapted_dims();
    let mut ad = LoraAdapter::init(d, k, 8, 16.0, 0).unwrap();
    let train_cfg = TrainConfig {
        learning_rate: 3e-3,
        epochs: 50,
        ..TrainConfig::default()
    };
    let out = train(&Problem::Classification { model: &model, data: &data }, &mut ad, &train_cfg).unwrap();
    assert!(out.evals.iter().any(|e| e.metric >= 0.95));
    assert!(out.final_metric.unwrap() >= 0.95);
    assert!(model.accuracy(None, &data).unwrap() < 0.5, "the frozen backbone alone is poor");
    assert_eq!(out.epoch_losses.len(), 50);
    assert!(ad.delta_weight().unwrap().frobenius_sq() > 0.0);
}

#[test]
fn frozen_backbone_is_untouched_by_training() {
    let mut cfg = ExperimentConfig::default();
    cfg.train.epochs = 3;
    let run = cfg.run_config();
    let TaskConfig::Blobs(b) = &run.task else { unreachable!() };
    let model = ToyClassifier::new(b.dim, run.model.hidden, b.classes, run.model.adapted_layer, run.model.seed);
    let report = execute_run(&run, false).unwrap().report;
    assert_eq!(report.frozen_fingerprint, model.fingerprint());
}
