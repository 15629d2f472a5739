mod common;

use aligan_core::geodata::{synthesize, FreshnessTag, SyntheticConfig};
use aligan_core::harness::{compute_mse, train_baseline};
use aligan_core::losses::sup_loss;
use aligan_core::model::{discriminator_forward, Generator, ModelConfig};
use aligan_core::par::Execution;
use aligan_core::training::{incremental_train, pretrain_generator, AnchorState, StepKind, TrainConfig};
use aligan_core::ErrorKind;
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn constant_labels_are_learned_by_pretraining() {
    let cfg = mini();
    let target = vec![0.6, 0.3, 0.1];
    let mut data = batch(&cfg, 10, 1);
    data.iter_mut().for_each(|s| s.label = target.clone());
    let (mut g, _) = nets(&cfg, 2);
    let tc = TrainConfig::default();
    assert_eq!(tc.pretrain.iterations, 200);
    let trace = pretrain_generator(&data, &mut g, &tc, 3).unwrap();
    assert_eq!(trace.len(), 200);
    assert!(trace.iter().all(|r| r.step == StepKind::Supervised));
    let loss = sup_loss(&data, &g).unwrap();
    assert!(loss < 0.01, "L_S {loss}");
}

#[test]
fn initial_training_halves_the_untrained_error() {
    let survey = synthesize(&SyntheticConfig::default()).unwrap();
    let model = ModelConfig::default();
    let base = train_baseline(&survey, &model, &TrainConfig::default(), 0.25, 0.25, 9).unwrap();
    assert!(base.split.train.len() + base.split.validation.len() + base.split.test.len() >= 400);
    let untrained = Generator::init(&model, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let before = compute_mse(&untrained, &base.split.test).unwrap();
    assert!(base.mse0 <= 0.5 * before, "trained {} vs untrained {before}", base.mse0);
}

#[test]
fn freshness_head_learns_an_all_original_set() {
    let cfg = mini();
    let mut data = batch(&cfg, 24, 5);
    data.iter_mut().for_each(|s| s.tau = FreshnessTag::Original);
    let (mut g, mut d) = nets(&cfg, 6);
    let mean_of = |d: &_, g: &Generator| {
        data.iter()
            .map(|s| {
                let y = aligan_core::model::generator_forward(&s.features, s.index, g).unwrap();
                discriminator_forward(&s.features, &y, d).unwrap().1
                    + discriminator_forward(&s.features, &s.label, d).unwrap().1
            })
            .sum::<f64>()
            / (2.0 * data.len() as f64)
    };
    let before = mean_of(&d, &g);
    let anchors =
        AnchorState::compute(&data, &g, &d, TrainConfig::default().sensitivity, Execution::Sequential).unwrap();
    let mut tc = TrainConfig {
        lambda_g: 0.0,
        lambda_d: 0.0,
        ..TrainConfig::default()
    };
    tc.incremental.iterations = 200;
    tc.incremental.lr_disc = 5e-3;
    incremental_train(&data, &mut g, &mut d, &anchors, &tc, 7).unwrap();
    let after = mean_of(&d, &g);
    assert!(after < 0.5 * before && after < 0.1, "D_of mean {before} -> {after}");
}

#[test]
fn tiny_divergence_threshold_aborts_with_a_divergence_error() {
    let cfg = mini();
    let data = batch(&cfg, 8, 1);
    let (mut g, _) = nets(&cfg, 2);
    let tc = TrainConfig {
        divergence_threshold: 1e-12,
        ..TrainConfig::default()
    };
    let err = pretrain_generator(&data, &mut g, &tc, 3).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Divergence);
}

#[test]
fn training_is_bitwise_reproducible() {
    let cfg = mini();
    let data = batch(&cfg, 16, 1);
    let run = || {
        let (mut g, mut d) = nets(&cfg, 2);
        let tc = TrainConfig::default();
        aligan_core::training::initial_train(&data, &mut g, &mut d, &tc, 4).unwrap();
        (g, d)
    };
    assert_eq!(run(), run());
}
