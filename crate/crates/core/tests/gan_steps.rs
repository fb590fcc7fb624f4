mod common;

use std::f64::consts::LN_2;

use common::{random_matrix, rel_close};
use gantsne_core::checkpoint;
use gantsne_core::dataset::{filter_by_label, normalize, PixelRange};
use gantsne_core::gan::{
    build_gan, disc_step, discriminator_gradients, gen_step, generator_gradients, train, GanModel, Snapshot,
    TrainConfig,
};
use gantsne_core::neural::{bce_loss, Activation, DenseNet};
use gantsne_core::numerics::{Matrix, RngState};

fn tiny_gan(seed: u64) -> GanModel {
    let mut rng = RngState::new(seed);
    let g = DenseNet::init(&[2, 3, 4], &[Activation::LeakyRelu(0.2), Activation::Tanh], 0.8, &mut rng).unwrap();
    let d = DenseNet::init(&[4, 3, 1], &[Activation::Tanh, Activation::Sigmoid], 0.8, &mut rng).unwrap();
    GanModel::from_parts(g, d, TrainConfig::default()).unwrap()
}

fn nudge(net: &DenseNet, layer: usize, weights: bool, k: usize, delta: f64) -> DenseNet {
    let mut out = net.clone();
    let l = &mut out.layers_mut()[layer];
    let m = if weights { &mut l.weights } else { &mut l.biases };
    m.as_mut_slice()[k] += delta;
    out
}

fn params(net: &DenseNet) -> Vec<(usize, bool, usize)> {
    let mut out = Vec::new();
    for (l, layer) in net.layers().iter().enumerate() {
        out.extend((0..layer.weights.as_slice().len()).map(|k| (l, true, k)));
        out.extend((0..layer.biases.as_slice().len()).map(|k| (l, false, k)));
    }
    out
}

fn grad_at(g: &gantsne_core::neural::Gradients, (l, weights, k): (usize, bool, usize)) -> f64 {
    if weights {
        g.layers[l].weights.as_slice()[k]
    } else {
        g.layers[l].biases.as_slice()[k]
    }
}

#[test]
fn generator_gradient_matches_finite_differences() {
    let model = tiny_gan(1);
    let mut rng = RngState::new(2);
    let z = random_matrix(&mut rng, 2, 2, 1.0);
    let (_, grads) = generator_gradients(&model, &z).unwrap();
    let loss = |g: &DenseNet| {
        let p = model.discriminator.predict(&g.predict(&z).unwrap()).unwrap();
        bce_loss(&p, &Matrix::filled(2, 1, 1.0)).unwrap().0
    };
    let h = 1e-6;
    for probe in params(&model.generator) {
        let (l, w, k) = probe;
        let numeric = (loss(&nudge(&model.generator, l, w, k, h)) - loss(&nudge(&model.generator, l, w, k, -h))) / (2.0 * h);
        let analytic = grad_at(&grads, probe);
        assert!(rel_close(numeric, analytic, 1e-4, 1e-8), "{probe:?}: {numeric} vs {analytic}");
    }
}

#[test]
fn discriminator_gradient_matches_finite_differences() {
    let model = tiny_gan(3);
    let mut rng = RngState::new(4);
    let real = random_matrix(&mut rng, 2, 4, 0.5);
    let fake = random_matrix(&mut rng, 2, 4, 0.5);
    let (step, grads) = discriminator_gradients(&model, &real, &fake).unwrap();
    let loss = |d: &DenseNet| {
        let lr = bce_loss(&d.predict(&real).unwrap(), &Matrix::filled(2, 1, 1.0)).unwrap().0;
        let lf = bce_loss(&d.predict(&fake).unwrap(), &Matrix::zeros(2, 1)).unwrap().0;
        lr + lf
    };
    assert!((step.loss - loss(&model.discriminator)).abs() < 1e-14);
    let h = 1e-6;
    for probe in params(&model.discriminator) {
        let (l, w, k) = probe;
        let numeric =
            (loss(&nudge(&model.discriminator, l, w, k, h)) - loss(&nudge(&model.discriminator, l, w, k, -h))) / (2.0 * h);
        let analytic = grad_at(&grads, probe);
        assert!(rel_close(numeric, analytic, 1e-4, 1e-8), "{probe:?}: {numeric} vs {analytic}");
    }
}

#[test]
fn steps_update_only_their_own_network() {
    let mut model = tiny_gan(5);
    let mut rng = RngState::new(6);
    let (g0, d0) = (model.generator.clone(), model.discriminator.clone());
    let real = random_matrix(&mut rng, 2, 4, 0.5);
    disc_step(&mut model, &real, &mut rng).unwrap();
    assert_eq!(model.generator, g0);
    assert_ne!(model.discriminator, d0);
    assert_eq!((model.disc_opt.step_count, model.gen_opt.step_count), (1, 0));

    let d1 = model.discriminator.clone();
    gen_step(&mut model, 2, &mut rng).unwrap();
    assert_eq!(model.discriminator, d1);
    assert_ne!(model.generator, g0);
    assert_eq!((model.disc_opt.step_count, model.gen_opt.step_count), (1, 1));
}

#[test]
fn losses_at_initialization() {
    let model = build_gan(&TrainConfig::default()).unwrap();
    assert_eq!(model.generator.param_count(), 1_486_352);
    let fives = normalize(&filter_by_label(&common::fixture(), 5).unwrap(), PixelRange::Sym1_1);
    let idx: Vec<usize> = (0..128).collect();
    let real = fives.images().select_rows(&idx);
    let mut rng = RngState::new(9);
    let z = gantsne_core::numerics::rand_normal(&mut rng, 128, 100);
    let fake = model.generator.predict(&z).unwrap();
    let (d, _) = discriminator_gradients(&model, &real, &fake).unwrap();
    let (g, _) = generator_gradients(&model, &z).unwrap();
    assert!((d.loss - 2.0 * LN_2).abs() < 0.5, "L_D = {}", d.loss);
    assert!((g.loss - LN_2).abs() < 0.3, "L_G = {}", g.loss);
    assert!((d.mean_d_real - 0.5).abs() < 0.1 && (d.mean_d_fake - 0.5).abs() < 0.1);
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        max_batches: Some(2),
        snapshot_every: 1,
        snapshot_samples: 30,
        seed: 17,
        ..TrainConfig::default()
    }
}

#[test]
fn training_schedule_and_determinism() {
    let ds = normalize(&filter_by_label(&common::fixture(), 7).unwrap(), PixelRange::Sym1_1);
    let config = TrainConfig {
        snapshot_initial: true,
        ..small_config(1)
    };
    let mut snaps: Vec<Snapshot> = Vec::new();
    let a = train(&ds, &config, &mut snaps).unwrap();
    assert_eq!(a.history.len(), 1);
    assert_eq!(a.class_label, Some(7));
    assert_eq!(snaps.iter().map(|s| s.epoch).collect::<Vec<_>>(), vec![0, 1]);
    assert!(snaps.iter().all(|s| s.images.shape() == (30, 784) && s.mosaic.len() == 25));
    assert_eq!(snaps[0].mosaic, snaps[1].mosaic);
    // 60 sevens, batch 32: the partial batch is dropped
    assert_eq!((a.gen_opt.step_count, a.disc_opt.step_count), (1, 1));

    let b = train(&ds, &config, &mut ()).unwrap();
    assert_eq!(checkpoint::to_bytes(&a), checkpoint::to_bytes(&b));
    let c = train(&ds, &TrainConfig { seed: 18, ..config }, &mut ()).unwrap();
    assert_ne!(a.generator, c.generator);
}

#[test]
fn history_is_finite_and_one_row_per_epoch() {
    let ds = normalize(&filter_by_label(&common::fixture(), 1).unwrap(), PixelRange::Sym1_1);
    let model = train(&ds, &small_config(3), &mut ()).unwrap();
    assert_eq!(model.epochs_completed(), 3);
    for (i, h) in model.history.iter().enumerate() {
        assert_eq!(h.epoch, i + 1);
        assert!([h.gen_loss, h.disc_loss, h.mean_d_real, h.mean_d_fake].iter().all(|v| v.is_finite()));
    }
    let restored = checkpoint::from_bytes(&checkpoint::to_bytes(&model)).unwrap();
    assert_eq!(restored, model);
}

#[test]
fn wrong_range_or_tiny_dataset_is_rejected() {
    let fives = filter_by_label(&common::fixture(), 5).unwrap();
    assert!(train(&fives, &small_config(1), &mut ()).is_err());
    let few = normalize(&fives.select(&[0, 1, 2]), PixelRange::Sym1_1);
    assert!(train(&few, &small_config(1), &mut ()).is_err());
}
