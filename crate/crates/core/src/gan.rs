//! Fully connected generator/discriminator pair and the adversarial training
//! loop.
//!
//! The generator maps 100-dimensional standard normal noise through
//! 256, 512 and 1024 LeakyReLU units to 784 tanh outputs. The discriminator
//! narrows 784 inputs through 512 and 256 LeakyReLU units to a single sigmoid
//! probability. Each mini-batch performs one discriminator update on
//! `BCE(D(x), 1) + BCE(D(G(z)), 0)` with the generator frozen, then one
//! generator update on `BCE(D(G(z)), 1)` with the discriminator frozen.

use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, PixelRange, IMAGE_PIXELS};
use crate::error::{Error, Result};
use crate::neural::{adam_apply, bce_loss, Activation, AdamState, DenseNet, Gradients, LEAKY_SLOPE, WEIGHT_INIT_STD};
use crate::numerics::{rand_normal, Matrix, RngState};

pub const NOISE_DIM: usize = 100;
pub const GENERATOR_HIDDEN: [usize; 3] = [256, 512, 1024];
pub const DISCRIMINATOR_HIDDEN: [usize; 2] = [512, 256];
/// Images per snapshot mosaic (5 x 5 grid).
pub const MOSAIC_SAMPLES: usize = 25;

const INIT_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const SNAPSHOT_STREAM: u64 = 2;
const GENERATE_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub noise_dim: usize,
    pub snapshot_every: usize,
    pub snapshot_samples: usize,
    /// Also emit a snapshot of the untrained generator as epoch 0.
    pub snapshot_initial: bool,
    /// Caps the number of mini-batches per epoch. With `Some(1)` an epoch is a
    /// single generator iteration.
    pub max_batches: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2400,
            batch_size: 128,
            learning_rate: 0.0002,
            noise_dim: NOISE_DIM,
            snapshot_every: 50,
            snapshot_samples: 100,
            snapshot_initial: false,
            max_batches: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("noise_dim", self.noise_dim),
            ("snapshot_every", self.snapshot_every),
            ("snapshot_samples", self.snapshot_samples),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Input(format!("{name} must be at least 1")));
            }
        }
        if self.max_batches == Some(0) {
            return Err(Error::Input("max_batches must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Input(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Averages over the mini-batches of one epoch. `epoch` counts from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub gen_loss: f64,
    pub disc_loss: f64,
    pub mean_d_real: f64,
    pub mean_d_fake: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub generator: DenseNet,
    pub discriminator: DenseNet,
    pub gen_opt: AdamState,
    pub disc_opt: AdamState,
    pub history: Vec<EpochStats>,
    pub class_label: Option<u8>,
    pub config: TrainConfig,
    /// Training stream; advances with every sampled batch and shuffle.
    pub rng: RngState,
}

impl GanModel {
    /// Wraps arbitrary networks (e.g. small test networks) as a model.
    pub fn from_parts(generator: DenseNet, discriminator: DenseNet, config: TrainConfig) -> Result<Self> {
        if generator.output_dim() != discriminator.input_dim() || discriminator.output_dim() != 1 {
            return Err(Error::Shape {
                op: "gan wiring",
                left: (generator.input_dim(), generator.output_dim()),
                right: (discriminator.input_dim(), discriminator.output_dim()),
            });
        }
        let lr = config.learning_rate;
        Ok(Self {
            gen_opt: AdamState::new(&generator, lr),
            disc_opt: AdamState::new(&discriminator, lr),
            rng: RngState::new(config.seed).fork(TRAIN_STREAM),
            config: TrainConfig {
                noise_dim: generator.input_dim(),
                ..config
            },
            generator,
            discriminator,
            history: Vec::new(),
            class_label: None,
        })
    }

    pub fn noise_dim(&self) -> usize {
        self.generator.input_dim()
    }

    pub fn epochs_completed(&self) -> usize {
        self.history.len()
    }
}

/// Generator `noise -> 256 -> 512 -> 1024 -> 784` and discriminator
/// `784 -> 512 -> 256 -> 1`, weights `N(0, 0.02^2)`, biases zero.
pub fn build_gan(config: &TrainConfig) -> Result<GanModel> {
    config.validate()?;
    let mut init = RngState::new(config.seed).fork(INIT_STREAM);
    let leaky = Activation::LeakyRelu(LEAKY_SLOPE);

    let mut g_dims = vec![config.noise_dim];
    g_dims.extend(GENERATOR_HIDDEN);
    g_dims.push(IMAGE_PIXELS);
    let generator = DenseNet::init(&g_dims, &[leaky, leaky, leaky, Activation::Tanh], WEIGHT_INIT_STD, &mut init)?;

    let mut d_dims = vec![IMAGE_PIXELS];
    d_dims.extend(DISCRIMINATOR_HIDDEN);
    d_dims.push(1);
    let discriminator = DenseNet::init(&d_dims, &[leaky, leaky, Activation::Sigmoid], WEIGHT_INIT_STD, &mut init)?;

    GanModel::from_parts(generator, discriminator, config.clone())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscStep {
    pub loss: f64,
    pub mean_d_real: f64,
    pub mean_d_fake: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenStep {
    pub loss: f64,
    pub mean_d_fake: f64,
}

/// Loss and discriminator gradients for a real batch and a (constant) fake batch.
pub fn discriminator_gradients(model: &GanModel, real: &Matrix, fake: &Matrix) -> Result<(DiscStep, Gradients)> {
    let b_real = real.rows();
    let x = real.vstack(fake)?;
    let (p, tape) = model.discriminator.forward(&x)?;
    let p_real = p.select_rows(&(0..b_real).collect::<Vec<_>>());
    let p_fake = p.select_rows(&(b_real..p.rows()).collect::<Vec<_>>());
    let (loss_real, d_real) = bce_loss(&p_real, &Matrix::filled(p_real.rows(), 1, 1.0))?;
    let (loss_fake, d_fake) = bce_loss(&p_fake, &Matrix::zeros(p_fake.rows(), 1))?;
    let grads = model.discriminator.backward(&tape, &d_real.vstack(&d_fake)?)?;
    let step = DiscStep {
        loss: loss_real + loss_fake,
        mean_d_real: p_real.mean(),
        mean_d_fake: p_fake.mean(),
    };
    Ok((step, grads))
}

/// Generator loss `BCE(D(G(z)), 1)` and its gradient, backpropagated through
/// the discriminator without touching it.
pub fn generator_gradients(model: &GanModel, noise: &Matrix) -> Result<(GenStep, Gradients)> {
    let (fake, g_tape) = model.generator.forward(noise)?;
    let (p, d_tape) = model.discriminator.forward(&fake)?;
    let (loss, dp) = bce_loss(&p, &Matrix::filled(p.rows(), 1, 1.0))?;
    let d_fake = model.discriminator.input_gradient(&d_tape, &dp)?;
    let grads = model.generator.backward(&g_tape, &d_fake)?;
    Ok((
        GenStep {
            loss,
            mean_d_fake: p.mean(),
        },
        grads,
    ))
}

/// One discriminator update on `real_batch` and `B` fresh fakes.
pub fn disc_step(model: &mut GanModel, real_batch: &Matrix, rng: &mut RngState) -> Result<DiscStep> {
    if real_batch.rows() == 0 {
        return Err(Error::Input("empty real batch".into()));
    }
    let z = rand_normal(rng, real_batch.rows(), model.noise_dim());
    let fake = model.generator.predict(&z)?;
    let (step, grads) = discriminator_gradients(model, real_batch, &fake)?;
    adam_apply(&mut model.discriminator, &grads, &mut model.disc_opt)?;
    Ok(step)
}

/// One generator update on `batch_size` fresh noise vectors.
pub fn gen_step(model: &mut GanModel, batch_size: usize, rng: &mut RngState) -> Result<GenStep> {
    if batch_size == 0 {
        return Err(Error::Input("batch size must be at least 1".into()));
    }
    let z = rand_normal(rng, batch_size, model.noise_dim());
    let (step, grads) = generator_gradients(model, &z)?;
    adam_apply(&mut model.generator, &grads, &mut model.gen_opt)?;
    Ok(step)
}

/// Generator output in `[-1, 1]` mapped to rounded, clamped raw pixel values.
pub fn to_raw_pixels(g: &Matrix) -> Matrix {
    g.map(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0))
}

/// Samples drawn from the generator at the end of an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Completed epochs; 0 is the untrained generator.
    pub epoch: usize,
    /// `snapshot_samples x 784` raw pixel values.
    pub images: Matrix,
    /// Rows of `images` shown in the mosaic.
    pub mosaic: Vec<usize>,
}

/// Receives progress from [`train`].
pub trait TrainObserver {
    fn on_epoch(&mut self, _stats: &EpochStats) -> Result<()> {
        Ok(())
    }

    fn on_snapshot(&mut self, _snapshot: &Snapshot, _model: &GanModel) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

impl TrainObserver for Vec<Snapshot> {
    fn on_snapshot(&mut self, snapshot: &Snapshot, _model: &GanModel) -> Result<()> {
        self.push(snapshot.clone());
        Ok(())
    }
}

fn common_label(ds: &LabeledDataset) -> Option<u8> {
    let first = *ds.labels().first()?;
    ds.labels().iter().all(|&l| l == first).then_some(first)
}

fn check_losses(epoch: usize, batch: usize, d: &DiscStep, g: &GenStep) -> Result<()> {
    if d.loss.is_finite() && g.loss.is_finite() {
        return Ok(());
    }
    Err(Error::Numerical(format!(
        "non-finite loss at epoch {epoch}, batch {batch} (L_D = {}, L_G = {})",
        d.loss, g.loss
    )))
}

fn batch_mean(sum: f64, n: usize) -> f64 {
    sum / n as f64
}

/// Adversarial training on a `[-1, 1]` dataset.
///
/// Each epoch shuffles the data and walks the full batches in order (the
/// final partial batch is dropped), running one `disc_step` and one
/// `gen_step` per batch. Every `snapshot_every` epochs the observer receives
/// `snapshot_samples` images generated from a fixed noise batch.
pub fn train(ds: &LabeledDataset, config: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<GanModel> {
    config.validate()?;
    if ds.is_empty() {
        return Err(Error::Input("cannot train on an empty dataset".into()));
    }
    if ds.pixel_range() != PixelRange::Sym1_1 {
        return Err(Error::Input(format!(
            "training data must be in Sym1_1 range, got {:?}",
            ds.pixel_range()
        )));
    }
    if ds.len() < config.batch_size {
        return Err(Error::Input(format!(
            "dataset has {} images, fewer than batch size {}",
            ds.len(),
            config.batch_size
        )));
    }

    let mut model = build_gan(config)?;
    model.class_label = common_label(ds);
    let mut rng = model.rng.clone();

    let mut snap_rng = RngState::new(config.seed).fork(SNAPSHOT_STREAM);
    let snap_noise = rand_normal(&mut snap_rng, config.snapshot_samples, config.noise_dim);
    let mosaic = snap_rng.sample_indices(config.snapshot_samples, MOSAIC_SAMPLES.min(config.snapshot_samples));
    let take_snapshot = |model: &GanModel, epoch: usize| -> Result<Snapshot> {
        Ok(Snapshot {
            epoch,
            images: to_raw_pixels(&model.generator.predict(&snap_noise)?),
            mosaic: mosaic.clone(),
        })
    };

    if config.snapshot_initial {
        observer.on_snapshot(&take_snapshot(&model, 0)?, &model)?;
    }

    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut n_batches = ds.len() / config.batch_size;
    if let Some(cap) = config.max_batches {
        n_batches = n_batches.min(cap);
    }

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let (mut gl, mut dl, mut dr, mut df) = (0.0, 0.0, 0.0, 0.0);
        for b in 0..n_batches {
            let idx = &order[b * config.batch_size..(b + 1) * config.batch_size];
            let real = ds.images().select_rows(idx);
            let d = disc_step(&mut model, &real, &mut rng)?;
            let g = gen_step(&mut model, config.batch_size, &mut rng)?;
            check_losses(epoch, b + 1, &d, &g)?;
            gl += g.loss;
            dl += d.loss;
            dr += d.mean_d_real;
            df += d.mean_d_fake;
        }
        let stats = EpochStats {
            epoch,
            gen_loss: batch_mean(gl, n_batches),
            disc_loss: batch_mean(dl, n_batches),
            mean_d_real: batch_mean(dr, n_batches),
            mean_d_fake: batch_mean(df, n_batches),
        };
        model.history.push(stats);
        model.rng = rng.clone();
        observer.on_epoch(&stats)?;
        if epoch % config.snapshot_every == 0 {
            observer.on_snapshot(&take_snapshot(&model, epoch)?, &model)?;
        }
    }
    Ok(model)
}

/// `n` synthetic images in raw pixel units, all labeled with the model's class.
pub fn generate(model: &GanModel, n: usize, rng: &mut RngState) -> Result<LabeledDataset> {
    let label = model.class_label.ok_or_else(|| {
        Error::Contract("model has no class label; train it on a single digit".into())
    })?;
    if model.generator.output_dim() != IMAGE_PIXELS {
        return Err(Error::Shape {
            op: "generate",
            left: (1, model.generator.output_dim()),
            right: (1, IMAGE_PIXELS),
        });
    }
    let mut images = Matrix::zeros(0, IMAGE_PIXELS);
    let mut remaining = n;
    while remaining > 0 {
        let chunk = remaining.min(GENERATE_CHUNK);
        let z = rand_normal(rng, chunk, model.noise_dim());
        images = images.vstack(&to_raw_pixels(&model.generator.predict(&z)?))?;
        remaining -= chunk;
    }
    LabeledDataset::new(images, vec![label; n], PixelRange::Raw0_255)
}

#[cfg(test)]
mod tests {
    use super::*;
    
    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batch_size: 4,
            snapshot_every: 1,
            snapshot_samples: 4,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn default_parameter_count() {
        let model = build_gan(&TrainConfig::default()).unwrap();
        let expected = 100 * 256 + 256 + 256 * 512 + 512 + 512 * 1024 + 1024 + 1024 * 784 + 784;
        assert_eq!(expected, 1_486_352);
        assert_eq!(model.generator.param_count(), expected);
        assert_eq!(model.generator.output_dim(), IMAGE_PIXELS);
        assert_eq!(model.discriminator.output_dim(), 1);
    }

    #[test]
    fn build_is_deterministic() {
        let c = TrainConfig { seed: 9, ..TrainConfig::default() };
        assert_eq!(build_gan(&c).unwrap(), build_gan(&c).unwrap());
        let other = build_gan(&TrainConfig { seed: 10, ..c }).unwrap();
        assert_ne!(build_gan(&TrainConfig { seed: 9, ..TrainConfig::default() }).unwrap().generator, other.generator);
    }

    #[test]
    fn discriminator_output_in_unit_interval() {
        let model = build_gan(&TrainConfig::default()).unwrap();
        let x = rand_normal(&mut RngState::new(4), 3, IMAGE_PIXELS).map(|v| v.clamp(-1.0, 1.0));
        let p = model.discriminator.predict(&x).unwrap();
        assert!(p.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn exact_half_discriminator_losses() {
        let mut model = build_gan(&small_config()).unwrap();
        let layers = model.discriminator.layers_mut();
        let last = layers.len() - 1;
        layers[last].weights = Matrix::zeros(layers[last].weights.rows(), 1);
        let real = Matrix::zeros(4, IMAGE_PIXELS);
        let z = rand_normal(&mut RngState::new(1), 4, NOISE_DIM);
        let fake = model.generator.predict(&z).unwrap();
        let (d, _) = discriminator_gradients(&model, &real, &fake).unwrap();
        assert!((d.loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        let (g, _) = generator_gradients(&model, &z).unwrap();
        assert!((g.loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn from_parts_checks_wiring() {
        let mut rng = RngState::new(1);
        let g = DenseNet::init(&[2, 3], &[Activation::Tanh], 0.1, &mut rng).unwrap();
        let d = DenseNet::init(&[4, 1], &[Activation::Sigmoid], 0.1, &mut rng).unwrap();
        assert!(GanModel::from_parts(g, d, TrainConfig::default()).is_err());
    }

    #[test]
    fn generate_requires_label_and_clamps() {
        let mut model = build_gan(&small_config()).unwrap();
        let mut rng = RngState::new(2);
        assert!(matches!(generate(&model, 3, &mut rng), Err(Error::Contract(_))));
        model.class_label = Some(4);
        assert!(generate(&model, 0, &mut rng).unwrap().is_empty());
        // push the tanh layer into saturation on both sides
        let layers = model.generator.layers_mut();
        let last = layers.len() - 1;
        let b = layers[last].biases.as_mut_slice();
        for (i, v) in b.iter_mut().enumerate() {
            *v = if i % 2 == 0 { 50.0 } else { -50.0 };
        }
        let ds = generate(&model, 7, &mut rng).unwrap();
        assert_eq!(ds.len(), 7);
        assert!(ds.labels().iter().all(|&l| l == 4));
        assert!(ds.images().as_slice().iter().all(|&v| (0.0..=255.0).contains(&v) && v.fract() == 0.0));
        assert_eq!(ds.images().get(0, 0), 255.0);
        assert_eq!(ds.images().get(0, 1), 0.0);
    }

    #[test]
    fn train_rejects_bad_inputs() {
        let cfg = small_config();
        let raw = LabeledDataset::new(Matrix::zeros(8, IMAGE_PIXELS), vec![1; 8], PixelRange::Raw0_255).unwrap();
        assert!(matches!(train(&raw, &cfg, &mut ()), Err(Error::Input(_))));
        assert!(matches!(
            train(&LabeledDataset::empty(PixelRange::Sym1_1), &cfg, &mut ()),
            Err(Error::Input(_))
        ));
        let few = LabeledDataset::new(Matrix::zeros(2, IMAGE_PIXELS), vec![1; 2], PixelRange::Sym1_1).unwrap();
        assert!(matches!(train(&few, &cfg, &mut ()), Err(Error::Input(_))));
        let bad = TrainConfig { learning_rate: 0.0, ..cfg };
        assert!(train(&few, &bad, &mut ()).is_err());
    }

    #[test]
    fn non_finite_loss_names_epoch_and_batch() {
        let d = DiscStep { loss: f64::NAN, mean_d_real: 0.5, mean_d_fake: 0.5 };
        let g = GenStep { loss: 0.7, mean_d_fake: 0.5 };
        let msg = check_losses(12, 3, &d, &g).unwrap_err().to_string();
        assert!(msg.contains("epoch 12") && msg.contains("batch 3"), "{msg}");
        let d = DiscStep { loss: 1.3, ..d };
        assert!(check_losses(1, 1, &d, &g).is_ok());
    }
}
