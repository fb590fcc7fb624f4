//! Binary checkpoint container for a [`GanModel`].
//!
//! All integers and floats are little-endian; floats are raw IEEE-754 bits so
//! a save/load round trip is bit-exact.
//!
//! ```text
//! magic            8 bytes  "GANTSNE\0"
//! version          u32      1
//! class_label      i32      -1 when absent
//! config           epochs u64, batch_size u64, learning_rate f64, noise_dim u64,
//!                  snapshot_every u64, snapshot_samples u64, snapshot_initial u8,
//!                  max_batches u64 (0 = none), seed u64
//! rng              seed u64, key [u8; 32], stream u64, word_pos u128
//! generator        network
//! discriminator    network
//! gen_opt          adam
//! disc_opt         adam
//! history          count u64, then per epoch: epoch u64, L_G f64, L_D f64,
//!                  mean_D_real f64, mean_D_fake f64
//!
//! network          layer count u32, then per layer:
//!                  in u32, out u32, activation u8 (0 leaky, 1 sigmoid, 2 tanh,
//!                  3 identity), slope f64 (0 unless leaky),
//!                  weights in*out f64 (row-major, in x out), biases out f64
//! adam             learning_rate f64, beta1 f64, beta2 f64, epsilon f64,
//!                  step_count u64, then per layer: m_w, v_w, m_b, v_b
//!                  (shapes as in the matching network)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gan::{EpochStats, GanModel, TrainConfig};
use crate::neural::{Activation, AdamState, DenseNet, Gradients, Layer, LayerGrad};
use crate::numerics::{Matrix, RngSnapshot, RngState};

pub const MAGIC: &[u8; 8] = b"GANTSNE\0";
pub const VERSION: u32 = 1;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn floats(&mut self, m: &Matrix) {
        for &v in m.as_slice() {
            self.f64(v);
        }
    }

    fn network(&mut self, net: &DenseNet) {
        self.u32(net.layers().len() as u32);
        for l in net.layers() {
            self.u32(l.input_dim() as u32);
            self.u32(l.output_dim() as u32);
            let (tag, slope) = match l.activation {
                Activation::LeakyRelu(s) => (0, s),
                Activation::Sigmoid => (1, 0.0),
                Activation::Tanh => (2, 0.0),
                Activation::Identity => (3, 0.0),
            };
            self.u8(tag);
            self.f64(slope);
            self.floats(&l.weights);
            self.floats(&l.biases);
        }
    }

    fn adam(&mut self, st: &AdamState) {
        self.f64(st.learning_rate);
        self.f64(st.beta1);
        self.f64(st.beta2);
        self.f64(st.epsilon);
        self.u64(st.step_count);
        for (m, v) in st.first_moment.layers.iter().zip(&st.second_moment.layers) {
            self.floats(&m.weights);
            self.floats(&v.weights);
            self.floats(&m.biases);
            self.floats(&v.biases);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Contract(format!("checkpoint truncated at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn arr<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.arr()?))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.arr()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.arr()?))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Contract("checkpoint count overflows usize".into()))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.arr()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.arr()?))
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let raw = self.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    fn network(&mut self) -> Result<DenseNet> {
        let n = self.u32()? as usize;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let input = self.u32()? as usize;
            let output = self.u32()? as usize;
            let tag = self.u8()?;
            let slope = self.f64()?;
            let activation = match tag {
                0 => Activation::LeakyRelu(slope),
                1 => Activation::Sigmoid,
                2 => Activation::Tanh,
                3 => Activation::Identity,
                t => return Err(Error::Contract(format!("unknown activation tag {t}"))),
            };
            let weights = self.matrix(input, output)?;
            let biases = self.matrix(1, output)?;
            layers.push(Layer {
                weights,
                biases,
                activation,
            });
        }
        DenseNet::new(layers)
    }

    fn adam(&mut self, net: &DenseNet) -> Result<AdamState> {
        let learning_rate = self.f64()?;
        let beta1 = self.f64()?;
        let beta2 = self.f64()?;
        let epsilon = self.f64()?;
        let step_count = self.u64()?;
        let mut first = Vec::new();
        let mut second = Vec::new();
        for l in net.layers() {
            let (i, o) = (l.input_dim(), l.output_dim());
            let mw = self.matrix(i, o)?;
            let vw = self.matrix(i, o)?;
            let mb = self.matrix(1, o)?;
            let vb = self.matrix(1, o)?;
            first.push(LayerGrad {
                weights: mw,
                biases: mb,
            });
            second.push(LayerGrad {
                weights: vw,
                biases: vb,
            });
        }
        Ok(AdamState {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step_count,
            first_moment: Gradients { layers: first },
            second_moment: Gradients { layers: second },
        })
    }
}

pub fn to_bytes(model: &GanModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.i32(model.class_label.map_or(-1, i32::from));

    let c = &model.config;
    w.usize(c.epochs);
    w.usize(c.batch_size);
    w.f64(c.learning_rate);
    w.usize(c.noise_dim);
    w.usize(c.snapshot_every);
    w.usize(c.snapshot_samples);
    w.u8(u8::from(c.snapshot_initial));
    w.usize(c.max_batches.unwrap_or(0));
    w.u64(c.seed);

    let snap = model.rng.snapshot();
    w.u64(model.rng.seed());
    w.buf.extend_from_slice(&snap.key);
    w.u64(snap.stream);
    w.u128(snap.word_pos);

    w.network(&model.generator);
    w.network(&model.discriminator);
    w.adam(&model.gen_opt);
    w.adam(&model.disc_opt);

    w.usize(model.history.len());
    for h in &model.history {
        w.usize(h.epoch);
        w.f64(h.gen_loss);
        w.f64(h.disc_loss);
        w.f64(h.mean_d_real);
        w.f64(h.mean_d_fake);
    }
    w.buf
}

pub fn from_bytes(bytes: &[u8]) -> Result<GanModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Contract("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Contract(format!("unsupported checkpoint version {version}")));
    }
    let class_label = match r.i32()? {
        -1 => None,
        l @ 0..=9 => Some(l as u8),
        l => return Err(Error::Contract(format!("invalid class label {l}"))),
    };

    let config = TrainConfig {
        epochs: r.usize()?,
        batch_size: r.usize()?,
        learning_rate: r.f64()?,
        noise_dim: r.usize()?,
        snapshot_every: r.usize()?,
        snapshot_samples: r.usize()?,
        snapshot_initial: r.u8()? != 0,
        max_batches: Some(r.usize()?).filter(|&m| m != 0),
        seed: r.u64()?,
    };

    let rng_seed = r.u64()?;
    let snap = RngSnapshot {
        key: r.arr()?,
        stream: r.u64()?,
        word_pos: r.u128()?,
    };
    let rng = RngState::restore(rng_seed, &snap);

    let generator = r.network()?;
    let discriminator = r.network()?;
    let gen_opt = r.adam(&generator)?;
    let disc_opt = r.adam(&discriminator)?;

    let n = r.usize()?;
    let mut history = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        history.push(EpochStats {
            epoch: r.usize()?,
            gen_loss: r.f64()?,
            disc_loss: r.f64()?,
            mean_d_real: r.f64()?,
            mean_d_fake: r.f64()?,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Contract(format!(
            "{} unexpected trailing bytes in checkpoint",
            bytes.len() - r.pos
        )));
    }

    Ok(GanModel {
        generator,
        discriminator,
        gen_opt,
        disc_opt,
        history,
        class_label,
        config,
        rng,
    })
}

pub fn save(model: &GanModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<GanModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
