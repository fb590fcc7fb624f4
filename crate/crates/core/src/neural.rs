//! Dense feed-forward networks: batched forward pass with an activation tape,
//! exact reverse-mode gradients, binary cross-entropy and Adam.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gemm, Matrix, Op, RngState};

/// Predictions are clamped into `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;
pub const WEIGHT_INIT_STD: f64 = 0.02;
pub const LEAKY_SLOPE: f64 = 0.2;

pub const ADAM_BETA1: f64 = 0.5;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;
pub const ADAM_LEARNING_RATE: f64 = 0.0002;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if x >= 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `z` with output `y = apply(z)`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if z >= 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// One fully connected layer: `f(x W + b)` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub biases: Matrix,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }
}

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn next_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Stack of dense layers. Every parameter change re-stamps the network so a
/// [`Tape`] recorded before the change is rejected by `backward`.
#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<Layer>,
    stamp: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Input("a network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.biases.shape() != (1, l.output_dim()) {
                return Err(Error::Shape {
                    op: "layer biases",
                    left: (1, l.output_dim()),
                    right: l.biases.shape(),
                });
            }
            if k > 0 && layers[k - 1].output_dim() != l.input_dim() {
                return Err(Error::Shape {
                    op: "layer chain",
                    left: layers[k - 1].weights.shape(),
                    right: l.weights.shape(),
                });
            }
            if !l.weights.is_finite() || !l.biases.is_finite() {
                return Err(Error::Numerical(format!("layer {k} has non-finite parameters")));
            }
        }
        Ok(Self {
            layers,
            stamp: next_stamp(),
        })
    }

    /// Weights drawn from `N(0, std^2)`, biases zero. `dims` has one more entry
    /// than `activations`.
    pub fn init(dims: &[usize], activations: &[Activation], std: f64, rng: &mut RngState) -> Result<Self> {
        if dims.len() != activations.len() + 1 {
            return Err(Error::Input(format!(
                "{} layer widths cannot describe {} layers",
                dims.len(),
                activations.len()
            )));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let data = (0..w[0] * w[1]).map(|_| std * rng.normal()).collect();
                Layer {
                    weights: Matrix::from_vec(w[0], w[1], data).unwrap(),
                    biases: Matrix::zeros(1, w[1]),
                    activation,
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.rows() * l.weights.cols() + l.biases.cols())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.biases.is_finite())
    }

    /// Mutable access to the parameters; re-stamps the network.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.stamp = next_stamp();
        &mut self.layers
    }

    fn affine(layer: &Layer, x: &Matrix) -> Result<Matrix> {
        let mut z = Matrix::zeros(x.rows(), layer.output_dim());
        let b = layer.biases.as_slice();
        for i in 0..x.rows() {
            z.row_mut(i).copy_from_slice(b);
        }
        gemm(1.0, x, Op::N, &layer.weights, Op::N, 1.0, &mut z)?;
        Ok(z)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "forward",
                left: x.shape(),
                right: self.layers[0].weights.shape(),
            });
        }
        Ok(())
    }

    /// Batched forward pass that records what `backward` needs.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Tape)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let z = Self::affine(layer, &a)?;
            let out = z.map(|v| layer.activation.apply(v));
            inputs.push(std::mem::replace(&mut a, out));
            pre.push(z);
        }
        let tape = Tape {
            stamp: self.stamp,
            inputs,
            pre,
            output: a.clone(),
        };
        Ok((a, tape))
    }

    /// Forward pass without a tape.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut a = x.clone();
        for layer in &self.layers {
            let mut z = Self::affine(layer, &a)?;
            for v in z.as_mut_slice() {
                *v = layer.activation.apply(*v);
            }
            a = z;
        }
        Ok(a)
    }

    fn check_tape(&self, tape: &Tape, upstream: &Matrix) -> Result<()> {
        if tape.stamp != self.stamp || tape.pre.len() != self.layers.len() {
            return Err(Error::Contract(
                "tape was not recorded by this network's current parameters".into(),
            ));
        }
        if upstream.shape() != tape.output.shape() {
            return Err(Error::Shape {
                op: "backward",
                left: tape.output.shape(),
                right: upstream.shape(),
            });
        }
        Ok(())
    }

    fn backprop(&self, tape: &Tape, upstream: &Matrix, want_params: bool, want_input: bool) -> Result<(Option<Gradients>, Option<Matrix>)> {
        self.check_tape(tape, upstream)?;
        let n_layers = self.layers.len();
        let mut grads: Vec<Option<LayerGrad>> = vec![None; n_layers];
        let mut delta = upstream.clone();
        let mut input_grad = None;

        for k in (0..n_layers).rev() {
            let layer = &self.layers[k];
            let z = &tape.pre[k];
            let y = if k + 1 < n_layers {
                &tape.inputs[k + 1]
            } else {
                &tape.output
            };
            for ((d, &zv), &yv) in delta
                .as_mut_slice()
                .iter_mut()
                .zip(z.as_slice())
                .zip(y.as_slice())
            {
                *d *= layer.activation.derivative(zv, yv);
            }

            if want_params {
                let x = &tape.inputs[k];
                let mut dw = Matrix::zeros(layer.input_dim(), layer.output_dim());
                gemm(1.0, x, Op::T, &delta, Op::N, 0.0, &mut dw)?;
                let mut db = Matrix::zeros(1, layer.output_dim());
                for r in delta.row_iter() {
                    for (acc, &v) in db.as_mut_slice().iter_mut().zip(r) {
                        *acc += v;
                    }
                }
                grads[k] = Some(LayerGrad {
                    weights: dw,
                    biases: db,
                });
            }

            if k > 0 || want_input {
                let mut dx = Matrix::zeros(delta.rows(), layer.input_dim());
                gemm(1.0, &delta, Op::N, &layer.weights, Op::T, 0.0, &mut dx)?;
                if k == 0 {
                    input_grad = Some(dx);
                    break;
                }
                delta = dx;
            }
        }

        let grads = want_params.then(|| Gradients {
            layers: grads.into_iter().map(Option::unwrap).collect(),
        });
        Ok((grads, input_grad))
    }

    /// Exact gradients of the loss w.r.t. every weight and bias, given the
    /// loss gradient w.r.t. the network output.
    pub fn backward(&self, tape: &Tape, dloss_doutput: &Matrix) -> Result<Gradients> {
        Ok(self.backprop(tape, dloss_doutput, true, false)?.0.unwrap())
    }

    /// Gradient w.r.t. the network input only; parameters are treated as constants.
    pub fn input_gradient(&self, tape: &Tape, dloss_doutput: &Matrix) -> Result<Matrix> {
        Ok(self.backprop(tape, dloss_doutput, false, true)?.1.unwrap())
    }

    pub fn backward_with_input(&self, tape: &Tape, dloss_doutput: &Matrix) -> Result<(Gradients, Matrix)> {
        let (g, dx) = self.backprop(tape, dloss_doutput, true, true)?;
        Ok((g.unwrap(), dx.unwrap()))
    }
}

/// Activations cached by [`DenseNet::forward`].
#[derive(Debug, Clone)]
pub struct Tape {
    stamp: u64,
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    output: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub biases: Matrix,
}

/// Per-layer parameter gradients, shaped like the network they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Matrix::zeros(l.input_dim(), l.output_dim()),
                    biases: Matrix::zeros(1, l.output_dim()),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weights.is_finite() && g.biases.is_finite())
    }

    fn matches(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.shape() == l.weights.shape() && g.biases.shape() == l.biases.shape()
            })
    }
}

/// Mean binary cross-entropy over all elements, with its gradient w.r.t. the
/// predictions. Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]` and the
/// gradient is evaluated at the clamped value.
pub fn bce_loss(predictions: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if predictions.shape() != targets.shape() {
        return Err(Error::Shape {
            op: "bce_loss",
            left: predictions.shape(),
            right: targets.shape(),
        });
    }
    let n = predictions.as_slice().len();
    if n == 0 {
        return Err(Error::Input("bce_loss on an empty batch".into()));
    }
    let scale = 1.0 / n as f64;
    let mut grad = Matrix::zeros(predictions.rows(), predictions.cols());
    let mut total = 0.0;
    for ((g, &p), &t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(predictions.as_slice())
        .zip(targets.as_slice())
    {
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        *g = scale * ((1.0 - t) / (1.0 - p) - t / p);
    }
    Ok((total * scale, grad))
}

/// First/second moment estimates for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
}

impl AdamState {
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            step_count: 0,
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
        }
    }
}

/// One bias-corrected Adam step: `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_apply(net: &mut DenseNet, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if !grads.matches(net) || !state.first_moment.matches(net) || !state.second_moment.matches(net) {
        return Err(Error::Shape {
            op: "adam_apply",
            left: (net.layers.len(), net.param_count()),
            right: (grads.layers.len(), 0),
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps) = (state.learning_rate, state.epsilon);

    let update = |theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for (((p, &g), m), v) in theta.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    };

    let layers = net.layers_mut();
    for (k, layer) in layers.iter_mut().enumerate() {
        let g = &grads.layers[k];
        let m = &mut state.first_moment.layers[k];
        let v = &mut state.second_moment.layers[k];
        update(
            layer.weights.as_mut_slice(),
            g.weights.as_slice(),
            m.weights.as_mut_slice(),
            v.weights.as_mut_slice(),
        );
        update(
            layer.biases.as_mut_slice(),
            g.biases.as_slice(),
            m.biases.as_mut_slice(),
            v.biases.as_mut_slice(),
        );
    }
    Ok(())
}
