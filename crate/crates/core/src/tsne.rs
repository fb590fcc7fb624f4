//! Exact t-SNE.
//!
//! Input affinities are Gaussian conditionals whose per-point bandwidth is
//! found by bisection on the row entropy, symmetrized into a joint
//! distribution `P`. Output affinities `Q` use a Student-t kernel with one
//! degree of freedom. The embedding descends `KL(P || Q)` with momentum and
//! early exaggeration. Everything is O(N^2) in memory and time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{pairwise_sq_dists, Matrix, RngState};

/// Floor applied to joint `P` entries and to `Q` inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;
/// Maximum allowed `|log2(perplexity) - H(P_i)|`.
pub const ENTROPY_TOLERANCE: f64 = 1e-5;
pub const MAX_BISECTION_STEPS: usize = 50;
/// Standard deviation of the initial embedding coordinates.
pub const INIT_STD: f64 = 1e-2;

const BRACKET_STEPS: usize = 200;
const ENTROPY_STOP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AffinityKind {
    ConditionalP,
    JointP,
    JointQ,
}

/// Square matrix of pairwise probabilities with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    kind: AffinityKind,
    values: Matrix,
}

impl AffinityMatrix {
    pub fn kind(&self) -> AffinityKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    /// Wraps a matrix without validating its normalization.
    pub fn from_values(kind: AffinityKind, values: Matrix) -> Result<Self> {
        if values.rows() != values.cols() {
            return Err(Error::Shape {
                op: "affinity matrix",
                left: values.shape(),
                right: (values.rows(), values.rows()),
            });
        }
        Ok(Self { kind, values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub out_dims: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Iteration at which momentum switches to `final_momentum`.
    pub momentum_switch: usize,
    pub early_exaggeration: f64,
    /// `P` is multiplied by `early_exaggeration` for this many iterations.
    pub exaggeration_iterations: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            out_dims: 2,
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(2..=3).contains(&self.out_dims) {
            return Err(Error::Input(format!("out_dims must be 2 or 3, got {}", self.out_dims)));
        }
        if n < 3 {
            return Err(Error::Input(format!("t-SNE needs at least 3 points, got {n}")));
        }
        if !(self.perplexity > 1.0 && self.perplexity < n as f64) {
            return Err(Error::Input(format!(
                "perplexity must lie in (1, {n}), got {}",
                self.perplexity
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Input(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.early_exaggeration > 0.0) {
            return Err(Error::Input("early exaggeration must be positive".into()));
        }
        Ok(())
    }
}

/// Low-dimensional coordinates plus `KL(P || Q)` after every iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub points: Matrix,
    pub kl_trace: Vec<f64>,
}

/// Entropy (bits) and normalized row for precision `beta` over shifted distances.
fn row_entropy(shifted: &[f64], beta: f64, row: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for (w, &d) in row.iter_mut().zip(shifted) {
        *w = (-beta * d).exp();
        sum += *w;
    }
    let mut weighted = 0.0;
    for (w, &d) in row.iter_mut().zip(shifted) {
        *w /= sum;
        weighted += *w * d;
    }
    (sum.ln() + beta * weighted) / std::f64::consts::LN_2
}

/// Precision `beta = 1 / (2 sigma^2)` whose row entropy hits `target` bits.
fn calibrate_row(shifted: &[f64], target: f64, row: &mut [f64]) -> f64 {
    let mut beta = 1.0;
    if shifted.iter().all(|&d| d == 0.0) {
        // all neighbours equidistant: every beta gives the uniform row
        row_entropy(shifted, beta, row);
        return beta;
    }
    let mut h = row_entropy(shifted, beta, row);
    let (mut lo, mut hi);
    if h > target {
        lo = beta;
        for _ in 0..BRACKET_STEPS {
            beta *= 2.0;
            h = row_entropy(shifted, beta, row);
            if h <= target {
                break;
            }
            lo = beta;
        }
        hi = beta;
    } else {
        hi = beta;
        for _ in 0..BRACKET_STEPS {
            beta *= 0.5;
            h = row_entropy(shifted, beta, row);
            if h >= target {
                break;
            }
            hi = beta;
        }
        lo = beta;
    }
    let mut best = (f64::INFINITY, beta);
    for _ in 0..MAX_BISECTION_STEPS {
        let err = (h - target).abs();
        if err < best.0 {
            best = (err, beta);
        }
        if err < ENTROPY_STOP {
            break;
        }
        if h > target {
            lo = beta;
        } else {
            hi = beta;
        }
        beta = 0.5 * (lo + hi);
        h = row_entropy(shifted, beta, row);
    }
    if (h - target).abs() > best.0 {
        beta = best.1;
        row_entropy(shifted, beta, row);
    }
    beta
}

/// Row-stochastic Gaussian affinities `p(j|i)` from squared distances, plus
/// the per-point bandwidths `sigma_i`.
pub fn conditional_p_from_sq_dists(d: &Matrix, perplexity: f64) -> Result<(AffinityMatrix, Vec<f64>)> {
    let n = d.rows();
    if d.cols() != n {
        return Err(Error::Shape {
            op: "conditional_p",
            left: d.shape(),
            right: (n, n),
        });
    }
    if n < 3 {
        return Err(Error::Input(format!("need at least 3 points, got {n}")));
    }
    if !(perplexity > 0.0 && perplexity < n as f64) {
        return Err(Error::Input(format!(
            "perplexity {perplexity} must lie in (0, {n})"
        )));
    }
    if d.as_slice().iter().all(|&v| v == 0.0) {
        return Err(Error::Input("all points coincide; affinities are undefined".into()));
    }

    let target = perplexity.log2();
    let mut p = Matrix::zeros(n, n);
    let mut sigmas = Vec::with_capacity(n);
    let mut shifted = Vec::with_capacity(n - 1);
    let mut row = vec![0.0; n - 1];
    for i in 0..n {
        shifted.clear();
        shifted.extend((0..n).filter(|&j| j != i).map(|j| d.get(i, j)));
        let min = shifted.iter().copied().fold(f64::INFINITY, f64::min);
        for v in &mut shifted {
            *v -= min;
        }
        let beta = calibrate_row(&shifted, target, &mut row);
        sigmas.push((0.5 / beta).sqrt());
        let out = p.row_mut(i);
        let mut it = row.iter();
        for (j, v) in out.iter_mut().enumerate() {
            if j != i {
                *v = *it.next().unwrap();
            }
        }
    }
    Ok((
        AffinityMatrix {
            kind: AffinityKind::ConditionalP,
            values: p,
        },
        sigmas,
    ))
}

pub fn conditional_p(x: &Matrix, perplexity: f64) -> Result<(AffinityMatrix, Vec<f64>)> {
    if x.rows() < 3 {
        return Err(Error::Input(format!("need at least 3 points, got {}", x.rows())));
    }
    conditional_p_from_sq_dists(&pairwise_sq_dists(x)?, perplexity)
}

/// `P_ij = (p(j|i) + p(i|j)) / 2N`, off-diagonal entries floored at
/// [`PROB_FLOOR`], then renormalized to sum to one.
pub fn symmetrize_p(p: &AffinityMatrix) -> Result<AffinityMatrix> {
    if p.kind != AffinityKind::ConditionalP {
        return Err(Error::Contract(format!("expected conditional affinities, got {:?}", p.kind)));
    }
    let n = p.n();
    let c = &p.values;
    let mut out = Matrix::zeros(n, n);
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = ((c.get(i, j) + c.get(j, i)) * scale).max(PROB_FLOOR);
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    let total = out.sum();
    for v in out.as_mut_slice() {
        *v /= total;
    }
    Ok(AffinityMatrix {
        kind: AffinityKind::JointP,
        values: out,
    })
}

/// Student-t numerators `(1 + |y_i - y_j|^2)^-1` with a zero diagonal.
fn student_numerators(y: &Matrix) -> Result<Matrix> {
    let mut num = pairwise_sq_dists(y)?;
    let n = num.rows();
    for i in 0..n {
        for j in 0..n {
            let v = if i == j { 0.0 } else { 1.0 / (1.0 + num.get(i, j)) };
            num.set(i, j, v);
        }
    }
    Ok(num)
}

fn normalize_q(num: &Matrix) -> AffinityMatrix {
    let total = num.sum().max(PROB_FLOOR);
    AffinityMatrix {
        kind: AffinityKind::JointQ,
        values: num.map(|v| v / total),
    }
}

/// Joint Student-t affinities over all ordered pairs, plus the unnormalized
/// numerators for gradient reuse.
pub fn joint_q(y: &Matrix) -> Result<(AffinityMatrix, Matrix)> {
    let num = student_numerators(y)?;
    Ok((normalize_q(&num), num))
}

/// `sum_{i != j} P_ij ln(P_ij / Q_ij)`, skipping entries with `P_ij` below the floor.
pub fn kl_divergence(p: &AffinityMatrix, q: &AffinityMatrix) -> Result<f64> {
    if p.values.shape() != q.values.shape() {
        return Err(Error::Shape {
            op: "kl_divergence",
            left: p.values.shape(),
            right: q.values.shape(),
        });
    }
    let n = p.n();
    let mut kl = 0.0;
    for i in 0..n {
        let pr = p.values.row(i);
        let qr = q.values.row(i);
        for j in 0..n {
            let pij = pr[j];
            if j == i || pij < PROB_FLOOR {
                continue;
            }
            kl += pij * (pij / qr[j].max(PROB_FLOOR)).ln();
        }
    }
    Ok(kl)
}

/// `4 sum_j (s P_ij - Q_ij)(y_i - y_j) num_ij` for exaggeration `s`.
fn gradient_with(p: &Matrix, scale: f64, q: &Matrix, num: &Matrix, y: &Matrix) -> Matrix {
    let (n, d) = y.shape();
    let mut grad = Matrix::zeros(n, d);
    let mut acc = vec![0.0; d];
    for i in 0..n {
        let (pr, qr, nr) = (p.row(i), q.row(i), num.row(i));
        let yi = y.row(i);
        acc.fill(0.0);
        for j in (0..n).filter(|&j| j != i) {
            let m = (scale * pr[j] - qr[j]) * nr[j];
            for ((a, &u), &v) in acc.iter_mut().zip(yi).zip(y.row(j)) {
                *a += m * (u - v);
            }
        }
        for (g, &a) in grad.row_mut(i).iter_mut().zip(&acc) {
            *g = 4.0 * a;
        }
    }
    grad
}

/// Gradient of `KL(P || Q(y))` w.r.t. every embedding coordinate.
pub fn kl_gradient(p: &AffinityMatrix, y: &Matrix) -> Result<Matrix> {
    if p.n() != y.rows() {
        return Err(Error::Shape {
            op: "kl_gradient",
            left: p.values.shape(),
            right: y.shape(),
        });
    }
    let (q, num) = joint_q(y)?;
    Ok(gradient_with(&p.values, 1.0, &q.values, &num, y))
}

fn recenter(y: &mut Matrix) {
    let (n, d) = y.shape();
    for k in 0..d {
        let mean = (0..n).map(|i| y.get(i, k)).sum::<f64>() / n as f64;
        for i in 0..n {
            let v = y.get(i, k) - mean;
            y.set(i, k, v);
        }
    }
}

/// Initial coordinates, drawn row by row from `N(0, INIT_STD^2)`.
pub fn initial_embedding(n: usize, dims: usize, seed: u64) -> Matrix {
    let mut rng = RngState::new(seed);
    let data = (0..n * dims).map(|_| INIT_STD * rng.normal()).collect();
    Matrix::from_vec(n, dims, data).unwrap()
}

/// Joint input affinities for `x` at the configured perplexity.
pub fn input_affinities(x: &Matrix, perplexity: f64) -> Result<AffinityMatrix> {
    let (cond, _) = conditional_p(x, perplexity)?;
    symmetrize_p(&cond)
}

/// Embeds the rows of `x`.
pub fn run_tsne(x: &Matrix, config: &TsneConfig) -> Result<Embedding> {
    config.validate(x.rows())?;
    let init = initial_embedding(x.rows(), config.out_dims, config.seed);
    run_tsne_from(x, init, config)
}

/// Embeds the rows of `x` starting from the given coordinates.
pub fn run_tsne_from(x: &Matrix, init: Matrix, config: &TsneConfig) -> Result<Embedding> {
    config.validate(x.rows())?;
    if init.shape() != (x.rows(), config.out_dims) {
        return Err(Error::Shape {
            op: "run_tsne init",
            left: init.shape(),
            right: (x.rows(), config.out_dims),
        });
    }
    let p = input_affinities(x, config.perplexity)?;
    optimize(&p, init, config)
}

/// Gradient descent with momentum on `KL(P || Q)`.
///
/// `y <- y - eta * grad + momentum * (y_t - y_{t-1})`, with `P` exaggerated
/// for the first iterations and the embedding recentered to zero mean after
/// every step. The recorded KL always uses the unexaggerated `P`.
pub fn optimize(p: &AffinityMatrix, y: Matrix, config: &TsneConfig) -> Result<Embedding> {
    optimize_with(p, y, config, &mut |_, _| {})
}

/// [`optimize`] reporting `(iteration, kl)` after every iteration.
pub fn optimize_with(p: &AffinityMatrix, mut y: Matrix, config: &TsneConfig, progress: &mut dyn FnMut(usize, f64)) -> Result<Embedding> {
    if p.kind != AffinityKind::JointP {
        return Err(Error::Contract(format!("expected joint P, got {:?}", p.kind)));
    }
    config.validate(y.rows())?;
    if p.n() != y.rows() {
        return Err(Error::Shape {
            op: "optimize",
            left: p.values.shape(),
            right: y.shape(),
        });
    }
    recenter(&mut y);
    let mut velocity = Matrix::zeros(y.rows(), y.cols());
    let (mut q, mut num) = joint_q(&y)?;
    let mut kl_trace = Vec::with_capacity(config.iterations);

    for t in 0..config.iterations {
        let scale = if t < config.exaggeration_iterations {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if t < config.momentum_switch {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        let grad = gradient_with(&p.values, scale, &q.values, &num, &y);
        for ((v, &g), yv) in velocity
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice())
            .zip(y.as_mut_slice())
        {
            *v = momentum * *v - config.learning_rate * g;
            *yv += *v;
        }
        recenter(&mut y);
        if !y.is_finite() {
            return Err(Error::Numerical(format!(
                "embedding became non-finite at iteration {}",
                t + 1
            )));
        }
        (q, num) = joint_q(&y)?;
        let kl = kl_divergence(p, &q)?;
        progress(t + 1, kl);
        kl_trace.push(kl);
    }
    Ok(Embedding { points: y, kl_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rand_normal;

    // pairwise squared distances are exactly 2
    fn equilateral() -> Matrix {
        Matrix::identity(3)
    }

    #[test]
    fn equilateral_rows_are_uniform() {
        for perp in [1.5, 2.0, 2.9] {
            let (p, _) = conditional_p(&equilateral(), perp).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { 0.0 } else { 0.5 };
                    assert!((p.get(i, j) - expect).abs() < 1e-15);
                }
            }
            let joint = symmetrize_p(&p).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        assert!((joint.get(i, j) - 1.0 / 6.0).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn coincident_points_are_rejected() {
        let x = Matrix::filled(4, 3, 1.5);
        let err = conditional_p(&x, 2.0).unwrap_err();
        assert!(err.to_string().contains("coincide"));
    }

    #[test]
    fn conditional_rejects_bad_perplexity() {
        let x = rand_normal(&mut RngState::new(1), 5, 2);
        assert!(conditional_p(&x, 5.0).is_err());
        assert!(conditional_p(&x, 0.0).is_err());
    }

    #[test]
    fn entropy_hits_target() {
        let x = rand_normal(&mut RngState::new(2), 40, 5);
        let perp = 7.5;
        let (p, _) = conditional_p(&x, perp).unwrap();
        for i in 0..40 {
            let h: f64 = p.values().row(i).iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum();
            assert!((h - perp.log2()).abs() <= ENTROPY_TOLERANCE, "row {i}: {h}");
        }
    }

    #[test]
    fn two_coincident_points_q() {
        let y = Matrix::zeros(2, 2);
        let (q, num) = joint_q(&y).unwrap();
        assert_eq!(q.get(0, 1), 0.5);
        assert_eq!(q.get(1, 0), 0.5);
        assert_eq!(q.get(0, 0), 0.0);
        assert_eq!(num.get(0, 1), 1.0);
    }

    #[test]
    fn equilateral_q_is_uniform() {
        let (q, _) = joint_q(&equilateral()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!((q.get(i, j) - 1.0 / 6.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let (q, _) = joint_q(&rand_normal(&mut RngState::new(3), 9, 2)).unwrap();
        let p = AffinityMatrix::from_values(AffinityKind::JointP, q.values().clone()).unwrap();
        assert!(kl_divergence(&p, &q).unwrap().abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_when_p_equals_q() {
        let y = equilateral();
        let (q, _) = joint_q(&y).unwrap();
        let p = AffinityMatrix::from_values(AffinityKind::JointP, q.values().clone()).unwrap();
        let g = kl_gradient(&p, &y).unwrap();
        assert!(g.as_slice().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn gradient_translation_invariant() {
        let mut rng = RngState::new(4);
        let x = rand_normal(&mut rng, 7, 4);
        let p = input_affinities(&x, 3.0).unwrap();
        let y = rand_normal(&mut rng, 7, 3);
        let shifted = Matrix::from_rows(&y.to_rows().iter().map(|r| vec![r[0] + 0.75, r[1] - 2.0, r[2] + 0.125]).collect::<Vec<_>>()).unwrap();
        let a = kl_gradient(&p, &y).unwrap();
        let b = kl_gradient(&p, &shifted).unwrap();
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let c = TsneConfig::default();
        assert!(c.validate(31).is_ok());
        assert!(c.validate(30).is_err());
        assert!(TsneConfig { out_dims: 4, ..c.clone() }.validate(100).is_err());
        assert!(TsneConfig { perplexity: 1.0, ..c }.validate(100).is_err());
    }

    #[test]
    fn trace_length_and_zero_mean() {
        let x = rand_normal(&mut RngState::new(5), 20, 4);
        let cfg = TsneConfig { perplexity: 5.0, iterations: 30, seed: 1, ..TsneConfig::default() };
        let e = run_tsne(&x, &cfg).unwrap();
        assert_eq!(e.kl_trace.len(), 30);
        for k in 0..2 {
            let m: f64 = (0..20).map(|i| e.points.get(i, k)).sum::<f64>() / 20.0;
            assert!(m.abs() < 1e-10);
        }
    }
}
