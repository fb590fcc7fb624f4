#![allow(dead_code)]

use std::path::PathBuf;

use gantsne_core::dataset::{load_idx, LabeledDataset};
use gantsne_core::neural::{Activation, DenseNet};
use gantsne_core::numerics::{Matrix, RngState};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn fixture_paths() -> [PathBuf; 2] {
    let d = data_dir();
    [d.join("mnist-subset-images.idx"), d.join("mnist-subset-labels.idx")]
}

pub fn fixture() -> LabeledDataset {
    let [i, l] = fixture_paths();
    load_idx(i, l).unwrap()
}

pub fn random_matrix(rng: &mut RngState, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * rng.normal()).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Two 30-point Gaussian blobs in 10-D, centers 10 apart along every axis.
pub fn two_blobs(seed: u64) -> (Matrix, Vec<u8>) {
    let mut rng = RngState::new(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for c in 0..2u8 {
        for _ in 0..30 {
            rows.push((0..10).map(|_| 10.0 * f64::from(c) + rng.normal()).collect::<Vec<f64>>());
            labels.push(c);
        }
    }
    (Matrix::from_rows(&rows).unwrap(), labels)
}

/// `|a - b| <= tol * max(|a|, |b|)`, or both within `floor` of each other.
pub fn rel_close(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    let diff = (a - b).abs();
    diff <= floor || diff <= tol * a.abs().max(b.abs())
}

pub fn activation_from(k: u64) -> Activation {
    match k % 4 {
        0 => Activation::LeakyRelu(0.2),
        1 => Activation::Sigmoid,
        2 => Activation::Tanh,
        _ => Activation::Identity,
    }
}

pub fn random_net(rng: &mut RngState, dims: &[usize]) -> DenseNet {
    let acts: Vec<Activation> = (1..dims.len())
        .map(|_| activation_from((rng.uniform() * 4.0) as u64))
        .collect();
    DenseNet::init(dims, &acts, 0.7, rng).unwrap()
}

/// Scalar reference implementation of the exact t-SNE quantities, written
/// with plain loops and no shared code with the library.
pub mod reference {
    pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    fn row_for_sigma(x: &[Vec<f64>], i: usize, sigma: f64) -> Vec<f64> {
        let n = x.len();
        let d: Vec<f64> = (0..n).map(|j| sq_dist(&x[i], &x[j])).collect();
        let dmin = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
        let mut p: Vec<f64> = (0..n)
            .map(|j| if j == i { 0.0 } else { (-(d[j] - dmin) / (2.0 * sigma * sigma)).exp() })
            .collect();
        let s: f64 = p.iter().sum();
        for v in &mut p {
            *v /= s;
        }
        p
    }

    fn entropy_bits(p: &[f64]) -> f64 {
        -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum::<f64>()
    }

    /// Conditional `p(j|i)` with sigma found by bisection in log-sigma.
    pub fn conditional_p(x: &[Vec<f64>], perplexity: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let target = perplexity.log2();
        let mut rows = Vec::new();
        let mut sigmas = Vec::new();
        for i in 0..x.len() {
            let (mut lo, mut hi) = ((1e-20f64).ln(), (1e20f64).ln());
            for _ in 0..400 {
                let mid = 0.5 * (lo + hi);
                if entropy_bits(&row_for_sigma(x, i, mid.exp())) > target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let sigma = (0.5 * (lo + hi)).exp();
            rows.push(row_for_sigma(x, i, sigma));
            sigmas.push(sigma);
        }
        (rows, sigmas)
    }

    pub fn joint_p(cond: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = cond.len();
        let mut p = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    p[i][j] = ((cond[i][j] + cond[j][i]) / (2.0 * n as f64)).max(1e-12);
                }
            }
        }
        let s: f64 = p.iter().flatten().sum();
        for v in p.iter_mut().flatten() {
            *v /= s;
        }
        p
    }

    pub fn joint_q(y: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = y.len();
        let mut q = vec![vec![0.0; n]; n];
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    q[i][j] = 1.0 / (1.0 + sq_dist(&y[i], &y[j]));
                    s += q[i][j];
                }
            }
        }
        for v in q.iter_mut().flatten() {
            *v /= s;
        }
        q
    }

    pub fn kl(p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for (pr, qr) in p.iter().zip(q) {
            for (&a, &b) in pr.iter().zip(qr) {
                if a >= 1e-12 {
                    total += a * (a / b.max(1e-12)).ln();
                }
            }
        }
        total
    }

    /// `4 sum_j (P_ij - Q_ij) (1 + |y_i - y_j|^2)^-1 (y_i - y_j)`.
    pub fn gradient(p: &[Vec<f64>], y: &[Vec<f64>], exaggeration: f64) -> Vec<Vec<f64>> {
        let q = joint_q(y);
        let n = y.len();
        let d = y[0].len();
        let mut g = vec![vec![0.0; d]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = 1.0 / (1.0 + sq_dist(&y[i], &y[j]));
                for k in 0..d {
                    g[i][k] += 4.0 * (exaggeration * p[i][j] - q[i][j]) * w * (y[i][k] - y[j][k]);
                }
            }
        }
        g
    }

    /// Same schedule as the library: momentum 0.5 then 0.8 from iteration
    /// 250, exaggeration 12 for 250 iterations, recentering every step.
    pub fn optimize(p: &[Vec<f64>], mut y: Vec<Vec<f64>>, iterations: usize, learning_rate: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = y.len();
        let d = y[0].len();
        let recenter = |y: &mut Vec<Vec<f64>>| {
            for k in 0..d {
                let m = y.iter().map(|r| r[k]).sum::<f64>() / n as f64;
                for r in y.iter_mut() {
                    r[k] -= m;
                }
            }
        };
        recenter(&mut y);
        let mut vel = vec![vec![0.0; d]; n];
        let mut trace = Vec::new();
        for t in 0..iterations {
            let ex = if t < 250 { 12.0 } else { 1.0 };
            let mom = if t < 250 { 0.5 } else { 0.8 };
            let g = gradient(p, &y, ex);
            for i in 0..n {
                for k in 0..d {
                    vel[i][k] = mom * vel[i][k] - learning_rate * g[i][k];
                    y[i][k] += vel[i][k];
                }
            }
            recenter(&mut y);
            trace.push(kl(p, &joint_q(&y)));
        }
        (y, trace)
    }
}
