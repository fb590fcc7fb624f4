//! Dense matrices, GEMM kernels and the seeded random stream shared by the
//! rest of the crate.
//!
//! The random stream is ChaCha8 (`rand_chacha`), a counter-based generator
//! whose output depends only on the 32-byte key, the stream id and the word
//! position. All three are exposed through [`RngSnapshot`] so a stream can be
//! checkpointed and resumed bit-exactly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Input(format!(
                "buffer of length {} cannot hold a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Input(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        // empty matrices stack with anything
        if self.rows == 0 {
            return Ok(other.clone());
        }
        if other.rows == 0 {
            return Ok(self.clone());
        }
        if self.cols != other.cols {
            return Err(Error::Shape {
                op: "vstack",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }
}

/// How an operand is read by [`gemm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// `c = alpha * op(a) * op(b) + beta * c`
pub fn gemm(alpha: f64, a: &Matrix, op_a: Op, b: &Matrix, op_b: Op, beta: f64, c: &mut Matrix) -> Result<()> {
    let (m, k, rsa, csa) = match op_a {
        Op::N => (a.rows, a.cols, a.cols as isize, 1),
        Op::T => (a.cols, a.rows, 1, a.cols as isize),
    };
    let (kb, n, rsb, csb) = match op_b {
        Op::N => (b.rows, b.cols, b.cols as isize, 1),
        Op::T => (b.cols, b.rows, 1, b.cols as isize),
    };
    if k != kb {
        return Err(Error::Shape {
            op: "matmul",
            left: (m, k),
            right: (kb, n),
        });
    }
    if c.rows != m || c.cols != n {
        return Err(Error::Shape {
            op: "matmul output",
            left: (m, n),
            right: c.shape(),
        });
    }
    if m == 0 || n == 0 {
        return Ok(());
    }
    if k == 0 {
        for v in &mut c.data {
            *v *= beta;
        }
        return Ok(());
    }
    // SAFETY: the strides above describe exactly the row-major buffers of
    // `a`, `b` and `c`, whose lengths were validated against (m, k, n).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
    Ok(())
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm(1.0, a, Op::N, b, Op::N, 0.0, &mut c)?;
    Ok(c)
}

/// Squared Euclidean distances between all pairs of rows.
///
/// Uses `|a|^2 + |b|^2 - 2 a.b`; negative round-off is clamped to zero, the
/// diagonal is exactly zero and the result is exactly symmetric.
pub fn pairwise_sq_dists(x: &Matrix) -> Result<Matrix> {
    let n = x.rows;
    if n < 2 {
        return Err(Error::Input(format!(
            "pairwise distances need at least 2 rows, got {n}"
        )));
    }
    let mut gram = Matrix::zeros(n, n);
    gemm(1.0, x, Op::N, x, Op::T, 0.0, &mut gram)?;
    let norms: Vec<f64> = x.row_iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (norms[i] + norms[j] - 2.0 * gram.data[i * n + j]).max(0.0);
            d.data[i * n + j] = v;
            d.data[j * n + i] = v;
        }
    }
    Ok(d)
}

/// Serializable position of an [`RngState`] stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub key: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

/// Seeded ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The seed this stream was created from (0 when restored from a snapshot
    /// that did not carry one).
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent stream keyed by the same seed; `stream` selects one of
    /// 2^64 non-overlapping ChaCha streams.
    pub fn fork(&self, stream: u64) -> RngState {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        RngState {
            seed: self.seed,
            inner,
        }
    }

    pub fn snapshot(&self) -> RngSnapshot {
        RngSnapshot {
            key: self.inner.get_seed(),
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn restore(seed: u64, snap: &RngSnapshot) -> Self {
        let mut inner = ChaCha8Rng::from_seed(snap.key);
        inner.set_stream(snap.stream);
        inner.set_word_pos(snap.word_pos);
        Self { seed, inner }
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `k` distinct indices from `0..n`, in sampled order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, k).into_vec()
    }
}

/// i.i.d. standard normal samples, filled row-major.
pub fn rand_normal(rng: &mut RngState, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.normal()).collect();
    Matrix { rows, cols, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                c.set(i, j, s);
            }
        }
        c
    }

    fn random(rng: &mut RngState, r: usize, c: usize) -> Matrix {
        rand_normal(rng, r, c)
    }

    #[test]
    fn matmul_small_hand_case() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[5.0], [6.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c, Matrix::from_rows(&[[17.0], [39.0]]).unwrap());
        assert_eq!(c, naive_matmul(&a, &b));
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut rng = RngState::new(1);
        let a = random(&mut rng, 3, 3);
        assert_eq!(matmul(&Matrix::identity(3), &a).unwrap(), a);
        assert_eq!(matmul(&a, &Matrix::identity(3)).unwrap(), a);
        let z = matmul(&Matrix::zeros(2, 2), &random(&mut rng, 2, 4)).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn gemm_transposes_match_naive() {
        let mut rng = RngState::new(3);
        let a = random(&mut rng, 7, 5);
        let b = random(&mut rng, 7, 4);
        let mut c = Matrix::zeros(5, 4);
        gemm(1.0, &a, Op::T, &b, Op::N, 0.0, &mut c).unwrap();
        let expect = naive_matmul(&a.transpose(), &b);
        for (x, y) in c.as_slice().iter().zip(expect.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        let d = random(&mut rng, 6, 5);
        let mut e = Matrix::zeros(7, 6);
        gemm(1.0, &a, Op::N, &d, Op::T, 0.0, &mut e).unwrap();
        let expect = naive_matmul(&a, &d.transpose());
        for (x, y) in e.as_slice().iter().zip(expect.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rand_normal_is_seeded() {
        let a = rand_normal(&mut RngState::new(7), 1, 100);
        let b = rand_normal(&mut RngState::new(7), 1, 100);
        let c = rand_normal(&mut RngState::new(8), 1, 100);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rand_normal_moments() {
        let m = rand_normal(&mut RngState::new(2024), 1, 100_000);
        let mean = m.mean();
        let var = m.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m.cols() - 1) as f64;
        assert!(mean.abs() <= 0.02, "mean {mean}");
        assert!((0.97..=1.03).contains(&var), "var {var}");
    }

    #[test]
    fn snapshot_resumes_stream() {
        let mut rng = RngState::new(11);
        for _ in 0..37 {
            rng.normal();
        }
        let snap = rng.snapshot();
        let mut resumed = RngState::restore(11, &snap);
        for _ in 0..50 {
            assert_eq!(rng.normal().to_bits(), resumed.normal().to_bits());
        }
    }

    #[test]
    fn forks_differ() {
        let base = RngState::new(5);
        let mut a = base.fork(1);
        let mut b = base.fork(2);
        assert_ne!(a.normal(), b.normal());
    }

    #[test]
    fn pairwise_hand_cases() {
        let x = Matrix::from_rows(&[[1.5, -2.0], [1.5, -2.0]]).unwrap();
        assert_eq!(pairwise_sq_dists(&x).unwrap(), Matrix::zeros(2, 2));
        let x = Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        let d = pairwise_sq_dists(&x).unwrap();
        assert_eq!(d.get(0, 1), 25.0);
        assert_eq!(d.get(1, 0), 25.0);
        assert!(pairwise_sq_dists(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn pairwise_matches_double_loop() {
        let x = rand_normal(&mut RngState::new(9), 5, 3);
        let d = pairwise_sq_dists(&x).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += (x.get(i, k) - x.get(j, k)).powi(2);
                }
                assert!((d.get(i, j) - s).abs() < 1e-12);
            }
        }
    }
}
