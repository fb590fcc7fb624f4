use gantsne_core::numerics::{gemm, matmul, pairwise_sq_dists, Matrix, Op, RngState};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-10.0f64..10.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..9, 1usize..9, 1usize..9)
}

fn naive(a: &Matrix, b: &Matrix) -> Matrix {
    let mut c = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let s = (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum();
            c.set(i, j, s);
        }
    }
    c
}

fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
    a.shape() == b.shape() && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #[test]
    fn matmul_agrees_with_naive(((m, k, n), seed) in (dims(), any::<u64>())) {
        let mut rng = RngState::new(seed);
        let a = Matrix::from_vec(m, k, (0..m * k).map(|_| rng.normal()).collect()).unwrap();
        let b = Matrix::from_vec(k, n, (0..k * n).map(|_| rng.normal()).collect()).unwrap();
        prop_assert!(close(&matmul(&a, &b).unwrap(), &naive(&a, &b), 1e-12));
    }

    #[test]
    fn gemm_transposed_operands((a, b) in (matrix(4, 6), matrix(5, 6)), alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
        let c0 = Matrix::filled(4, 5, 1.5);
        let mut c = c0.clone();
        gemm(alpha, &a, Op::N, &b, Op::T, beta, &mut c).unwrap();
        let prod = naive(&a, &b.transpose());
        let want = Matrix::from_vec(4, 5, prod.as_slice().iter().zip(c0.as_slice()).map(|(p, c)| alpha * p + beta * c).collect()).unwrap();
        prop_assert!(close(&c, &want, 1e-10));

        let mut d = Matrix::zeros(6, 6);
        gemm(1.0, &a, Op::T, &a, Op::N, 0.0, &mut d).unwrap();
        prop_assert!(close(&d, &naive(&a.transpose(), &a), 1e-10));
    }

    #[test]
    fn transpose_is_an_involution(a in matrix(3, 7)) {
        prop_assert_eq!(a.transpose().transpose(), a.clone());
        prop_assert_eq!(a.transpose().shape(), (7, 3));
    }

    #[test]
    fn pairwise_distances_are_metric_squares(x in matrix(7, 3)) {
        let d = pairwise_sq_dists(&x).unwrap();
        for i in 0..7 {
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..7 {
                prop_assert_eq!(d.get(i, j), d.get(j, i));
                prop_assert!(d.get(i, j) >= 0.0);
                let want: f64 = (0..3).map(|k| (x.get(i, k) - x.get(j, k)).powi(2)).sum();
                prop_assert!((d.get(i, j) - want).abs() <= 1e-9 * (1.0 + want));
            }
        }
    }

    #[test]
    fn restored_rng_continues_the_stream(seed in any::<u64>(), skip in 0usize..50) {
        let mut a = RngState::new(seed);
        for _ in 0..skip {
            a.normal();
        }
        let snap = a.snapshot();
        let mut b = RngState::restore(seed, &snap);
        for _ in 0..20 {
            prop_assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn sampled_indices_are_distinct(seed in any::<u64>(), n in 1usize..200, frac in 0.0f64..1.0) {
        let k = ((n as f64) * frac) as usize;
        let mut idx = RngState::new(seed).sample_indices(n, k);
        prop_assert_eq!(idx.len(), k);
        idx.sort_unstable();
        idx.dedup();
        prop_assert_eq!(idx.len(), k);
        prop_assert!(idx.iter().all(|&i| i < n));
    }
}

#[test]
fn shape_mismatch_is_reported() {
    let a = Matrix::zeros(2, 3);
    let b = Matrix::zeros(2, 3);
    assert!(matches!(matmul(&a, &b), Err(gantsne_core::Error::Shape { .. })));
}
