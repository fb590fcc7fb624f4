//! Numeric proxies for how closely a synthetic cloud sits inside a real one
//! in a joint embedding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const KNN_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n_real: usize,
    pub n_synthetic: usize,
    /// Distance between the real and synthetic centroids.
    pub centroid_distance: f64,
    /// Mean distance of real points from the real centroid.
    pub mean_real_spread: f64,
    /// `centroid_distance / mean_real_spread`; below 1 the synthetic centroid
    /// lies within one mean radius of the real cloud.
    pub overlap_ratio: f64,
    /// Fraction of each synthetic point's nearest neighbours that are real,
    /// averaged over synthetic points.
    pub knn_real_fraction: f64,
}

fn centroid(points: &Matrix, rows: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; points.cols()];
    for &i in rows {
        for (a, &v) in c.iter_mut().zip(points.row(i)) {
            *a += v;
        }
    }
    for a in &mut c {
        *a /= rows.len() as f64;
    }
    c
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl ComparisonReport {
    /// `synthetic[i]` marks row `i` of `points` as synthetic. Neighbour ties
    /// are broken by row index.
    pub fn compute(points: &Matrix, synthetic: &[bool], k: usize) -> Result<Self> {
        if synthetic.len() != points.rows() {
            return Err(Error::Consistency(format!(
                "{} source tags for {} embedded points",
                synthetic.len(),
                points.rows()
            )));
        }
        let real: Vec<usize> = (0..points.rows()).filter(|&i| !synthetic[i]).collect();
        let synth: Vec<usize> = (0..points.rows()).filter(|&i| synthetic[i]).collect();
        if real.is_empty() || synth.is_empty() {
            return Err(Error::Input(format!(
                "comparison needs both real and synthetic points (got {} and {})",
                real.len(),
                synth.len()
            )));
        }
        if k == 0 {
            return Err(Error::Input("k must be at least 1".into()));
        }

        let c_real = centroid(points, &real);
        let c_synth = centroid(points, &synth);
        let centroid_distance = dist(&c_real, &c_synth);
        let mean_real_spread = real.iter().map(|&i| dist(points.row(i), &c_real)).sum::<f64>() / real.len() as f64;
        let overlap_ratio = if centroid_distance == 0.0 {
            0.0
        } else {
            centroid_distance / mean_real_spread
        };
        if !overlap_ratio.is_finite() {
            return Err(Error::Numerical("real points have zero spread".into()));
        }

        let k = k.min(points.rows() - 1);
        let mut neighbours: Vec<(f64, usize)> = Vec::with_capacity(points.rows());
        let mut frac_sum = 0.0;
        for &i in &synth {
            neighbours.clear();
            neighbours.extend(
                (0..points.rows())
                    .filter(|&j| j != i)
                    .map(|j| (dist(points.row(i), points.row(j)), j)),
            );
            neighbours.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let real_hits = neighbours[..k].iter().filter(|&&(_, j)| !synthetic[j]).count();
            frac_sum += real_hits as f64 / k as f64;
        }

        Ok(Self {
            n_real: real.len(),
            n_synthetic: synth.len(),
            centroid_distance,
            mean_real_spread,
            overlap_ratio,
            knn_real_fraction: frac_sum / synth.len() as f64,
        })
    }
}

/// Fraction of points whose nearest other point carries the same label.
pub fn one_nn_purity(points: &Matrix, labels: &[u8]) -> f64 {
    let n = points.rows();
    let hits = (0..n)
        .filter(|&i| {
            let nearest = (0..n)
                .filter(|&j| j != i)
                .min_by(|&a, &b| dist(points.row(i), points.row(a)).total_cmp(&dist(points.row(i), points.row(b))))
                .unwrap();
            labels[nearest] == labels[i]
        })
        .count();
    hits as f64 / n as f64
}
