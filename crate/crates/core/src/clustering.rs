//! Self-supervised clustering head.
//!
//! Centers are seeded by k-means on the fused embedding and then trained by
//! gradient. Each of the fused, attribute and graph embeddings gets a
//! Student-t soft assignment against the same centers; the three are averaged
//! and pulled towards a sharpened target computed from the fused assignment.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Floor applied inside logarithms.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Stop once no center moves farther than this.
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest inertia wins.
    pub n_init: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-6,
            n_init: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Matrix,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..centers.rows() {
        let d = sq_dist(point, centers.row(j));
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_seed(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = x.rows();
    let mut centers = Matrix::zeros(k, x.cols());
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from_slice(x.row(first));
    let mut chosen = vec![first];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();

    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // All remaining mass is on existing centers.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(pick);
        centers.row_mut(c).copy_from_slice(x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(pick)));
        }
    }
    centers
}

fn lloyd(x: &Matrix, mut centers: Matrix, opts: &KMeansOptions) -> KMeansResult {
    let (n, dim) = x.shape();
    let k = centers.rows();
    let mut labels = vec![0usize; n];
    for _ in 0..opts.max_iter {
        for (i, label) in labels.iter_mut().enumerate() {
            *label = nearest(x.row(i), &centers).0;
        }
        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums.row_mut(l).iter_mut().zip(x.row(i)) {
                *s += *v;
            }
        }
        let mut shift = 0.0f64;
        for j in 0..k {
            // Empty clusters keep their previous center.
            if counts[j] == 0 {
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            let new: Vec<f64> = sums.row(j).iter().map(|s| s * inv).collect();
            shift = shift.max(sq_dist(&new, centers.row(j)).sqrt());
            centers.row_mut(j).copy_from_slice(&new);
        }
        if shift < opts.tol {
            break;
        }
    }
    let mut inertia = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let (j, d) = nearest(x.row(i), &centers);
        *label = j;
        inertia += d;
    }
    KMeansResult {
        centers,
        labels,
        inertia,
    }
}

/// k-means++ seeding followed by Lloyd iterations, deterministic per seed.
pub fn kmeans(x: &Matrix, k: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_with(x, k, seed, &KMeansOptions::default())
}

pub fn kmeans_with(x: &Matrix, k: usize, seed: u64, opts: &KMeansOptions) -> Result<KMeansResult> {
    if k == 0 || x.rows() < k {
        return Err(Error::Config(format!(
            "k-means needs 1 <= k <= N, got k={k}, N={}",
            x.rows()
        )));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite { op: "kmeans" });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..opts.n_init.max(1) {
        let seeded = plus_plus_seed(x, k, &mut rng);
        let run = lloyd(x, seeded, opts);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Student-t soft assignment of each row of `z` to each center.
///
/// `q_ij ∝ (1 + ‖z_i − u_j‖² / v)^{-(v+1)/2}`, normalized per row.
pub fn soft_assign<'t>(z: Tensor<'t>, centers: Tensor<'t>, v: f64) -> Result<Tensor<'t>> {
    if !(v > 0.0) {
        return Err(Error::Config(format!(
            "degrees of freedom must be positive, got {v}"
        )));
    }
    z.sq_dist(centers)?
        .affine(1.0 / v, 1.0)?
        .powf(-(v + 1.0) / 2.0)?
        .row_normalize()
}

/// Sharpened target `p_ij ∝ q_ij² / f_j` with soft cluster frequencies
/// `f_j = Σ_i q_ij`. The result is a plain matrix, off the tape.
pub fn target_distribution(q: &Matrix) -> Matrix {
    let freq = q.col_sums();
    let mut p = q.clone();
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        for (v, f) in row.iter_mut().zip(&freq) {
            *v = *v * *v / f.max(LOG_EPS);
        }
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    p
}

/// `Σ_ij p_ij ln(p_ij / m_ij)` where `m = (q + q′ + q″) / 3`.
///
/// `p` is a constant; gradients flow into the three assignments only.
pub fn kl_triplet_loss<'t>(
    p: &Matrix,
    q_fused: Tensor<'t>,
    q_ae: Tensor<'t>,
    q_gae: Tensor<'t>,
) -> Result<Tensor<'t>> {
    for q in [q_fused, q_ae, q_gae] {
        if q.shape() != p.shape() {
            return Err(Error::Dimension {
                op: "kl_triplet_loss",
                left: p.shape(),
                right: q.shape(),
            });
        }
    }
    let mixture = q_fused.add(q_ae)?.add(q_gae)?.scale(1.0 / 3.0)?;
    let entropy_term: f64 = p
        .as_slice()
        .iter()
        .map(|&pv| {
            if pv > 0.0 {
                pv * pv.max(LOG_EPS).ln()
            } else {
                0.0
            }
        })
        .sum();
    let cross = mixture
        .ln_floor(LOG_EPS)?
        .weighted_sum(Rc::new(p.clone()))?;
    cross.affine(-1.0, entropy_term)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn kmeans_finds_two_obvious_groups() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.1], [10.0, 10.0], [10.0, 10.1]]);
        let res = kmeans(&x, 2, 7).unwrap();
        let mut centers: Vec<(f64, f64)> = (0..2)
            .map(|j| (res.centers.get(j, 0), res.centers.get(j, 1)))
            .collect();
        centers.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((centers[0].0 - 0.0).abs() < 1e-12 && (centers[0].1 - 0.05).abs() < 1e-12);
        assert!((centers[1].0 - 10.0).abs() < 1e-12 && (centers[1].1 - 10.05).abs() < 1e-12);
        assert_eq!(res.labels[0], res.labels[1]);
        assert_ne!(res.labels[0], res.labels[2]);
    }

    #[test]
    fn kmeans_with_k_equal_n_has_zero_inertia() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [5.0]]);
        let res = kmeans(&x, 3, 0).unwrap();
        assert_eq!(res.inertia, 0.0);
        let mut l = res.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2]);
    }

    #[test]
    fn kmeans_is_deterministic() {
        let x = Matrix::from_vec(20, 2, (0..40).map(|i| ((i * 37) % 11) as f64).collect()).unwrap();
        assert_eq!(kmeans(&x, 3, 5).unwrap(), kmeans(&x, 3, 5).unwrap());
    }

    #[test]
    fn kmeans_rejects_too_few_points() {
        assert!(matches!(
            kmeans(&Matrix::zeros(2, 2), 3, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn soft_assign_examples() {
        let tape = Tape::new();
        let centers = tape.constant(Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0]]));
        let z = tape.constant(Matrix::from_rows(&[[0.5, 3.0], [0.0, 0.0]]));
        let q = soft_assign(z, centers, 1.0).unwrap().value();
        assert_eq!(q.row(0), &[0.5, 0.5]);
        assert!((q.get(1, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((q.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);

        let one = tape.constant(Matrix::from_rows(&[[4.0, 4.0]]));
        let q = soft_assign(z, one, 1.0).unwrap().value();
        assert_eq!(*q, Matrix::filled(2, 1, 1.0));
    }

    #[test]
    fn target_distribution_fixed_points() {
        let q = Matrix::from_rows(&[[2.0 / 3.0, 1.0 / 3.0]]);
        assert!(target_distribution(&q).max_abs_diff(&q) < 1e-15);

        let q = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(target_distribution(&q), q);

        let q = Matrix::from_rows(&[[0.6, 0.4], [0.6, 0.4]]);
        assert!(target_distribution(&q).max_abs_diff(&q) < 1e-15);
    }

    #[test]
    fn kl_examples() {
        let tape = Tape::new();
        let p = Matrix::from_rows(&[[0.7, 0.3], [0.2, 0.8]]);
        let q = tape.constant(p.clone());
        assert!(kl_triplet_loss(&p, q, q, q).unwrap().item().abs() < 1e-15);

        let onehot = Matrix::from_rows(&[[1.0, 0.0]]);
        let half = tape.constant(Matrix::from_rows(&[[0.5, 0.5]]));
        let loss = kl_triplet_loss(&onehot, half, half, half).unwrap().item();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);

        let wrong = tape.constant(Matrix::zeros(1, 3));
        assert!(kl_triplet_loss(&onehot, wrong, half, half).is_err());
    }
}
