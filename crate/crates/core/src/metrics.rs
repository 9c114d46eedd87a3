//! External clustering metrics: Hungarian-matched accuracy, NMI, ARI and
//! macro-F1.
//!
//! Conventions:
//! * NMI divides mutual information by the arithmetic mean of the two
//!   entropies and is defined as 0 when either entropy is 0.
//! * F1 is computed after remapping predicted clusters onto true classes with
//!   the same optimal matching used for accuracy, then averaged over true
//!   classes without weighting. A class that receives no predictions scores 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts of (true class, predicted cluster) co-occurrences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contingency {
    /// `counts[t][p]`
    pub counts: Vec<Vec<usize>>,
    pub row_sums: Vec<usize>,
    pub col_sums: Vec<usize>,
    pub n: usize,
    /// Dense index → original label value.
    pub true_classes: Vec<usize>,
    pub pred_clusters: Vec<usize>,
}

fn compress(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut values: Vec<usize> = labels.to_vec();
    values.sort_unstable();
    values.dedup();
    let idx = labels
        .iter()
        .map(|l| values.binary_search(l).expect("present"))
        .collect();
    (values, idx)
}

/// Dense ids in order of first appearance. Any renaming of the predicted
/// clusters then yields the same table, so tie-breaking in the matching (and
/// therefore F1) cannot depend on label names.
fn compress_by_appearance(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut values: Vec<usize> = Vec::new();
    let mut seen = std::collections::HashMap::new();
    let idx = labels
        .iter()
        .map(|&l| {
            *seen.entry(l).or_insert_with(|| {
                values.push(l);
                values.len() - 1
            })
        })
        .collect();
    (values, idx)
}

impl Contingency {
    pub fn new(true_labels: &[usize], pred_labels: &[usize]) -> Result<Self> {
        if true_labels.len() != pred_labels.len() {
            return Err(Error::Validation(format!(
                "label length mismatch: {} true vs {} predicted",
                true_labels.len(),
                pred_labels.len()
            )));
        }
        if true_labels.is_empty() {
            return Err(Error::Validation("cannot score an empty labeling".into()));
        }
        let (true_classes, t_idx) = compress(true_labels);
        let (pred_clusters, p_idx) = compress_by_appearance(pred_labels);
        let mut counts = vec![vec![0usize; pred_clusters.len()]; true_classes.len()];
        for (&t, &p) in t_idx.iter().zip(&p_idx) {
            counts[t][p] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..pred_clusters.len())
            .map(|p| counts.iter().map(|r| r[p]).sum())
            .collect();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            n: true_labels.len(),
            true_classes,
            pred_clusters,
        })
    }

    pub fn k_true(&self) -> usize {
        self.true_classes.len()
    }

    pub fn k_pred(&self) -> usize {
        self.pred_clusters.len()
    }
}

/// Minimum-cost perfect matching on a square cost matrix. Returns the column
/// assigned to each row.
///
/// Shortest augmenting path with potentials, `O(n³)`.
pub fn min_cost_assignment(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|r| r.len() == n));
    const INF: i64 = i64::MAX / 4;
    // 1-based; row 0 / column 0 are sentinels.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if col_owner[j] > 0 {
            assignment[col_owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Maps each predicted cluster index to a true class index so that the total
/// matched count is maximal. Clusters left over when there are more clusters
/// than classes map to `None`.
pub fn hungarian_match(cont: &Contingency) -> Vec<Option<usize>> {
    let size = cont.k_true().max(cont.k_pred());
    // rows: predicted clusters, columns: true classes; zero padding
    let cost: Vec<Vec<i64>> = (0..size)
        .map(|p| {
            (0..size)
                .map(|t| {
                    if p < cont.k_pred() && t < cont.k_true() {
                        -(cont.counts[t][p] as i64)
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    let assignment = min_cost_assignment(&cost);
    (0..cont.k_pred())
        .map(|p| {
            let t = assignment[p];
            (t < cont.k_true()).then_some(t)
        })
        .collect()
}

/// Number of samples on the diagonal after optimal matching.
pub fn matched_count(cont: &Contingency, mapping: &[Option<usize>]) -> usize {
    mapping
        .iter()
        .enumerate()
        .filter_map(|(p, t)| t.map(|t| cont.counts[t][p]))
        .sum()
}

pub fn accuracy(true_labels: &[usize], pred_labels: &[usize]) -> Result<f64> {
    let cont = Contingency::new(true_labels, pred_labels)?;
    let mapping = hungarian_match(&cont);
    Ok(matched_count(&cont, &mapping) as f64 / cont.n as f64)
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

pub fn nmi(true_labels: &[usize], pred_labels: &[usize]) -> Result<f64> {
    let cont = Contingency::new(true_labels, pred_labels)?;
    let n = cont.n as f64;
    let h_true = entropy(&cont.row_sums, n);
    let h_pred = entropy(&cont.col_sums, n);
    if h_true == 0.0 || h_pred == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (t, row) in cont.counts.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let c = c as f64;
            mi += c / n * (n * c / (cont.row_sums[t] as f64 * cont.col_sums[p] as f64)).ln();
        }
    }
    Ok((mi / ((h_true + h_pred) / 2.0)).clamp(0.0, 1.0))
}

fn comb2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

pub fn ari(true_labels: &[usize], pred_labels: &[usize]) -> Result<f64> {
    let cont = Contingency::new(true_labels, pred_labels)?;
    if cont.n < 2 {
        return Ok(1.0);
    }
    let index: f64 = cont.counts.iter().flatten().map(|&c| comb2(c)).sum();
    let sum_rows: f64 = cont.row_sums.iter().map(|&c| comb2(c)).sum();
    let sum_cols: f64 = cont.col_sums.iter().map(|&c| comb2(c)).sum();
    let expected = sum_rows * sum_cols / comb2(cont.n);
    let max_index = (sum_rows + sum_cols) / 2.0;
    let denom = max_index - expected;
    if denom == 0.0 {
        // Both partitions trivial in the same way.
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

pub fn macro_f1(true_labels: &[usize], pred_labels: &[usize]) -> Result<f64> {
    let cont = Contingency::new(true_labels, pred_labels)?;
    let mapping = hungarian_match(&cont);
    let k = cont.k_true();
    let mut predicted_as = vec![0usize; k];
    let mut hits = vec![0usize; k];
    for (p, t) in mapping.iter().enumerate() {
        if let Some(t) = *t {
            predicted_as[t] += cont.col_sums[p];
            hits[t] += cont.counts[t][p];
        }
    }
    let total: f64 = (0..k)
        .map(|t| {
            if predicted_as[t] == 0 || hits[t] == 0 {
                return 0.0;
            }
            let precision = hits[t] as f64 / predicted_as[t] as f64;
            let recall = hits[t] as f64 / cont.row_sums[t] as f64;
            2.0 * precision * recall / (precision + recall)
        })
        .sum();
    Ok(total / k as f64)
}

/// All four scores for one labeling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringScores {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub f1: f64,
}

pub fn evaluate(true_labels: &[usize], pred_labels: &[usize]) -> Result<ClusteringScores> {
    Ok(ClusteringScores {
        acc: accuracy(true_labels, pred_labels)?,
        nmi: nmi(true_labels, pred_labels)?,
        ari: ari(true_labels, pred_labels)?,
        f1: macro_f1(true_labels, pred_labels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cont_from(counts: Vec<Vec<usize>>) -> Contingency {
        let (kt, kp) = (counts.len(), counts[0].len());
        let row_sums: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..kp).map(|p| counts.iter().map(|r| r[p]).sum()).collect();
        Contingency {
            n: row_sums.iter().sum(),
            counts,
            row_sums,
            col_sums,
            true_classes: (0..kt).collect(),
            pred_clusters: (0..kp).collect(),
        }
    }

    #[test]
    fn hungarian_examples() {
        let diag = cont_from(vec![vec![3, 0], vec![0, 4]]);
        assert_eq!(hungarian_match(&diag), vec![Some(0), Some(1)]);

        let anti = cont_from(vec![vec![0, 3], vec![4, 0]]);
        assert_eq!(hungarian_match(&anti), vec![Some(1), Some(0)]);

        let c = cont_from(vec![vec![5, 1, 0], vec![0, 4, 2], vec![1, 0, 6]]);
        let m = hungarian_match(&c);
        assert_eq!(m, vec![Some(0), Some(1), Some(2)]);
        assert_eq!(matched_count(&c, &m), 15);
    }

    #[test]
    fn extra_clusters_map_to_none() {
        let c = Contingency::new(&[0, 0, 0, 1], &[0, 1, 2, 2]).unwrap();
        let m = hungarian_match(&c);
        assert_eq!(m.iter().filter(|x| x.is_none()).count(), 1);
        assert_eq!(matched_count(&c, &m), 2);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn nmi_examples() {
        assert!((nmi(&[0, 0, 1, 1, 2], &[0, 0, 1, 1, 2]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[0, 0, 1, 1], &[3, 3, 3, 3]).unwrap(), 0.0);
        assert!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert!((ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(ari(&[0, 0, 0], &[5, 5, 5]).unwrap(), 1.0);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(macro_f1(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        let f = macro_f1(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap();
        assert!((f - 11.0 / 15.0).abs() < 1e-12);
        // Everything predicted as one cluster: class 1 gets no predictions.
        let f = macro_f1(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap();
        assert!((f - (2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(accuracy(&[0, 1], &[0]).is_err());
        assert!(nmi(&[], &[]).is_err());
    }
}
