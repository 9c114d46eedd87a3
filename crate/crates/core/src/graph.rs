//! Attributed graphs: text ingestion, symmetric adjacency normalization and a
//! stochastic-block-model generator.
//!
//! File formats (all plain text, one record per line):
//!
//! * features: comma-separated reals, one node per line
//! * edges: `u,v` with 0-based node indices, undirected
//! * labels: one integer cluster id per line

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub features: Matrix,
    /// Sorted, deduplicated pairs with `u < v`.
    pub edges: Vec<(usize, usize)>,
    pub labels: Option<Vec<usize>>,
    pub k: usize,
}

impl GraphDataset {
    /// Validates and canonicalizes a dataset. Self-loops and duplicate or
    /// reversed pairs are dropped.
    pub fn new(
        features: Matrix,
        edges: Vec<(usize, usize)>,
        labels: Option<Vec<usize>>,
        k: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if !features.is_finite() {
            return Err(Error::Validation(
                "features contain non-finite values".into(),
            ));
        }
        let mut set = BTreeSet::new();
        let mut dropped = 0usize;
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(Error::Validation(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v || !set.insert((u.min(v), u.max(v))) {
                dropped += 1;
            }
        }
        if dropped > 0 {
            log::info!("dropped {dropped} self-loop or duplicate edge entries");
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::Validation(format!(
                    "{} labels for {n} nodes",
                    labels.len()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
                return Err(Error::Validation(format!("label {bad} outside [0, {k})")));
            }
        }
        Ok(Self {
            features,
            edges: set.into_iter().collect(),
            labels,
            k,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    /// Per-feature zero mean, unit variance. Constant columns are centred only.
    pub fn standardize_features(&mut self) {
        let (n, d) = self.features.shape();
        if n == 0 {
            return;
        }
        for c in 0..d {
            let mean = (0..n).map(|r| self.features.get(r, c)).sum::<f64>() / n as f64;
            let var = (0..n)
                .map(|r| (self.features.get(r, c) - mean).powi(2))
                .sum::<f64>()
                / n as f64;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for r in 0..n {
                let v = self.features.get(r, c);
                self.features.set(r, c, (v - mean) / sd);
            }
        }
    }

    /// Scales each feature row to unit L2 norm. Zero rows are left alone.
    pub fn row_normalize_features(&mut self) {
        for r in 0..self.features.rows() {
            let row = self.features.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }

    pub fn save(
        &self,
        features_path: &Path,
        edges_path: &Path,
        labels_path: Option<&Path>,
    ) -> Result<()> {
        let mut text = String::new();
        for r in 0..self.features.rows() {
            let line: Vec<String> = self.features.row(r).iter().map(|v| v.to_string()).collect();
            text.push_str(&line.join(","));
            text.push('\n');
        }
        write_file(features_path, &text)?;

        let mut text = String::new();
        for (u, v) in &self.edges {
            text.push_str(&format!("{u},{v}\n"));
        }
        write_file(edges_path, &text)?;

        if let (Some(path), Some(labels)) = (labels_path, &self.labels) {
            write_labels(path, labels)?;
        }
        Ok(())
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    write_file(path, &text)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read_file(path)?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let l = line
            .parse::<usize>()
            .map_err(|e| format_err(path, i + 1, format!("bad label `{line}`: {e}")))?;
        labels.push(l);
    }
    Ok(labels)
}

fn read_features(path: &Path) -> Result<Matrix> {
    let text = read_file(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let field = field.trim();
            let v = field
                .parse::<f64>()
                .map_err(|e| format_err(path, i + 1, format!("bad number `{field}`: {e}")))?;
            data.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(format_err(
                    path,
                    i + 1,
                    format!("expected {c} columns, found {count}"),
                ));
            }
            _ => {}
        }
        rows += 1;
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read_file(path)?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| format_err(path, i + 1, format!("bad node index `{}`: {e}", s.trim())))
        };
        let (u, v) = line
            .split_once(',')
            .ok_or_else(|| format_err(path, i + 1, format!("expected `u,v`, found `{line}`")))?;
        edges.push((parse(u)?, parse(v)?));
    }
    Ok(edges)
}

/// Reads the three-file format and validates it.
pub fn load_dataset(
    features_path: &Path,
    edges_path: &Path,
    labels_path: Option<&Path>,
    k: usize,
) -> Result<GraphDataset> {
    let features = read_features(features_path)?;
    let edges = read_edges(edges_path)?;
    let labels = labels_path.map(read_labels).transpose()?;
    GraphDataset::new(features, edges, labels, k)
}

/// Symmetrically normalized adjacency with self-loops and its square.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub a_tilde: Matrix,
    pub a_tilde_sq: Matrix,
}

impl NormalizedAdjacency {
    pub fn n(&self) -> usize {
        self.a_tilde.rows()
    }
}

/// `D^{-1/2} (A + I) D^{-1/2}` where `D` is the degree matrix of `A + I`.
pub fn normalize_adjacency(ds: &GraphDataset) -> NormalizedAdjacency {
    let n = ds.n_nodes();
    let mut degree = vec![1.0f64; n];
    for &(u, v) in &ds.edges {
        degree[u] += 1.0;
        degree[v] += 1.0;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        a.set(i, i, inv_sqrt[i] * inv_sqrt[i]);
    }
    for &(u, v) in &ds.edges {
        let w = inv_sqrt[u] * inv_sqrt[v];
        a.set(u, v, w);
        a.set(v, u, w);
    }
    let a_sq = a.matmul(&a).expect("square");
    NormalizedAdjacency {
        a_tilde: a,
        a_tilde_sq: a_sq,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbmSpec {
    pub k: usize,
    pub nodes_per_cluster: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub dim: usize,
    pub sep: f64,
    pub seed: u64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        Self {
            k: 3,
            nodes_per_cluster: 100,
            p_in: 0.2,
            p_out: 0.01,
            dim: 16,
            sep: 4.0,
            seed: 0,
        }
    }
}

/// Planted-partition graph with Gaussian features around scaled unit-vector means.
///
/// Nodes are laid out cluster by cluster. Feature row `i` is
/// `sep * e_{label(i)} + noise` with standard normal noise.
pub fn generate_sbm(spec: &SbmSpec) -> Result<GraphDataset> {
    let SbmSpec {
        k,
        nodes_per_cluster,
        p_in,
        p_out,
        dim,
        sep,
        seed,
    } = *spec;
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) || p_out > p_in {
        return Err(Error::Config(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}"
        )));
    }
    if !(sep >= 0.0) || !sep.is_finite() {
        return Err(Error::Config(format!(
            "sep must be finite and >= 0, got {sep}"
        )));
    }
    if k == 0 || nodes_per_cluster == 0 {
        return Err(Error::Config(
            "k and nodes_per_cluster must be positive".into(),
        ));
    }
    if dim < k {
        return Err(Error::Config(format!(
            "feature dim {dim} smaller than k={k}"
        )));
    }

    let n = k * nodes_per_cluster;
    let labels: Vec<usize> = (0..n).map(|i| i / nodes_per_cluster).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let mut features = Matrix::zeros(n, dim);
    for i in 0..n {
        let row = features.row_mut(i);
        for v in row.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        row[labels[i]] += sep;
    }

    GraphDataset::new(features, edges, Some(labels), k)
}
