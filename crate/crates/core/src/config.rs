//! Run configuration as flat `key = value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, so an empty file is a valid config (a synthetic 3-block graph).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::autodiff::Activation;
use crate::encoders::Architecture;
use crate::error::{Error, Result};
use crate::graph::SbmSpec;
use crate::objectives::LossWeights;
use crate::optim::OptimizerKind;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub features: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Cluster count for file datasets.
    pub k: Option<usize>,
    pub synth: SbmSpec,
    /// `None` means "use `seed`".
    pub synth_seed: Option<u64>,
    pub standardize_features: bool,
    pub row_normalize_features: bool,

    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,

    pub optimizer: OptimizerKind,
    pub lr_ae: f64,
    pub lr_gae: f64,
    pub lr_train: f64,
    pub epochs_ae: usize,
    pub epochs_gae: usize,
    pub epochs_train: usize,

    pub seed: u64,
    pub weights: LossWeights,
    pub dof: f64,
    pub p_update_every: usize,
    pub kmeans_restarts: usize,
    pub mean_normalize_losses: bool,

    pub enable_contrastive: bool,
    pub enable_multi_order: bool,

    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            features: None,
            edges: None,
            labels: None,
            k: None,
            synth: SbmSpec::default(),
            synth_seed: None,
            standardize_features: false,
            row_normalize_features: false,
            hidden: vec![256, 64],
            latent_dim: 20,
            activation: Activation::Relu,
            optimizer: OptimizerKind::Adam,
            lr_ae: 1e-3,
            lr_gae: 1e-3,
            lr_train: 1e-3,
            epochs_ae: 30,
            epochs_gae: 30,
            epochs_train: 200,
            seed: 0,
            weights: LossWeights::default(),
            dof: 1.0,
            p_update_every: 1,
            kmeans_restarts: 10,
            mean_normalize_losses: false,
            enable_contrastive: true,
            enable_multi_order: true,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

/// Comma-separated list; an empty string gives an empty list.
pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Format {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
        }
        Ok(())
    }

    /// Applies a `key=value` override string.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let opt_path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "features" => self.features = opt_path(value),
            "edges" => self.edges = opt_path(value),
            "labels" => self.labels = opt_path(value),
            "k" => {
                self.k = if value.is_empty() {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "synth_k" => self.synth.k = parse(key, value)?,
            "synth_nodes_per_cluster" => self.synth.nodes_per_cluster = parse(key, value)?,
            "synth_p_in" => self.synth.p_in = parse(key, value)?,
            "synth_p_out" => self.synth.p_out = parse(key, value)?,
            "synth_dim" => self.synth.dim = parse(key, value)?,
            "synth_sep" => self.synth.sep = parse(key, value)?,
            "synth_seed" => {
                self.synth_seed = if value.is_empty() {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "standardize_features" => self.standardize_features = parse_bool(key, value)?,
            "row_normalize_features" => self.row_normalize_features = parse_bool(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "activation" => self.activation = value.parse()?,
            "optimizer" => self.optimizer = value.parse()?,
            "lr" => {
                let lr = parse(key, value)?;
                self.lr_ae = lr;
                self.lr_gae = lr;
                self.lr_train = lr;
            }
            "lr_ae" => self.lr_ae = parse(key, value)?,
            "lr_gae" => self.lr_gae = parse(key, value)?,
            "lr_train" => self.lr_train = parse(key, value)?,
            "epochs_ae" => self.epochs_ae = parse(key, value)?,
            "epochs_gae" => self.epochs_gae = parse(key, value)?,
            "epochs_train" => self.epochs_train = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "gamma" => self.weights.gamma = parse(key, value)?,
            "lambda_kl" | "lambda" => self.weights.lambda_kl = parse(key, value)?,
            "alpha" => self.weights.alpha = parse(key, value)?,
            "beta" => self.weights.beta = parse(key, value)?,
            "v" | "dof" => self.dof = parse(key, value)?,
            "p_update_every" => self.p_update_every = parse(key, value)?,
            "kmeans_restarts" => self.kmeans_restarts = parse(key, value)?,
            "mean_normalize_losses" => self.mean_normalize_losses = parse_bool(key, value)?,
            "enable_contrastive" => self.enable_contrastive = parse_bool(key, value)?,
            "enable_multi_order" => self.enable_multi_order = parse_bool(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.latent_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        for (name, lr) in [
            ("lr_ae", self.lr_ae),
            ("lr_gae", self.lr_gae),
            ("lr_train", self.lr_train),
        ] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        if self.epochs_ae == 0 || self.epochs_gae == 0 {
            return Err(Error::Config(
                "pre-training phases need at least one epoch".into(),
            ));
        }
        if !(self.dof > 0.0) {
            return Err(Error::Config("v must be positive".into()));
        }
        if self.p_update_every == 0 {
            return Err(Error::Config("p_update_every must be >= 1".into()));
        }
        if self.features.is_some() != self.edges.is_some() {
            return Err(Error::Config(
                "`features` and `edges` must be given together".into(),
            ));
        }
        if self.features.is_some() && self.k.is_none() {
            return Err(Error::Config("file datasets need `k`".into()));
        }
        Ok(())
    }

    /// Contrastive weights after the ablation switch.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if !self.enable_contrastive {
            w.alpha = 0.0;
            w.beta = 0.0;
        }
        w
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden: self.hidden.clone(),
            latent_dim: self.latent_dim,
            activation: self.activation,
        }
    }

    pub fn sbm_spec(&self) -> SbmSpec {
        SbmSpec {
            seed: self.synth_seed.unwrap_or(self.seed),
            ..self.synth
        }
    }

    /// Every key except `out_dir` with its current value, sorted by key.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("features", path(&self.features));
        put("edges", path(&self.edges));
        put("labels", path(&self.labels));
        put("k", self.k.map(|k| k.to_string()).unwrap_or_default());
        put("synth_k", self.synth.k.to_string());
        put(
            "synth_nodes_per_cluster",
            self.synth.nodes_per_cluster.to_string(),
        );
        put("synth_p_in", self.synth.p_in.to_string());
        put("synth_p_out", self.synth.p_out.to_string());
        put("synth_dim", self.synth.dim.to_string());
        put("synth_sep", self.synth.sep.to_string());
        put(
            "synth_seed",
            self.synth_seed.map(|s| s.to_string()).unwrap_or_default(),
        );
        put(
            "standardize_features",
            self.standardize_features.to_string(),
        );
        put(
            "row_normalize_features",
            self.row_normalize_features.to_string(),
        );
        put("hidden", join(&self.hidden));
        put("latent_dim", self.latent_dim.to_string());
        put("activation", self.activation.as_str().to_string());
        put("optimizer", self.optimizer.as_str().to_string());
        put("lr_ae", self.lr_ae.to_string());
        put("lr_gae", self.lr_gae.to_string());
        put("lr_train", self.lr_train.to_string());
        put("epochs_ae", self.epochs_ae.to_string());
        put("epochs_gae", self.epochs_gae.to_string());
        put("epochs_train", self.epochs_train.to_string());
        put("seed", self.seed.to_string());
        put("gamma", self.weights.gamma.to_string());
        put("lambda_kl", self.weights.lambda_kl.to_string());
        put("alpha", self.weights.alpha.to_string());
        put("beta", self.weights.beta.to_string());
        put("v", self.dof.to_string());
        put("p_update_every", self.p_update_every.to_string());
        put("kmeans_restarts", self.kmeans_restarts.to_string());
        put(
            "mean_normalize_losses",
            self.mean_normalize_losses.to_string(),
        );
        put("enable_contrastive", self.enable_contrastive.to_string());
        put("enable_multi_order", self.enable_multi_order.to_string());
        m
    }

    /// Serializes to the `key = value` format accepted by [`RunConfig::from_file`].
    pub fn to_text(&self) -> String {
        self.echo()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
