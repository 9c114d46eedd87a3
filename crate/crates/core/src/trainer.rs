//! Three-phase training protocol, ablation matrix and α/β sweep.
//!
//! Phase 1 fits the AE alone. Phase 2 fits the GAE on `L_IGAE + α·L_pre`
//! while the AE keeps training on `L_AE`, so the alignment target moves with
//! it. Phase 3 initializes centers with k-means on the fused embedding and
//! minimizes the full objective with the triplet KL term.

use std::time::Instant;

use log::{debug, info};

use crate::autodiff::Tape;
use crate::checkpoint::CheckpointMeta;
use crate::clustering::{kl_triplet_loss, kmeans_with, target_distribution, KMeansOptions};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::graph::{generate_sbm, load_dataset, GraphDataset};
use crate::matrix::Matrix;
use crate::metrics::{evaluate, ClusteringScores};
use crate::model::{GraphInputs, Model};
use crate::objectives::{LossBreakdown, Objective, ObjectiveInputs};
use crate::optim::Optimizer;
use crate::params::ParamSet;
use crate::report::{AblationRow, EpochRecord, RunReport, SweepCell};

pub const DEFAULT_GRID: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];

/// A dataset plus its precomputed dense graph tensors.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: GraphDataset,
    pub inputs: GraphInputs,
}

impl PreparedData {
    pub fn new(dataset: GraphDataset) -> Self {
        let inputs = GraphInputs::from_dataset(&dataset);
        Self { dataset, inputs }
    }
}

/// Loads the configured file dataset, or generates the SBM when no files are set.
pub fn load_data(cfg: &RunConfig) -> Result<GraphDataset> {
    cfg.validate()?;
    let mut ds = match (&cfg.features, &cfg.edges) {
        (Some(f), Some(e)) => {
            let k = cfg
                .k
                .ok_or_else(|| Error::Config("file datasets need `k`".into()))?;
            load_dataset(f, e, cfg.labels.as_deref(), k)?
        }
        _ => {
            let mut spec = cfg.sbm_spec();
            if let Some(k) = cfg.k {
                spec.k = k;
            }
            generate_sbm(&spec)?
        }
    };
    if cfg.standardize_features {
        ds.standardize_features();
    }
    if cfg.row_normalize_features {
        ds.row_normalize_features();
    }
    Ok(ds)
}

pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    Ok(PreparedData::new(load_data(cfg)?))
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub model: Model,
    pub trace: Vec<EpochRecord>,
}

fn check_finite(phase: &'static str, epoch: usize, b: &LossBreakdown) -> Result<()> {
    match b.first_non_finite() {
        Some(term) => Err(Error::Divergence { phase, epoch, term }),
        None => Ok(()),
    }
}

/// A non-finite value inside the forward or backward pass is also divergence.
fn diverged(phase: &'static str, epoch: usize) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::NonFinite { op } => Error::Divergence {
            phase,
            epoch,
            term: op,
        },
        other => other,
    }
}

fn record(
    phase: &str,
    epoch: usize,
    losses: LossBreakdown,
    scores: Option<ClusteringScores>,
) -> EpochRecord {
    EpochRecord {
        phase: phase.to_string(),
        epoch,
        losses,
        scores,
    }
}

/// Runs phases 1 and 2 from a fresh seeded initialization.
pub fn pretrain(cfg: &RunConfig, data: &PreparedData) -> Result<Pretrained> {
    cfg.validate()?;
    let arch = cfg.architecture(data.dataset.n_features());
    let mut model = Model::new(&arch, cfg.enable_multi_order, cfg.seed);
    let objective = Objective {
        weights: cfg.effective_weights(),
        mean_normalize: cfg.mean_normalize_losses,
    };
    let mut trace = Vec::with_capacity(cfg.epochs_ae + cfg.epochs_gae);

    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr_ae);
    for epoch in 0..cfg.epochs_ae {
        let losses = ae_step(&mut model, data, &objective, &mut opt)
            .map_err(diverged("pretrain_ae", epoch))?;
        check_finite("pretrain_ae", epoch, &losses)?;
        debug!("pretrain_ae epoch {epoch}: total {}", losses.total);
        trace.push(record("pretrain_ae", epoch, losses, None));
    }

    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr_gae);
    for epoch in 0..cfg.epochs_gae {
        let losses = gae_step(&mut model, data, &objective, &mut opt)
            .map_err(diverged("pretrain_gae", epoch))?;
        check_finite("pretrain_gae", epoch, &losses)?;
        debug!("pretrain_gae epoch {epoch}: total {}", losses.total);
        trace.push(record("pretrain_gae", epoch, losses, None));
    }
    info!(
        "pretraining done: {} AE + {} GAE epochs",
        cfg.epochs_ae, cfg.epochs_gae
    );
    Ok(Pretrained { model, trace })
}

/// Steps are skipped when the loss is not finite; the caller reports divergence.
fn apply_if_finite(
    model: &mut Model,
    opt: &mut Optimizer,
    losses: &LossBreakdown,
    grads: Vec<Option<Matrix>>,
) {
    if losses.first_non_finite().is_none() {
        opt.step(&mut model.params, &grads);
    }
}

fn ae_step(
    model: &mut Model,
    data: &PreparedData,
    objective: &Objective,
    opt: &mut Optimizer,
) -> Result<LossBreakdown> {
    let tape = Tape::new();
    let bound = model.params.bind(&tape);
    let inputs = data.inputs.bind(&tape);
    let ae = model.ae.forward(&bound, inputs.x)?;
    let (total, losses) = objective.evaluate(&ObjectiveInputs {
        x: inputs.x,
        a_tilde: inputs.a_tilde,
        ae_recon: Some(ae.recon_features),
        ae_latent: None,
        gae_recon_features: None,
        gae_recon_adjacency: None,
        gae_latent: None,
        z_final: None,
        l_kl: None,
    })?;
    let grads = bound.collect_grads(&total.backward()?);
    apply_if_finite(model, opt, &losses, grads);
    Ok(losses)
}

fn gae_step(
    model: &mut Model,
    data: &PreparedData,
    objective: &Objective,
    opt: &mut Optimizer,
) -> Result<LossBreakdown> {
    let tape = Tape::new();
    let bound = model.params.bind(&tape);
    let inputs = data.inputs.bind(&tape);
    let ae = model.ae.forward(&bound, inputs.x)?;
    let gae = model.gae.forward(&bound, inputs.x, inputs.a_tilde)?;
    let (total, losses) = objective.evaluate(&ObjectiveInputs {
        x: inputs.x,
        a_tilde: inputs.a_tilde,
        ae_recon: Some(ae.recon_features),
        ae_latent: Some(ae.latent),
        gae_recon_features: Some(gae.recon_features),
        gae_recon_adjacency: Some(gae.recon_adjacency),
        gae_latent: Some(gae.latent),
        z_final: None,
        l_kl: None,
    })?;
    let grads = bound.collect_grads(&total.backward()?);
    apply_if_finite(model, opt, &losses, grads);
    Ok(losses)
}

pub fn checkpoint_meta(cfg: &RunConfig, data: &PreparedData, model: &Model) -> CheckpointMeta {
    CheckpointMeta {
        format: "cgcn-checkpoint".into(),
        version: crate::checkpoint::VERSION,
        architecture: model.architecture().clone(),
        n_nodes: data.dataset.n_nodes(),
        seed: cfg.seed,
        fusion: model.fusion.effective_coefficients(&model.params),
        tensors: model.params.iter().map(|(n, _)| n.to_string()).collect(),
    }
}

/// Rebuilds a model from checkpoint tensors after checking them against the config.
pub fn model_from_checkpoint(
    cfg: &RunConfig,
    data: &PreparedData,
    params: &ParamSet,
) -> Result<Model> {
    let arch = cfg.architecture(data.dataset.n_features());
    let mut model = Model::new(&arch, true, cfg.seed);
    if let Some((missing, _)) = model.params.iter().find(|(n, _)| params.find(n).is_none()) {
        return Err(Error::Validation(format!(
            "checkpoint is missing parameter `{missing}`"
        )));
    }
    // Cluster centers from a trained checkpoint are dropped; training re-seeds them.
    let mut encoder_only = ParamSet::new();
    for (name, value) in params
        .iter()
        .filter(|(n, _)| *n != crate::model::CENTERS_PARAM)
    {
        encoder_only.add(name, value.clone());
    }
    model
        .params
        .load_from(&encoder_only)
        .map_err(|e| Error::Validation(format!("checkpoint does not match config: {e}")))?;
    if !cfg.enable_multi_order {
        model.fusion.disable_multi_order(&mut model.params);
    }
    Ok(model)
}

fn kmeans_opts(cfg: &RunConfig) -> KMeansOptions {
    KMeansOptions {
        n_init: cfg.kmeans_restarts.max(1),
        ..KMeansOptions::default()
    }
}

fn score(ds: &GraphDataset, pred: &[usize]) -> Result<Option<ClusteringScores>> {
    ds.labels.as_deref().map(|t| evaluate(t, pred)).transpose()
}

/// Phase 3. `model` is consumed; the trained parameters are returned alongside the report.
pub fn train(
    cfg: &RunConfig,
    data: &PreparedData,
    mut model: Model,
    pretrain_trace: Vec<EpochRecord>,
) -> Result<(RunReport, Model)> {
    let started = Instant::now();
    cfg.validate()?;
    let ds = &data.dataset;
    let k = ds.k;
    if ds.n_nodes() < k {
        return Err(Error::Config(format!(
            "need at least as many nodes as clusters (N={}, K={k})",
            ds.n_nodes()
        )));
    }
    if model.architecture().input_dim != ds.n_features() {
        return Err(Error::Validation(format!(
            "model expects {} features, dataset has {}",
            model.architecture().input_dim,
            ds.n_features()
        )));
    }
    if !cfg.enable_multi_order {
        model.fusion.disable_multi_order(&mut model.params);
    }
    let objective = Objective {
        weights: cfg.effective_weights(),
        mean_normalize: cfg.mean_normalize_losses,
    };
    let opts = kmeans_opts(cfg);

    let emb = model.embed(&data.inputs)?;
    let init = kmeans_with(&emb.z_final, k, cfg.seed, &opts)?;
    let pretrain_metrics = score(ds, &init.labels)?;
    model.set_centers(init.centers.clone())?;

    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr_train);
    let mut p: Option<Matrix> = None;
    let mut trace = Vec::with_capacity(cfg.epochs_train);
    for epoch in 0..cfg.epochs_train {
        let refresh = p.is_none() || epoch % cfg.p_update_every == 0;
        let (losses, pred) = train_step(
            &mut model, data, &objective, &mut opt, cfg.dof, &mut p, refresh,
        )
        .map_err(diverged("train", epoch))?;
        check_finite("train", epoch, &losses)?;
        let scores = score(ds, &pred)?;
        debug!(
            "train epoch {epoch}: total {} scores {scores:?}",
            losses.total
        );
        trace.push(record("train", epoch, losses, scores));
    }

    let (labels, label_source) = if cfg.epochs_train == 0 {
        (init.labels, "kmeans")
    } else if objective.weights.lambda_kl == 0.0 {
        let emb = model.embed(&data.inputs)?;
        (
            kmeans_with(&emb.z_final, k, cfg.seed, &opts)?.labels,
            "kmeans",
        )
    } else {
        let tape = Tape::new();
        let bound = model.params.bind(&tape);
        let pass = model.forward(&bound, &data.inputs.bind(&tape))?;
        let q = model.assign(&bound, &pass, cfg.dof)?;
        (q.q_fused.value().argmax_rows(), "soft_assignment")
    };
    let metrics = score(ds, &labels)?;
    if let Some(m) = &metrics {
        info!(
            "seed {}: acc {:.4} nmi {:.4} ari {:.4} f1 {:.4}",
            cfg.seed, m.acc, m.nmi, m.ari, m.f1
        );
    }

    let report = RunReport {
        seed: cfg.seed,
        n_nodes: ds.n_nodes(),
        k,
        label_source: label_source.to_string(),
        metrics,
        pretrain_metrics,
        fusion: model.fusion.effective_coefficients(&model.params),
        config: cfg.echo(),
        pretrain_trace,
        train_trace: trace,
        labels,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok((report, model))
}

/// One joint step. Returns the losses and the argmax labels of the fused Q
/// before the update.
fn train_step(
    model: &mut Model,
    data: &PreparedData,
    objective: &Objective,
    opt: &mut Optimizer,
    dof: f64,
    p: &mut Option<Matrix>,
    refresh_target: bool,
) -> Result<(LossBreakdown, Vec<usize>)> {
    let tape = Tape::new();
    let bound = model.params.bind(&tape);
    let inputs = data.inputs.bind(&tape);
    let pass = model.forward(&bound, &inputs)?;
    let q = model.assign(&bound, &pass, dof)?;
    let q_value = q.q_fused.value();
    if refresh_target || p.is_none() {
        *p = Some(target_distribution(&q_value));
    }
    let target = p.as_ref().expect("target set above");
    let l_kl = kl_triplet_loss(target, q.q_fused, q.q_ae, q.q_gae)?;
    let (total, losses) = objective.evaluate(&ObjectiveInputs {
        x: inputs.x,
        a_tilde: inputs.a_tilde,
        ae_recon: Some(pass.ae.recon_features),
        ae_latent: Some(pass.ae.latent),
        gae_recon_features: Some(pass.gae.recon_features),
        gae_recon_adjacency: Some(pass.gae.recon_adjacency),
        gae_latent: Some(pass.gae.latent),
        z_final: Some(pass.fused.z_final),
        l_kl: Some(l_kl),
    })?;
    let grads = bound.collect_grads(&total.backward()?);
    apply_if_finite(model, opt, &losses, grads);
    Ok((losses, q_value.argmax_rows()))
}

/// Pretrain then train on freshly prepared data.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let started = Instant::now();
    let data = prepare_data(cfg)?;
    let pre = pretrain(cfg, &data)?;
    let (mut report, _) = train(cfg, &data, pre.model, pre.trace)?;
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// `(name, enable_contrastive, enable_multi_order)` in table order.
pub const ABLATION_VARIANTS: [(&str, bool, bool); 4] = [
    ("base", false, false),
    ("+C", true, false),
    ("+S", false, true),
    ("full", true, true),
];

fn with_flags(cfg: &RunConfig, contrastive: bool, multi_order: bool) -> RunConfig {
    let mut c = cfg.clone();
    c.enable_contrastive = contrastive;
    c.enable_multi_order = multi_order;
    c
}

/// Runs the four ablation variants on one dataset for one seed.
///
/// Pre-training does not touch the fusion block, so variants that agree on
/// the contrastive flag share one pre-trained model. The result is identical
/// to running each variant from scratch.
pub fn ablate_prepared(cfg: &RunConfig, data: &PreparedData) -> Result<Vec<AblationRow>> {
    let mut shared: Vec<(bool, Pretrained)> = Vec::new();
    let mut rows = Vec::with_capacity(ABLATION_VARIANTS.len());
    for (name, contrastive, multi_order) in ABLATION_VARIANTS {
        let vcfg = with_flags(cfg, contrastive, multi_order);
        if !shared.iter().any(|(c, _)| *c == contrastive) {
            shared.push((
                contrastive,
                pretrain(&with_flags(cfg, contrastive, true), data)?,
            ));
        }
        let pre = &shared
            .iter()
            .find(|(c, _)| *c == contrastive)
            .expect("inserted")
            .1;
        let (report, _) = train(&vcfg, data, pre.model.clone(), pre.trace.clone())?;
        rows.push(AblationRow {
            seed: cfg.seed,
            variant: name.to_string(),
            enable_contrastive: contrastive,
            enable_multi_order: multi_order,
            report,
        });
    }
    Ok(rows)
}

/// Ablation over several seeds. Each seed drives both the generator (unless
/// `synth_seed` pins it) and the model initialization.
pub fn ablate(cfg: &RunConfig, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let mut c = cfg.clone();
        c.seed = seed;
        let data = prepare_data(&c)?;
        if data.dataset.labels.is_none() {
            return Err(Error::Config("ablation needs ground-truth labels".into()));
        }
        rows.extend(ablate_prepared(&c, &data)?);
    }
    Ok(rows)
}

/// Trains every (α, β) cell from one shared pre-trained model, in row-major
/// grid order. Contrastive terms are forced on so the weights take effect.
pub fn sweep_prepared(
    cfg: &RunConfig,
    data: &PreparedData,
    pre: &Pretrained,
    alphas: &[f64],
    betas: &[f64],
) -> Result<Vec<SweepCell>> {
    if alphas.is_empty() || betas.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    if data.dataset.labels.is_none() {
        return Err(Error::Config("sweep needs ground-truth labels".into()));
    }
    let mut cells = Vec::with_capacity(alphas.len() * betas.len());
    for &alpha in alphas {
        for &beta in betas {
            let mut c = cfg.clone();
            c.enable_contrastive = true;
            c.weights.alpha = alpha;
            c.weights.beta = beta;
            let (report, _) = train(&c, data, pre.model.clone(), pre.trace.clone())?;
            let scores = report.metrics.expect("labels checked above");
            info!("sweep alpha={alpha} beta={beta}: acc {:.4}", scores.acc);
            cells.push(SweepCell {
                alpha,
                beta,
                scores,
            });
        }
    }
    Ok(cells)
}

pub fn sweep(cfg: &RunConfig, alphas: &[f64], betas: &[f64]) -> Result<Vec<SweepCell>> {
    let data = prepare_data(cfg)?;
    let pre = pretrain(cfg, &data)?;
    sweep_prepared(cfg, &data, &pre, alphas, betas)
}
