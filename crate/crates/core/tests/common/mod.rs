//! Test oracles shared by the integration suites: central finite differences
//! for gradients, and exhaustive permutation search for accuracy.
#![allow(dead_code)]

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cgcn::autodiff::{Activation, Tape, Tensor};
use cgcn::clustering::{kl_triplet_loss, soft_assign, target_distribution};
use cgcn::encoders::Architecture;
use cgcn::graph::GraphDataset;
use cgcn::model::{GraphInputs, Model};
use cgcn::objectives::{
    loss_ae, loss_contrastive, loss_igae, LossWeights, Objective, ObjectiveInputs,
};
use cgcn::params::ParamSet;
use cgcn::{Matrix, Result};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Uniform in (-1, 1) but kept at least 0.05 away from 0, clear of the relu kink.
pub fn away_from_zero(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    uniform(rng, rows, cols, -1.0, 1.0).map(|v| {
        if v.abs() < 0.05 {
            v.signum() * 0.05 + v
        } else {
            v
        }
    })
}

/// A scalar loss evaluated at `params`, together with its analytic gradients.
pub type Evaluation = (f64, Vec<Option<Matrix>>);

/// Largest relative error between analytic gradients and central differences
/// over every entry of every unfrozen parameter.
pub fn gradcheck(params: &ParamSet, f: impl Fn(&ParamSet) -> Result<Evaluation>) -> Result<f64> {
    let (_, analytic) = f(params)?;
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for id in params.ids() {
        if params.is_frozen(id) {
            continue;
        }
        let len = params.get(id).as_slice().len();
        for e in 0..len {
            let orig = params.get(id).as_slice()[e];
            probe.get_mut(id).as_mut_slice()[e] = orig + FD_STEP;
            let plus = f(&probe)?.0;
            probe.get_mut(id).as_mut_slice()[e] = orig - FD_STEP;
            let minus = f(&probe)?.0;
            probe.get_mut(id).as_mut_slice()[e] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[id.index()]
                .as_ref()
                .map_or(0.0, |g| g.as_slice()[e]);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    Ok(worst)
}

/// Checks one op: `inputs` become trainable leaves, the op output is reduced
/// with fixed random weights so the whole Jacobian is exercised.
pub fn check_op<F>(inputs: Vec<Matrix>, weights_seed: u64, op: F) -> Result<f64>
where
    F: for<'t> Fn(&[Tensor<'t>]) -> Result<Tensor<'t>>,
{
    let mut params = ParamSet::new();
    for (i, m) in inputs.into_iter().enumerate() {
        params.add(format!("in{i}"), m);
    }
    let weights: std::cell::OnceCell<Rc<Matrix>> = std::cell::OnceCell::new();
    gradcheck(&params, |p| {
        let tape = Tape::new();
        let bound = p.bind(&tape);
        let xs: Vec<Tensor> = p.ids().map(|id| bound.get(id)).collect();
        let out = op(&xs)?;
        let (r, c) = out.shape();
        let w = weights.get_or_init(|| Rc::new(uniform(&mut rng(weights_seed), r, c, -1.0, 1.0)));
        let loss = out.weighted_sum(Rc::clone(w))?;
        let grads = bound.collect_grads(&loss.backward()?);
        Ok((loss.item(), grads))
    })
}

pub const OPS: &[&str] = &[
    "matmul",
    "matmul_t",
    "transpose",
    "add",
    "sub",
    "hadamard",
    "scale_by",
    "add_row_bias",
    "affine",
    "scale",
    "relu",
    "tanh",
    "sigmoid",
    "linear",
    "row_softmax",
    "row_normalize",
    "powf",
    "ln_floor",
    "sq_dist",
    "frobenius_sq",
    "sum",
    "weighted_sum",
];

/// One randomized trial of a primitive op on matrices with at most 6 rows.
pub fn op_trial(name: &str, seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let n = r.random_range(1..=6);
    let m = r.random_range(1..=4);
    let p = r.random_range(1..=4);
    let ws = seed.wrapping_mul(31).wrapping_add(7);
    let mut u = |rows, cols| uniform(&mut r, rows, cols, -1.0, 1.0);
    match name {
        "matmul" => check_op(vec![u(n, m), u(m, p)], ws, |x| x[0].matmul(x[1])),
        "matmul_t" => check_op(vec![u(n, m), u(p, m)], ws, |x| x[0].matmul_t(x[1])),
        "transpose" => check_op(vec![u(n, m)], ws, |x| x[0].transpose()),
        "add" => check_op(vec![u(n, m), u(n, m)], ws, |x| x[0].add(x[1])),
        "sub" => check_op(vec![u(n, m), u(n, m)], ws, |x| x[0].sub(x[1])),
        "hadamard" => check_op(vec![u(n, m), u(n, m)], ws, |x| x[0].hadamard(x[1])),
        "scale_by" => check_op(vec![u(n, m), u(1, 1)], ws, |x| x[0].scale_by(x[1])),
        "add_row_bias" => check_op(vec![u(n, m), u(1, m)], ws, |x| x[0].add_row_bias(x[1])),
        "affine" => {
            let (s, t) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
            check_op(vec![uniform(&mut r, n, m, -1.0, 1.0)], ws, move |x| {
                x[0].affine(s, t)
            })
        }
        "scale" => {
            let s = r.random_range(-2.0..2.0);
            check_op(vec![uniform(&mut r, n, m, -1.0, 1.0)], ws, move |x| {
                x[0].scale(s)
            })
        }
        "relu" => check_op(vec![away_from_zero(&mut r, n, m)], ws, |x| {
            x[0].activation(Activation::Relu)
        }),
        "tanh" => check_op(vec![u(n, m)], ws, |x| x[0].activation(Activation::Tanh)),
        "sigmoid" => check_op(vec![u(n, m)], ws, |x| x[0].activation(Activation::Sigmoid)),
        "linear" => check_op(vec![u(n, m)], ws, |x| x[0].activation(Activation::Linear)),
        "row_softmax" => check_op(vec![uniform(&mut r, n, m, -3.0, 3.0)], ws, |x| {
            x[0].row_softmax()
        }),
        "row_normalize" => check_op(vec![uniform(&mut r, n, m, 0.1, 2.0)], ws, |x| {
            x[0].row_normalize()
        }),
        "powf" => {
            let e = r.random_range(-2.0..2.0);
            check_op(vec![uniform(&mut r, n, m, 0.5, 2.0)], ws, move |x| {
                x[0].powf(e)
            })
        }
        "ln_floor" => check_op(vec![uniform(&mut r, n, m, 0.1, 2.0)], ws, |x| {
            x[0].ln_floor(1e-12)
        }),
        "sq_dist" => check_op(vec![u(n, m), u(p, m)], ws, |x| x[0].sq_dist(x[1])),
        "frobenius_sq" => check_op(vec![u(n, m), u(n, m)], ws, |x| x[0].frobenius_sq(x[1])),
        "sum" => check_op(vec![u(n, m)], ws, |x| x[0].sum()),
        "weighted_sum" => {
            let w = Rc::new(uniform(&mut r, n, m, -1.0, 1.0));
            check_op(vec![uniform(&mut r, n, m, -1.0, 1.0)], ws, move |x| {
                x[0].weighted_sum(Rc::clone(&w))
            })
        }
        other => panic!("unknown op {other}"),
    }
}

/// Random graph with `n` nodes, `d` features and each pair linked with probability 1/2.
pub fn random_graph(r: &mut impl Rng, n: usize, d: usize, k: usize) -> GraphDataset {
    let features = uniform(r, n, d, -1.0, 1.0);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.random_bool(0.5) {
                edges.push((i, j));
            }
        }
    }
    GraphDataset::new(features, edges, None, k).unwrap()
}

/// Tiny smooth model (tanh hidden layers, so no kinks) with random centers.
pub fn tiny_model(r: &mut impl Rng, d: usize, k: usize, seed: u64) -> Model {
    let arch = Architecture {
        input_dim: d,
        hidden: vec![4, 3],
        latent_dim: 2,
        activation: Activation::Tanh,
    };
    let mut model = Model::new(&arch, true, seed);
    // Move the fusion scalars away from their symmetric starting point.
    for id in [
        model.fusion.delta_raw,
        model.fusion.lambda1,
        model.fusion.lambda2,
        model.fusion.lambda_b,
    ] {
        let v = model.params.get(id).item() + r.random_range(-0.3..0.3);
        model.params.set(id, Matrix::scalar(v));
    }
    model.set_centers(uniform(r, k, 2, -1.0, 1.0)).unwrap();
    model
}

pub const COMPOSITES: &[&str] = &[
    "ae_reconstruction",
    "igae",
    "contrastive_pre",
    "contrastive_train",
    "fusion",
    "soft_assignment",
    "kl_triplet",
    "total_objective",
    "total_objective_mean_normalized",
];

/// One randomized trial of a composite loss over every model parameter.
pub fn composite_trial(name: &str, seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let n = r.random_range(2..=6);
    let d = r.random_range(2..=4);
    let k = r.random_range(2..=n.min(3));
    let ds = random_graph(&mut r, n, d, k);
    let inputs = GraphInputs::from_dataset(&ds);
    let model = tiny_model(&mut r, d, k, seed);
    let dof = r.random_range(0.5..2.0);
    let gamma = r.random_range(0.0..1.0);
    let weights = LossWeights {
        gamma,
        lambda_kl: r.random_range(0.0..10.0),
        alpha: r.random_range(0.0..2.0),
        beta: r.random_range(0.0..2.0),
    };
    let fixed = Rc::new(uniform(&mut r, n, 2, -1.0, 1.0));

    // P is a detached target: computed once from the starting parameters.
    let p_target = {
        let tape = Tape::new();
        let bound = model.params.bind(&tape);
        let pass = model.forward(&bound, &inputs.bind(&tape))?;
        let q = model.assign(&bound, &pass, dof)?;
        target_distribution(&q.q_fused.value())
    };

    gradcheck(&model.params, |params| {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let gi = inputs.bind(&tape);
        let pass = model.forward(&bound, &gi)?;
        let loss = match name {
            "ae_reconstruction" => loss_ae(pass.ae.recon_features, gi.x)?,
            "igae" => {
                loss_igae(
                    pass.gae.recon_features,
                    pass.gae.recon_adjacency,
                    gi.x,
                    gi.a_tilde,
                    gamma,
                )?
                .l_igae
            }
            "contrastive_pre" => {
                loss_contrastive(pass.gae.latent, pass.ae.latent, None, 1.0, 0.0)?.l_c
            }
            "contrastive_train" => {
                loss_contrastive(
                    pass.gae.latent,
                    pass.ae.latent,
                    Some(pass.fused.z_final),
                    0.5,
                    1.5,
                )?
                .l_c
            }
            "fusion" => pass.fused.z_final.weighted_sum(Rc::clone(&fixed))?,
            "soft_assignment" => {
                let centers = bound.get(model.centers.unwrap());
                let q = soft_assign(pass.fused.z_final, centers, dof)?;
                let w = Rc::new(uniform(&mut rng(seed ^ 0xABCD), n, k, -1.0, 1.0));
                q.weighted_sum(w)?
            }
            "kl_triplet" => {
                let q = model.assign(&bound, &pass, dof)?;
                kl_triplet_loss(&p_target, q.q_fused, q.q_ae, q.q_gae)?
            }
            "total_objective" | "total_objective_mean_normalized" => {
                let q = model.assign(&bound, &pass, dof)?;
                let l_kl = kl_triplet_loss(&p_target, q.q_fused, q.q_ae, q.q_gae)?;
                let objective = Objective {
                    weights,
                    mean_normalize: name.ends_with("normalized"),
                };
                objective
                    .evaluate(&ObjectiveInputs {
                        x: gi.x,
                        a_tilde: gi.a_tilde,
                        ae_recon: Some(pass.ae.recon_features),
                        ae_latent: Some(pass.ae.latent),
                        gae_recon_features: Some(pass.gae.recon_features),
                        gae_recon_adjacency: Some(pass.gae.recon_adjacency),
                        gae_latent: Some(pass.gae.latent),
                        z_final: Some(pass.fused.z_final),
                        l_kl: Some(l_kl),
                    })?
                    .0
            }
            other => panic!("unknown composite {other}"),
        };
        let grads = bound.collect_grads(&loss.backward()?);
        Ok((loss.item(), grads))
    })
}

/// Accuracy by trying every injective map from predicted clusters to classes.
pub fn brute_force_accuracy(truth: &[usize], pred: &[usize]) -> f64 {
    let classes = truth.iter().max().map_or(0, |m| m + 1);
    let clusters = pred.iter().max().map_or(0, |m| m + 1);
    // Map each cluster to a class or to "unmatched" (usize::MAX); a class is used at most once.
    fn search(
        c: usize,
        clusters: usize,
        classes: usize,
        used: &mut Vec<bool>,
        map: &mut Vec<usize>,
        best: &mut usize,
        truth: &[usize],
        pred: &[usize],
    ) {
        if c == clusters {
            let hits = truth
                .iter()
                .zip(pred)
                .filter(|(t, p)| map[**p] == **t)
                .count();
            *best = (*best).max(hits);
            return;
        }
        map[c] = usize::MAX;
        search(c + 1, clusters, classes, used, map, best, truth, pred);
        for k in 0..classes {
            if !used[k] {
                used[k] = true;
                map[c] = k;
                search(c + 1, clusters, classes, used, map, best, truth, pred);
                used[k] = false;
            }
        }
    }
    let mut best = 0;
    search(
        0,
        clusters,
        classes,
        &mut vec![false; classes],
        &mut vec![usize::MAX; clusters],
        &mut best,
        truth,
        pred,
    );
    best as f64 / truth.len() as f64
}

/// Every labeling of `n` items with labels in `0..k`.
pub fn all_labelings(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|l| {
                (0..k).map(move |v| {
                    let mut l = l.clone();
                    l.push(v);
                    l
                })
            })
            .collect();
    }
    out
}

pub struct DistributionCheck {
    /// Largest |row sum − 1| over Q, Q′, Q″, P and S.
    pub max_row_deviation: f64,
    pub kl: f64,
    /// KL with all three assignments set to the target itself.
    pub kl_identity: f64,
}

fn row_deviation(m: &Matrix) -> f64 {
    m.row_sums()
        .iter()
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max)
}

/// One random model and graph: checks that every distribution is row-stochastic.
pub fn distribution_trial(seed: u64) -> Result<DistributionCheck> {
    let mut r = rng(seed);
    let n = r.random_range(2..=12);
    let d = r.random_range(2..=5);
    let k = r.random_range(2..=n.min(4));
    let ds = random_graph(&mut r, n, d, k);
    let inputs = GraphInputs::from_dataset(&ds);
    let mut model = tiny_model(&mut r, d, k, seed);
    let spread = r.random_range(0.1..10.0);
    model.set_centers(uniform(&mut r, k, 2, -spread, spread))?;
    let dof = r.random_range(0.2..5.0);

    let tape = Tape::new();
    let bound = model.params.bind(&tape);
    let pass = model.forward(&bound, &inputs.bind(&tape))?;
    let q = model.assign(&bound, &pass, dof)?;
    let p = target_distribution(&q.q_fused.value());
    let mut dev: f64 = 0.0;
    for m in [
        q.q_fused.value(),
        q.q_ae.value(),
        q.q_gae.value(),
        pass.fused.s.value(),
    ] {
        dev = dev.max(row_deviation(&m));
    }
    dev = dev.max(row_deviation(&p));
    let kl = kl_triplet_loss(&p, q.q_fused, q.q_ae, q.q_gae)?.item();
    let pt = tape.constant(p.clone());
    let kl_identity = kl_triplet_loss(&p, pt, pt, pt)?.item();
    Ok(DistributionCheck {
        max_row_deviation: dev,
        kl,
        kl_identity,
    })
}

/// ARI by enumerating every pair of items.
pub fn pairwise_ari(truth: &[usize], pred: &[usize]) -> f64 {
    let n = truth.len();
    let (mut both, mut same_t, mut same_p) = (0f64, 0f64, 0f64);
    for i in 0..n {
        for j in i + 1..n {
            let t = truth[i] == truth[j];
            let p = pred[i] == pred[j];
            same_t += t as u8 as f64;
            same_p += p as u8 as f64;
            both += (t && p) as u8 as f64;
        }
    }
    let total = (n * n.saturating_sub(1) / 2) as f64;
    if total == 0.0 {
        return 1.0;
    }
    let expected = same_t * same_p / total;
    let max = (same_t + same_p) / 2.0;
    if max - expected == 0.0 {
        1.0
    } else {
        (both - expected) / (max - expected)
    }
}

/// NMI from empirical joint probabilities, arithmetic-mean normalization.
pub fn reference_nmi(truth: &[usize], pred: &[usize]) -> f64 {
    use std::collections::HashMap;
    let n = truth.len() as f64;
    let mut pt: HashMap<usize, f64> = HashMap::new();
    let mut pp: HashMap<usize, f64> = HashMap::new();
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    for (&t, &p) in truth.iter().zip(pred) {
        *pt.entry(t).or_default() += 1.0 / n;
        *pp.entry(p).or_default() += 1.0 / n;
        *joint.entry((t, p)).or_default() += 1.0 / n;
    }
    let h = |m: &HashMap<usize, f64>| -m.values().map(|p| p * p.ln()).sum::<f64>();
    let (ht, hp) = (h(&pt), h(&pp));
    if ht <= 1e-15 || hp <= 1e-15 {
        return 0.0;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(t, p), &pj)| pj * (pj / (pt[&t] * pp[&p])).ln())
        .sum();
    mi / ((ht + hp) / 2.0)
}

pub struct MetricsOracleOutcome {
    pub pairs: usize,
    pub max_acc_err: f64,
    pub max_ari_err: f64,
    pub max_nmi_err: f64,
}

/// Every (truth, pred) pair of labelings with n ≤ 6 items and labels in 0..3.
pub fn exhaustive_metrics_oracle() -> MetricsOracleOutcome {
    let mut out = MetricsOracleOutcome {
        pairs: 0,
        max_acc_err: 0.0,
        max_ari_err: 0.0,
        max_nmi_err: 0.0,
    };
    for n in 1..=6 {
        let all = all_labelings(n, 3);
        for t in &all {
            for p in &all {
                let acc = cgcn::metrics::accuracy(t, p).unwrap();
                out.max_acc_err = out
                    .max_acc_err
                    .max((acc - brute_force_accuracy(t, p)).abs());
                let ari = cgcn::metrics::ari(t, p).unwrap();
                out.max_ari_err = out.max_ari_err.max((ari - pairwise_ari(t, p)).abs());
                let nmi = cgcn::metrics::nmi(t, p).unwrap();
                out.max_nmi_err = out.max_nmi_err.max((nmi - reference_nmi(t, p)).abs());
                out.pairs += 1;
            }
        }
    }
    out
}

/// Small SBM and short schedules so pipeline tests finish in seconds.
pub fn small_config(seed: u64) -> cgcn::config::RunConfig {
    let mut cfg = cgcn::config::RunConfig::default();
    for kv in [
        "synth_nodes_per_cluster=25",
        "hidden=32,16",
        "latent_dim=8",
        "epochs_ae=10",
        "epochs_gae=10",
        "epochs_train=15",
        "kmeans_restarts=3",
    ] {
        cfg.apply_override(kv).unwrap();
    }
    cfg.seed = seed;
    cfg
}
