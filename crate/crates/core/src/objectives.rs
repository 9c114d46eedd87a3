//! Loss terms and the weighted training objective.
//!
//! | term     | definition                              |
//! |----------|-----------------------------------------|
//! | `l_ae`   | `‖X̂_ae − X‖²`                            |
//! | `l_f`    | `‖ÃX − X̂_gae‖² / 2N`                     |
//! | `l_s`    | `‖Ã − ZZᵀ‖² / 2N`                        |
//! | `l_igae` | `l_f + γ l_s`                            |
//! | `l_pre`  | `‖Z_gae − Z_ae‖²`                        |
//! | `l_train`| `‖Z_final − Z_ae‖²`                      |
//! | `l_c`    | `α l_pre + β l_train`                    |
//! | `total`  | `l_ae + l_igae + l_c + λ l_kl`           |
//!
//! All alignment terms act on latent (`N×d′`) embeddings. With
//! `mean_normalize` every squared-error sum is divided by its element count
//! instead (and the KL term by `N`).

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gamma: f64,
    pub lambda_kl: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            lambda_kl: 10.0,
            alpha: 0.5,
            beta: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("lambda_kl", self.lambda_kl),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Scalar values of every term, for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ae: f64,
    pub l_f: f64,
    pub l_s: f64,
    pub l_igae: f64,
    pub l_pre: f64,
    pub l_train: f64,
    pub l_c: f64,
    pub l_kl: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Terms in a fixed order, paired with their names.
    pub fn named_terms(&self) -> [(&'static str, f64); 9] {
        [
            ("l_ae", self.l_ae),
            ("l_f", self.l_f),
            ("l_s", self.l_s),
            ("l_igae", self.l_igae),
            ("l_pre", self.l_pre),
            ("l_train", self.l_train),
            ("l_c", self.l_c),
            ("l_kl", self.l_kl),
            ("total", self.total),
        ]
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.named_terms()
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }
}

fn element_scale(mean_normalize: bool, t: &Tensor<'_>) -> f64 {
    if mean_normalize {
        let (r, c) = t.shape();
        1.0 / (r * c).max(1) as f64
    } else {
        1.0
    }
}

/// `‖recon − x‖²`.
pub fn loss_ae<'t>(recon: Tensor<'t>, x: Tensor<'t>) -> Result<Tensor<'t>> {
    recon.frobenius_sq(x)
}

pub struct IgaeTerms<'t> {
    pub l_f: Tensor<'t>,
    pub l_s: Tensor<'t>,
    pub l_igae: Tensor<'t>,
}

/// Feature and structure reconstruction of the graph autoencoder.
pub fn loss_igae<'t>(
    recon_feat: Tensor<'t>,
    recon_adj: Tensor<'t>,
    x: Tensor<'t>,
    a_tilde: Tensor<'t>,
    gamma: f64,
) -> Result<IgaeTerms<'t>> {
    let n = x.shape().0;
    let factor = 1.0 / (2.0 * n as f64);
    let ax = a_tilde.matmul(x)?;
    let l_f = ax.frobenius_sq(recon_feat)?.scale(factor)?;
    let l_s = a_tilde.frobenius_sq(recon_adj)?.scale(factor)?;
    let l_igae = l_f.add(l_s.scale(gamma)?)?;
    Ok(IgaeTerms { l_f, l_s, l_igae })
}

pub struct ContrastiveTerms<'t> {
    pub l_pre: Tensor<'t>,
    pub l_train: Tensor<'t>,
    pub l_c: Tensor<'t>,
}

/// Alignment of the graph latent and (optionally) the fused embedding to the
/// attribute latent. Without `z_final`, `l_train` is a constant zero.
pub fn loss_contrastive<'t>(
    z_gae: Tensor<'t>,
    z_ae: Tensor<'t>,
    z_final: Option<Tensor<'t>>,
    alpha: f64,
    beta: f64,
) -> Result<ContrastiveTerms<'t>> {
    let l_pre = z_gae.frobenius_sq(z_ae)?;
    let l_train = match z_final {
        Some(zf) => zf.frobenius_sq(z_ae)?,
        None => z_ae.tape().constant(Matrix::scalar(0.0)),
    };
    let l_c = l_pre.scale(alpha)?.add(l_train.scale(beta)?)?;
    Ok(ContrastiveTerms {
        l_pre,
        l_train,
        l_c,
    })
}

/// Every term of one forward pass, on the tape.
pub struct LossTerms<'t> {
    pub l_ae: Tensor<'t>,
    pub l_f: Tensor<'t>,
    pub l_s: Tensor<'t>,
    pub l_igae: Tensor<'t>,
    pub l_pre: Tensor<'t>,
    pub l_train: Tensor<'t>,
    pub l_c: Tensor<'t>,
    pub l_kl: Tensor<'t>,
}

/// `l_ae + l_igae + l_c + λ l_kl`, plus the scalar breakdown.
pub fn total_loss<'t>(
    terms: &LossTerms<'t>,
    weights: &LossWeights,
) -> Result<(Tensor<'t>, LossBreakdown)> {
    let total = terms
        .l_ae
        .add(terms.l_igae)?
        .add(terms.l_c)?
        .add(terms.l_kl.scale(weights.lambda_kl)?)?;
    let breakdown = LossBreakdown {
        l_ae: terms.l_ae.item(),
        l_f: terms.l_f.item(),
        l_s: terms.l_s.item(),
        l_igae: terms.l_igae.item(),
        l_pre: terms.l_pre.item(),
        l_train: terms.l_train.item(),
        l_c: terms.l_c.item(),
        l_kl: terms.l_kl.item(),
        total: total.item(),
    };
    Ok((total, breakdown))
}

/// Inputs for one evaluation of the objective. Absent parts contribute zero.
pub struct ObjectiveInputs<'t> {
    pub x: Tensor<'t>,
    pub a_tilde: Tensor<'t>,
    pub ae_recon: Option<Tensor<'t>>,
    pub ae_latent: Option<Tensor<'t>>,
    pub gae_recon_features: Option<Tensor<'t>>,
    pub gae_recon_adjacency: Option<Tensor<'t>>,
    pub gae_latent: Option<Tensor<'t>>,
    pub z_final: Option<Tensor<'t>>,
    pub l_kl: Option<Tensor<'t>>,
}

/// Builds every term from raw model outputs, applying the chosen scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub weights: LossWeights,
    pub mean_normalize: bool,
}

impl Objective {
    pub fn evaluate<'t>(&self, inp: &ObjectiveInputs<'t>) -> Result<(Tensor<'t>, LossBreakdown)> {
        let tape = inp.x.tape();
        let zero = || tape.constant(Matrix::scalar(0.0));
        let mn = self.mean_normalize;
        let w = &self.weights;

        let l_ae = match inp.ae_recon {
            Some(r) => loss_ae(r, inp.x)?.scale(element_scale(mn, &r))?,
            None => zero(),
        };

        let (l_f, l_s, l_igae) = match (inp.gae_recon_features, inp.gae_recon_adjacency) {
            (Some(rf), Some(ra)) if mn => {
                let ax = inp.a_tilde.matmul(inp.x)?;
                let l_f = ax.frobenius_sq(rf)?.scale(element_scale(true, &rf))?;
                let l_s = inp
                    .a_tilde
                    .frobenius_sq(ra)?
                    .scale(element_scale(true, &ra))?;
                let l_igae = l_f.add(l_s.scale(w.gamma)?)?;
                (l_f, l_s, l_igae)
            }
            (Some(rf), Some(ra)) => {
                let t = loss_igae(rf, ra, inp.x, inp.a_tilde, w.gamma)?;
                (t.l_f, t.l_s, t.l_igae)
            }
            _ => (zero(), zero(), zero()),
        };

        let (l_pre, l_train, l_c) = match (inp.gae_latent, inp.ae_latent) {
            (Some(zg), Some(za)) => {
                let t = loss_contrastive(zg, za, inp.z_final, 1.0, 1.0)?;
                let s = element_scale(mn, &za);
                let l_pre = t.l_pre.scale(s)?;
                let l_train = t.l_train.scale(s)?;
                let l_c = l_pre.scale(w.alpha)?.add(l_train.scale(w.beta)?)?;
                (l_pre, l_train, l_c)
            }
            _ => (zero(), zero(), zero()),
        };

        let l_kl = match inp.l_kl {
            Some(kl) if mn => kl.scale(1.0 / inp.x.shape().0.max(1) as f64)?,
            Some(kl) => kl,
            None => zero(),
        };

        total_loss(
            &LossTerms {
                l_ae,
                l_f,
                l_s,
                l_igae,
                l_pre,
                l_train,
                l_c,
                l_kl,
            },
            w,
        )
    }
}
