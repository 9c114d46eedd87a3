//! Structural and attribute information fusion.
//!
//! ```text
//! Z_I     = δ Z_ae + (1 − δ) Z_gae          δ = sigmoid(raw)
//! Z_L     = λ₁ Ã Z_I + λ₂ Ã² Z_I
//! S       = row_softmax(Z_L Z_Lᵀ)
//! Z_G     = S Z_L
//! Z_final = λ_b Z_G + Z_L
//! ```

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Activation, Tensor};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{Binding, ParamId, ParamSet};

pub const INIT_DELTA_RAW: f64 = 0.0;
pub const INIT_LAMBDA1: f64 = 0.5;
pub const INIT_LAMBDA2: f64 = 0.5;
pub const INIT_LAMBDA_B: f64 = 0.1;

/// Handles to the four fusion scalars inside a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct FusionParams {
    /// Unconstrained; the blend weight is `sigmoid(delta_raw)`.
    pub delta_raw: ParamId,
    pub lambda1: ParamId,
    pub lambda2: ParamId,
    pub lambda_b: ParamId,
}

/// Effective fusion weights after reparameterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionCoefficients {
    pub delta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_b: f64,
}

pub struct FusionOutput<'t> {
    pub z_i: Tensor<'t>,
    pub z1: Tensor<'t>,
    pub z2: Tensor<'t>,
    pub z_l: Tensor<'t>,
    pub s: Tensor<'t>,
    pub z_g: Tensor<'t>,
    pub z_final: Tensor<'t>,
}

impl FusionParams {
    /// Registers fresh fusion scalars. With `multi_order` off, λ₂ is pinned at 0.
    pub fn new(params: &mut ParamSet, multi_order: bool) -> Self {
        let delta_raw = params.add("fusion.delta_raw", Matrix::scalar(INIT_DELTA_RAW));
        let lambda1 = params.add("fusion.lambda1", Matrix::scalar(INIT_LAMBDA1));
        let lambda2 = params.add("fusion.lambda2", Matrix::scalar(INIT_LAMBDA2));
        let lambda_b = params.add("fusion.lambda_b", Matrix::scalar(INIT_LAMBDA_B));
        let fp = Self {
            delta_raw,
            lambda1,
            lambda2,
            lambda_b,
        };
        if !multi_order {
            fp.disable_multi_order(params);
        }
        fp
    }

    pub fn disable_multi_order(&self, params: &mut ParamSet) {
        params.set(self.lambda2, Matrix::scalar(0.0));
        params.set_frozen(self.lambda2, true);
    }

    pub fn effective_coefficients(&self, params: &ParamSet) -> FusionCoefficients {
        FusionCoefficients {
            delta: sigmoid(params.get(self.delta_raw).item()),
            lambda1: params.get(self.lambda1).item(),
            lambda2: params.get(self.lambda2).item(),
            lambda_b: params.get(self.lambda_b).item(),
        }
    }

    pub fn fuse<'t>(
        &self,
        bound: &Binding<'t>,
        z_ae: Tensor<'t>,
        z_gae: Tensor<'t>,
        a_tilde: Tensor<'t>,
        a_tilde_sq: Tensor<'t>,
    ) -> Result<FusionOutput<'t>> {
        let (n, _) = z_ae.shape();
        if z_ae.shape() != z_gae.shape() {
            return Err(Error::Dimension {
                op: "fuse",
                left: z_ae.shape(),
                right: z_gae.shape(),
            });
        }
        if a_tilde.shape() != (n, n) || a_tilde_sq.shape() != (n, n) {
            return Err(Error::Dimension {
                op: "fuse",
                left: z_ae.shape(),
                right: a_tilde.shape(),
            });
        }

        let delta = bound.get(self.delta_raw).activation(Activation::Sigmoid)?;
        let one_minus_delta = delta.affine(-1.0, 1.0)?;
        let z_i = z_ae
            .scale_by(delta)?
            .add(z_gae.scale_by(one_minus_delta)?)?;

        let z1 = a_tilde.matmul(z_i)?;
        let z2 = a_tilde_sq.matmul(z_i)?;
        let z_l = z1
            .scale_by(bound.get(self.lambda1))?
            .add(z2.scale_by(bound.get(self.lambda2))?)?;

        let s = z_l.matmul_t(z_l)?.row_softmax()?;
        let z_g = s.matmul(z_l)?;
        let z_final = z_g.scale_by(bound.get(self.lambda_b))?.add(z_l)?;

        Ok(FusionOutput {
            z_i,
            z1,
            z2,
            z_l,
            s,
            z_g,
            z_final,
        })
    }
}
