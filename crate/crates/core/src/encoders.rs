//! Attribute autoencoder and graph autoencoder.
//!
//! Both encoders map `N×D` features to an `N×d′` latent embedding and decode
//! back to `N×D`. The graph autoencoder propagates through the normalized
//! adjacency at every layer and additionally reconstructs the adjacency as
//! the latent Gram matrix `Z Zᵀ`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Tensor};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{Binding, ParamId, ParamSet};

/// Layer widths shared by both encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Applied on hidden layers; the last encoder and decoder layers are linear.
    pub activation: Activation,
}

impl Architecture {
    fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.latent_dim);
        dims
    }

    fn decoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.latent_dim];
        dims.extend(self.hidden.iter().rev());
        dims.push(self.input_dim);
        dims
    }

    fn activations(&self, layers: usize) -> impl Iterator<Item = Activation> + '_ {
        (0..layers).map(move |i| {
            if i + 1 == layers {
                Activation::Linear
            } else {
                self.activation
            }
        })
    }

    fn check_input(&self, what: &str, x: &Tensor<'_>) -> Result<()> {
        if x.shape().1 != self.input_dim {
            return Err(Error::Config(format!(
                "{what} expects {} input features, got {}",
                self.input_dim,
                x.shape().1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

impl DenseLayer {
    fn forward<'t>(&self, bound: &Binding<'t>, x: Tensor<'t>) -> Result<Tensor<'t>> {
        x.matmul(bound.get(self.weight))?
            .add_row_bias(bound.get(self.bias))?
            .activation(self.activation)
    }
}

/// Graph convolution `σ(Ã Z W)` without bias.
#[derive(Debug, Clone)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub activation: Activation,
}

impl GcnLayer {
    fn forward<'t>(
        &self,
        bound: &Binding<'t>,
        z: Tensor<'t>,
        a_tilde: Tensor<'t>,
    ) -> Result<Tensor<'t>> {
        let w = bound.get(self.weight);
        let (in_dim, out_dim) = w.shape();
        // Multiply through the narrower side first.
        let pre = if in_dim <= out_dim {
            a_tilde.matmul(z)?.matmul(w)?
        } else {
            a_tilde.matmul(z.matmul(w)?)?
        };
        pre.activation(self.activation)
    }
}

#[derive(Debug, Clone)]
pub struct AutoEncoder {
    pub arch: Architecture,
    pub encoder: Vec<DenseLayer>,
    pub decoder: Vec<DenseLayer>,
}

pub struct AeOutput<'t> {
    pub latent: Tensor<'t>,
    pub recon_features: Tensor<'t>,
}

impl AutoEncoder {
    pub fn new<R: Rng>(params: &mut ParamSet, arch: &Architecture, rng: &mut R) -> Self {
        let mut build = |part: &str, dims: &[usize]| -> Vec<DenseLayer> {
            arch.activations(dims.len() - 1)
                .enumerate()
                .map(|(i, activation)| DenseLayer {
                    weight: params.add_glorot(
                        format!("ae.{part}.{i}.weight"),
                        dims[i],
                        dims[i + 1],
                        rng,
                    ),
                    bias: params.add(format!("ae.{part}.{i}.bias"), Matrix::zeros(1, dims[i + 1])),
                    activation,
                })
                .collect()
        };
        let encoder = build("enc", &arch.encoder_dims());
        let decoder = build("dec", &arch.decoder_dims());
        Self {
            arch: arch.clone(),
            encoder,
            decoder,
        }
    }

    pub fn forward<'t>(&self, bound: &Binding<'t>, x: Tensor<'t>) -> Result<AeOutput<'t>> {
        self.arch.check_input("autoencoder", &x)?;
        let mut h = x;
        for layer in &self.encoder {
            h = layer.forward(bound, h)?;
        }
        let latent = h;
        for layer in &self.decoder {
            h = layer.forward(bound, h)?;
        }
        Ok(AeOutput {
            latent,
            recon_features: h,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GraphAutoEncoder {
    pub arch: Architecture,
    pub encoder: Vec<GcnLayer>,
    pub decoder: Vec<GcnLayer>,
}

pub struct GaeOutput<'t> {
    pub latent: Tensor<'t>,
    pub recon_features: Tensor<'t>,
    /// `latent · latentᵀ`
    pub recon_adjacency: Tensor<'t>,
}

impl GraphAutoEncoder {
    pub fn new<R: Rng>(params: &mut ParamSet, arch: &Architecture, rng: &mut R) -> Self {
        let mut build = |part: &str, dims: &[usize]| -> Vec<GcnLayer> {
            arch.activations(dims.len() - 1)
                .enumerate()
                .map(|(i, activation)| GcnLayer {
                    weight: params.add_glorot(
                        format!("gae.{part}.{i}.weight"),
                        dims[i],
                        dims[i + 1],
                        rng,
                    ),
                    activation,
                })
                .collect()
        };
        let encoder = build("enc", &arch.encoder_dims());
        let decoder = build("dec", &arch.decoder_dims());
        Self {
            arch: arch.clone(),
            encoder,
            decoder,
        }
    }

    pub fn forward<'t>(
        &self,
        bound: &Binding<'t>,
        x: Tensor<'t>,
        a_tilde: Tensor<'t>,
    ) -> Result<GaeOutput<'t>> {
        self.arch.check_input("graph autoencoder", &x)?;
        let n = x.shape().0;
        if a_tilde.shape() != (n, n) {
            return Err(Error::Config(format!(
                "adjacency is {:?} but features have {n} rows",
                a_tilde.shape()
            )));
        }
        let mut z = x;
        for layer in &self.encoder {
            z = layer.forward(bound, z, a_tilde)?;
        }
        let latent = z;
        for layer in &self.decoder {
            z = layer.forward(bound, z, a_tilde)?;
        }
        let recon_adjacency = latent.matmul_t(latent)?;
        Ok(GaeOutput {
            latent,
            recon_features: z,
            recon_adjacency,
        })
    }
}
