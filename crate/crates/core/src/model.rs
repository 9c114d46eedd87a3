//! The full learnable model and its forward pass.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::clustering::soft_assign;
use crate::encoders::{AeOutput, Architecture, AutoEncoder, GaeOutput, GraphAutoEncoder};
use crate::error::{Error, Result};
use crate::fusion::{FusionOutput, FusionParams};
use crate::graph::{normalize_adjacency, GraphDataset};
use crate::matrix::Matrix;
use crate::params::{Binding, ParamId, ParamSet};

pub const CENTERS_PARAM: &str = "cluster.centers";

/// Dataset tensors that stay constant across steps.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub x: Rc<Matrix>,
    pub a_tilde: Rc<Matrix>,
    pub a_tilde_sq: Rc<Matrix>,
}

impl GraphInputs {
    pub fn from_dataset(ds: &GraphDataset) -> Self {
        let adj = normalize_adjacency(ds);
        Self {
            x: Rc::new(ds.features.clone()),
            a_tilde: Rc::new(adj.a_tilde),
            a_tilde_sq: Rc::new(adj.a_tilde_sq),
        }
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }
}

/// On-tape handles for the graph inputs.
pub struct BoundInputs<'t> {
    pub x: Tensor<'t>,
    pub a_tilde: Tensor<'t>,
    pub a_tilde_sq: Tensor<'t>,
}

impl GraphInputs {
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundInputs<'t> {
        BoundInputs {
            x: tape.constant_shared(Rc::clone(&self.x)),
            a_tilde: tape.constant_shared(Rc::clone(&self.a_tilde)),
            a_tilde_sq: tape.constant_shared(Rc::clone(&self.a_tilde_sq)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub params: ParamSet,
    pub ae: AutoEncoder,
    pub gae: GraphAutoEncoder,
    pub fusion: FusionParams,
    pub centers: Option<ParamId>,
}

pub struct ForwardPass<'t> {
    pub ae: AeOutput<'t>,
    pub gae: GaeOutput<'t>,
    pub fused: FusionOutput<'t>,
}

/// Student-t assignments of the three embeddings.
pub struct Assignments<'t> {
    pub q_fused: Tensor<'t>,
    pub q_ae: Tensor<'t>,
    pub q_gae: Tensor<'t>,
}

/// Off-tape embeddings.
#[derive(Debug, Clone)]
pub struct Embeddings {
    pub z_ae: Matrix,
    pub z_gae: Matrix,
    pub z_final: Matrix,
}

impl Model {
    /// Fresh parameters. Weight initialization consumes `seed` only.
    pub fn new(arch: &Architecture, multi_order: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let ae = AutoEncoder::new(&mut params, arch, &mut rng);
        let gae = GraphAutoEncoder::new(&mut params, arch, &mut rng);
        let fusion = FusionParams::new(&mut params, multi_order);
        Self {
            params,
            ae,
            gae,
            fusion,
            centers: None,
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.ae.arch
    }

    /// Installs (or overwrites) the learnable cluster centers.
    pub fn set_centers(&mut self, centers: Matrix) -> Result<()> {
        if centers.cols() != self.architecture().latent_dim {
            return Err(Error::Dimension {
                op: "set_centers",
                left: (centers.rows(), self.architecture().latent_dim),
                right: centers.shape(),
            });
        }
        match self.centers {
            Some(id) if self.params.get(id).shape() == centers.shape() => {
                self.params.set(id, centers)
            }
            Some(_) => {
                return Err(Error::Contract(
                    "cluster count changed after initialization".into(),
                ));
            }
            None => self.centers = Some(self.params.add(CENTERS_PARAM, centers)),
        }
        Ok(())
    }

    pub fn forward<'t>(
        &self,
        bound: &Binding<'t>,
        inputs: &BoundInputs<'t>,
    ) -> Result<ForwardPass<'t>> {
        let ae = self.ae.forward(bound, inputs.x)?;
        let gae = self.gae.forward(bound, inputs.x, inputs.a_tilde)?;
        let fused = self.fusion.fuse(
            bound,
            ae.latent,
            gae.latent,
            inputs.a_tilde,
            inputs.a_tilde_sq,
        )?;
        Ok(ForwardPass { ae, gae, fused })
    }

    pub fn assign<'t>(
        &self,
        bound: &Binding<'t>,
        pass: &ForwardPass<'t>,
        dof: f64,
    ) -> Result<Assignments<'t>> {
        let id = self
            .centers
            .ok_or_else(|| Error::Contract("cluster centers are not initialized".into()))?;
        let centers = bound.get(id);
        Ok(Assignments {
            q_fused: soft_assign(pass.fused.z_final, centers, dof)?,
            q_ae: soft_assign(pass.ae.latent, centers, dof)?,
            q_gae: soft_assign(pass.gae.latent, centers, dof)?,
        })
    }

    /// Forward pass without gradients.
    pub fn embed(&self, inputs: &GraphInputs) -> Result<Embeddings> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let pass = self.forward(&bound, &inputs.bind(&tape))?;
        Ok(Embeddings {
            z_ae: (*pass.ae.latent.value()).clone(),
            z_gae: (*pass.gae.latent.value()).clone(),
            z_final: (*pass.fused.z_final.value()).clone(),
        })
    }
}
