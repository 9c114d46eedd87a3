//! First-order optimizers over a [`ParamSet`].

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u32,
    m: Vec<Option<Matrix>>,
    v: Vec<Option<Matrix>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Applies one update. `grads` is indexed like the parameter set; `None`
    /// entries (frozen or unused parameters) are left untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Matrix>]) {
        debug_assert_eq!(grads.len(), params.len());
        self.step += 1;
        if self.m.len() < grads.len() {
            self.m.resize(grads.len(), None);
            self.v.resize(grads.len(), None);
        }
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        for (id, grad) in params.ids().zip(grads) {
            let Some(g) = grad else { continue };
            if params.is_frozen(id) {
                continue;
            }
            let i = id.index();
            let value = params.get_mut(id);
            match self.kind {
                OptimizerKind::Sgd => value.add_scaled(g, -self.lr),
                OptimizerKind::Adam => {
                    let (r, c) = g.shape();
                    let m = self.m[i].get_or_insert_with(|| Matrix::zeros(r, c));
                    let v = self.v[i].get_or_insert_with(|| Matrix::zeros(r, c));
                    for (((p, &gv), mv), vv) in value
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(m.as_mut_slice())
                        .zip(v.as_mut_slice())
                    {
                        *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                        *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                        let m_hat = *mv / bc1;
                        let v_hat = *vv / bc2;
                        *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn minimize(kind: OptimizerKind, lr: f64, steps: usize) -> f64 {
        let mut params = ParamSet::new();
        let x = params.add("x", Matrix::scalar(5.0));
        let mut opt = Optimizer::new(kind, lr);
        for _ in 0..steps {
            let tape = Tape::new();
            let bound = params.bind(&tape);
            let target = tape.constant(Matrix::scalar(1.0));
            let loss = bound.get(x).frobenius_sq(target).unwrap();
            let grads = bound.collect_grads(&loss.backward().unwrap());
            opt.step(&mut params, &grads);
        }
        params.get(x).item()
    }

    #[test]
    fn both_optimizers_reach_the_minimum() {
        assert!((minimize(OptimizerKind::Sgd, 0.1, 200) - 1.0).abs() < 1e-6);
        assert!((minimize(OptimizerKind::Adam, 0.05, 2000) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        assert_eq!(minimize(OptimizerKind::Adam, 0.0, 10), 5.0);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut params = ParamSet::new();
        let x = params.add("x", Matrix::scalar(5.0));
        params.set_frozen(x, true);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 1.0);
        opt.step(&mut params, &[Some(Matrix::scalar(1.0))]);
        assert_eq!(params.get(x).item(), 5.0);
    }
}
