use serde::{Deserialize, Serialize};

use super::tensor::Parameters;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Plain SGD or Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer { kind, lr, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update. Tensors named in `frozen` are left untouched.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P, frozen: &[&str]) -> Result<()> {
        for (name, g) in grads.tensors() {
            if !frozen.contains(&name) && g.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { layer: name.to_string() });
            }
        }
        if self.m.is_empty() {
            self.m = grads.tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let lr = self.lr;
        for (k, ((name, p), (_, g))) in
            params.tensors_mut().into_iter().zip(grads.tensors()).enumerate()
        {
            if frozen.contains(&name) {
                continue;
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    for (x, gv) in p.data.iter_mut().zip(&g.data) {
                        *x -= lr * gv;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for i in 0..p.data.len() {
                        let gv = g.data[i];
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gv;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gv * gv;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p.data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}
