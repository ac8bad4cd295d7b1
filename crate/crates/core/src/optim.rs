//! Parameter update rules for the basis.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::basis::ComplexBasis;
use crate::error::{Error, Result};
use crate::grad::GradientSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: first and second moments per basis half.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    step: u64,
    m_re: Array2<f64>,
    m_im: Array2<f64>,
    v_re: Array2<f64>,
    v_im: Array2<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, basis: &ComplexBasis) -> Self {
        let shape = (basis.n_basis(), basis.n_input());
        Self {
            kind,
            step: 0,
            m_re: Array2::zeros(shape),
            m_im: Array2::zeros(shape),
            v_re: Array2::zeros(shape),
            v_im: Array2::zeros(shape),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update in place.
    pub fn step(&mut self, basis: &mut ComplexBasis, grads: &GradientSet, learning_rate: f64) -> Result<()> {
        let shape = (basis.n_basis(), basis.n_input());
        if grads.d_w_re.dim() != shape || grads.d_w_im.dim() != shape || self.m_re.dim() != shape {
            return Err(Error::Shape(format!(
                "gradients {:?} / state {:?} do not match basis {shape:?}",
                grads.d_w_re.dim(),
                self.m_re.dim()
            )));
        }
        self.step += 1;
        let (w_re, w_im) = basis.parts_mut();
        match self.kind {
            OptimizerKind::Sgd => {
                w_re.scaled_add(-learning_rate, &grads.d_w_re);
                w_im.scaled_add(-learning_rate, &grads.d_w_im);
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let update = |w: &mut Array2<f64>, m: &mut Array2<f64>, v: &mut Array2<f64>, g: &Array2<f64>| {
                    Zip::from(w).and(m).and(v).and(g).for_each(|w, m, v, &g| {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w -= learning_rate * m_hat / (v_hat.sqrt() + eps);
                    });
                };
                update(w_re, &mut self.m_re, &mut self.v_re, &grads.d_w_re);
                update(w_im, &mut self.m_im, &mut self.v_im, &grads.d_w_im);
            }
        }
        Ok(())
    }
}
