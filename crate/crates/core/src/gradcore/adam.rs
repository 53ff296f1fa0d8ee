use super::ops::Param;
use super::tensor::Tensor2;
use crate::error::{Error, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Adam with bias correction. Moment buffers are bound to parameters by
/// position in the slice handed to [`Adam::step`], so callers must pass the
/// same parameters in the same order every step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: Vec<(Tensor2, Tensor2)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| {
                    let (r, c) = p.shape();
                    (Tensor2::zeros(r, c), Tensor2::zeros(r, c))
                })
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::arg(format!(
                "optimizer tracks {} parameters, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        for (p, (m, _)) in params.iter().zip(&self.moments) {
            if p.shape() != m.shape() {
                return Err(Error::Dimension {
                    op: "adam_step",
                    left: m.shape(),
                    right: p.shape(),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            let Param { value, grad } = &mut **p;
            for (((w, g), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data_mut().iter_mut())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * *g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * *g * *g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
                *g = 0.0;
            }
        }
        Ok(())
    }
}
