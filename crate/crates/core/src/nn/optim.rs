use super::layers::Param;
use super::tensor::Tensor;
use super::{NnError, Result};

/// Mean over batch items of the squared L2 residual, with its gradient.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape != target.shape {
        return Err(NnError::ShapeMismatch {
            expected: format!("{:?}", target.shape),
            found: format!("{:?}", pred.shape),
        });
    }
    let n = pred.batch().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.values.iter().zip(&target.values) {
        let r = p - t;
        loss += r * r;
        grad.push(2.0 * r / n);
    }
    Ok((loss / n, Tensor::new(pred.shape.clone(), grad)?))
}

/// Step decay: `lr0 / 10^floor(epoch / period)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr0: f64,
    pub period: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            period: 100,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        let decays = epoch / self.period.max(1);
        self.lr0 / 10f64.powi(decays as i32)
    }
}

/// Heavy-ball SGD: `v = momentum * v - lr * g; p += v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub momentum: f64,
    pub lr: f64,
    pub velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(momentum: f64, lr: f64) -> Self {
        Self {
            momentum,
            lr,
            velocity: Vec::new(),
        }
    }

    /// Updates every non-frozen parameter that carries a gradient. The
    /// parameter list must be presented in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(NnError::ShapeMismatch {
                expected: format!("{} parameter tensors", self.velocity.len()),
                found: format!("{}", params.len()),
            });
        }
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            if p.frozen {
                continue;
            }
            let Some(g) = p.value.grad.as_ref() else {
                continue;
            };
            if v.len() != g.len() {
                return Err(NnError::ShapeMismatch {
                    expected: format!("{} velocity entries", v.len()),
                    found: format!("{}", g.len()),
                });
            }
            for ((vi, gi), pi) in v.iter_mut().zip(g).zip(p.value.values.iter_mut()) {
                *vi = self.momentum * *vi - self.lr * gi;
                *pi += *vi;
            }
        }
        Ok(())
    }
}
