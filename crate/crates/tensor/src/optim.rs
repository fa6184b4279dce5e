//! Adam with bias correction. Moment buffers are keyed by parameter slot
//! order, which must stay stable across calls; slot shapes are fixed by the
//! first step.

use crate::{Real, TensorError};

/// One parameter slot handed to [`Adam::step`]: the name is used in error
/// reports, `values` are updated in place from `grad`.
pub struct ParamUpdate<'a, R> {
    pub name: &'a str,
    pub values: &'a mut [R],
    pub grad: &'a [R],
}

struct Moments<R> {
    m: Vec<R>,
    v: Vec<R>,
}

/// Adam optimizer state. Defaults: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
pub struct Adam<R: Real> {
    lr: R,
    beta1: f64,
    beta2: f64,
    eps: R,
    step: u64,
    moments: Vec<Moments<R>>,
}

impl<R: Real> Adam<R> {
    pub fn new(lr: f64) -> Self {
        Self::with_hyperparams(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr: R::from_f64(lr),
            beta1,
            beta2,
            eps: R::from_f64(eps),
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update across all parameter slots. Rejects non-finite
    /// gradients (naming the offending parameter) before touching any state,
    /// so a poisoned batch leaves parameters unchanged.
    pub fn step(&mut self, params: &mut [ParamUpdate<'_, R>]) -> Result<(), TensorError> {
        for p in params.iter() {
            if p.values.len() != p.grad.len() {
                return Err(TensorError::Shape {
                    op: "adam_step",
                    details: format!(
                        "`{}`: {} values vs {} gradient entries",
                        p.name,
                        p.values.len(),
                        p.grad.len()
                    ),
                });
            }
            if let Some(ix) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(TensorError::NonFinite {
                    context: "adam_step",
                    name: p.name.to_string(),
                    index: ix,
                });
            }
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| Moments {
                    m: vec![R::ZERO; p.values.len()],
                    v: vec![R::ZERO; p.values.len()],
                })
                .collect();
        } else if self.moments.len() != params.len() {
            return Err(TensorError::Shape {
                op: "adam_step",
                details: format!(
                    "slot count changed: {} vs {}",
                    params.len(),
                    self.moments.len()
                ),
            });
        }

        self.step += 1;
        // Bias corrections in f64 regardless of width; beta^t underflows f32
        // long before a run ends.
        let c1 = R::from_f64(1.0 - self.beta1.powi(self.step as i32));
        let c2 = R::from_f64(1.0 - self.beta2.powi(self.step as i32));
        let b1 = R::from_f64(self.beta1);
        let b2 = R::from_f64(self.beta2);
        let one_m_b1 = R::ONE - b1;
        let one_m_b2 = R::ONE - b2;

        for (slot, p) in self.moments.iter_mut().zip(params.iter_mut()) {
            if slot.m.len() != p.values.len() {
                return Err(TensorError::Shape {
                    op: "adam_step",
                    details: format!("`{}`: slot length changed", p.name),
                });
            }
            for i in 0..p.values.len() {
                let g = p.grad[i];
                slot.m[i] = b1 * slot.m[i] + one_m_b1 * g;
                slot.v[i] = b2 * slot.v[i] + one_m_b2 * g * g;
                let m_hat = slot.m[i] / c1;
                let v_hat = slot.v[i] / c2;
                p.values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
