use crate::error::{Error, Result};
use crate::nn::tensor::ParameterSet;

/// Adam with bias correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam {
            lr,
            ..Adam::default()
        }
    }

    /// Apply one update from the accumulated gradients, then clear them.
    pub fn step(&self, params: &mut ParameterSet) -> Result<()> {
        if !params.has_grad() {
            return Err(Error::Invalid("optimizer step without gradients".into()));
        }
        let t = params.step_count() as i32 + 1;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let Adam {
            lr,
            beta1,
            beta2,
            eps,
        } = *self;
        params.for_each_update(|values, grad, m, v, rows| {
            let n = values.len();
            let mut update = |i: usize| {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                values[i] -= lr * mh / (vh.sqrt() + eps);
            };
            match rows {
                None => (0..n).for_each(&mut update),
                Some((rows, width)) => {
                    for r in rows {
                        (r * width..(r + 1) * width).for_each(&mut update);
                    }
                }
            }
        });
        Ok(())
    }
}

/// Plain gradient descent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step(&self, params: &mut ParameterSet) -> Result<()> {
        if !params.has_grad() {
            return Err(Error::Invalid("optimizer step without gradients".into()));
        }
        let lr = self.lr;
        params.for_each_update(|values, grad, _, _, _| {
            for (v, g) in values.iter_mut().zip(grad) {
                *v -= lr * g;
            }
        });
        Ok(())
    }
}
