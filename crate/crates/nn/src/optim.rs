use crate::error::{NnError, Result};
use crate::network::{Gradients, Weights};
use crate::scalar::Scalar;

/// SGD with classical momentum: `v = momentum * v + g; w -= lr * v`.
///
/// Running statistics are skipped. When pruning masks are installed, masked
/// positions get no velocity and are written back as exact zeros.
#[derive(Debug, Clone)]
pub struct Sgd<S = f32> {
    pub learning_rate: S,
    pub momentum: S,
    velocity: Vec<Vec<S>>,
    masks: Vec<Option<Vec<bool>>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(learning_rate: S, momentum: S) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: Vec::new(),
            masks: Vec::new(),
        }
    }

    /// `masks[i][j] == false` freezes parameter `i`, element `j` at zero.
    pub fn with_masks(mut self, masks: Vec<Option<Vec<bool>>>) -> Self {
        self.masks = masks;
        self
    }

    pub fn step(&mut self, weights: &mut Weights<S>, grads: &Gradients<S>) -> Result<()> {
        grads.check_against(weights)?;
        if !(self.momentum >= S::zero() && self.momentum < S::one()) {
            return Err(NnError::Params(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.learning_rate < S::zero() {
            return Err(NnError::Params("learning rate must be non-negative".into()));
        }
        if self.velocity.is_empty() {
            self.velocity = weights
                .params
                .iter()
                .map(|p| vec![S::zero(); p.value.len()])
                .collect();
        }
        if self.velocity.len() != weights.params.len() {
            return Err(NnError::Params(
                "optimizer state belongs to a different model".into(),
            ));
        }
        for (i, (param, grad)) in weights.params.iter_mut().zip(&grads.tensors).enumerate() {
            if !param.role.is_trainable() {
                continue;
            }
            let mask = self.masks.get(i).and_then(|m| m.as_deref());
            let vel = &mut self.velocity[i];
            let w = param.value.data_mut();
            for j in 0..w.len() {
                if let Some(m) = mask {
                    if !m[j] {
                        vel[j] = S::zero();
                        w[j] = S::zero();
                        continue;
                    }
                }
                vel[j] = self.momentum * vel[j] + grad.data()[j];
                w[j] -= self.learning_rate * vel[j];
            }
        }
        Ok(())
    }
}

/// One stateless plain-SGD update (`momentum` applied to a fresh velocity).
pub fn sgd_step<S: Scalar>(
    weights: &mut Weights<S>,
    grads: &Gradients<S>,
    learning_rate: S,
    momentum: S,
) -> Result<()> {
    Sgd::new(learning_rate, momentum).step(weights, grads)
}
