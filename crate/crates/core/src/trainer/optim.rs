use std::f64::consts::PI;

use crate::autodiff::{Parameter, Scalar};
use crate::error::{Error, Result};

/// Half-cosine decay from `lr0` at step 0 to zero at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::contract(format!(
            "cosine schedule step {step} outside [0, {total_steps}]"
        )));
    }
    Ok(lr0 * 0.5 * (1.0 + (PI * step as f64 / total_steps as f64).cos()))
}

/// Momentum SGD with weight decay folded into the gradient:
/// `v = m v + g + wd p`, `p -= lr v`. Frozen parameters are skipped.
#[derive(Debug, Clone)]
pub struct SgdMomentum<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> SgdMomentum<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) || weight_decay < 0.0 || !weight_decay.is_finite() {
            return Err(Error::Config(format!(
                "momentum {momentum} must be in [0, 1) and weight decay {weight_decay} non-negative"
            )));
        }
        Ok(Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    /// Updates every trainable parameter from its gradient buffer. Velocity
    /// slots follow parameter positions, so pass the same slice each step.
    pub fn step(&mut self, params: &mut [Parameter<T>], lr: f64) -> Result<()> {
        if let Some(p) = params
            .iter()
            .find(|p| p.trainable && p.tensor.grad().is_none())
        {
            return Err(Error::contract(format!(
                "trainable parameter `{}` has no gradient",
                p.name
            )));
        }
        self.velocity.resize_with(params.len(), || None);
        let (m, wd, lr) = (
            T::from_f64(self.momentum),
            T::from_f64(self.weight_decay),
            T::from_f64(lr),
        );
        for (p, slot) in params.iter_mut().zip(&mut self.velocity) {
            if !p.trainable {
                continue;
            }
            let grad = p.tensor.grad().expect("checked above").to_vec();
            let v = slot.get_or_insert_with(|| vec![T::zero(); grad.len()]);
            for ((vi, &g), w) in v.iter_mut().zip(&grad).zip(p.tensor.data_mut()) {
                *vi = m * *vi + g + wd * *w;
                *w -= lr * *vi;
            }
        }
        Ok(())
    }
}
