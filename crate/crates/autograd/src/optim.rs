use crate::error::{Error, Result};
use crate::float::Float;
use crate::graph::Gradients;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 penalty added to the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros: Vec<_> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Adam {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Rebuilds an optimizer from saved moment buffers.
    pub fn from_state(config: AdamConfig, step: u64, first: Vec<Tensor<T>>, second: Vec<Tensor<T>>) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::invalid("adam", "moment buffers differ in length"));
        }
        Ok(Adam {
            config,
            step,
            first,
            second,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.first, &self.second)
    }

    /// Applies one update with learning rate `lr`. Parameters without a
    /// gradient are left untouched, but their moments still decay.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        if self.first.len() != params.len() {
            return Err(Error::invalid(
                "adam",
                format!("{} moment buffers for {} parameters", self.first.len(), params.len()),
            ));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let step_size = T::of(lr / bc1);
        let bc2_sqrt = T::of(bc2.sqrt());
        let eps = T::of(c.eps);
        let wd = T::of(c.weight_decay);
        for id in params.ids().collect::<Vec<_>>() {
            let g = grads.param(id);
            let p = params.get_mut(id);
            let (m, v) = (&mut self.first[id.0], &mut self.second[id.0]);
            for i in 0..p.len() {
                let gi = g.map_or(T::zero(), |g| g.data()[i]) + wd * p.data()[i];
                let mi = b1 * m.data()[i] + (T::one() - b1) * gi;
                let vi = b2 * v.data()[i] + (T::one() - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                if g.is_some() || wd != T::zero() {
                    p.data_mut()[i] -= step_size * mi / (vi.sqrt() / bc2_sqrt + eps);
                }
            }
        }
        Ok(())
    }
}
