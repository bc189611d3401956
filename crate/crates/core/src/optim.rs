use crate::error::{bail, Result};
use crate::nn::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            bail!(Config, "Adam needs 0 ≤ β < 1 and ε > 0, got {self:?}");
        }
        Ok(())
    }
}

/// Adaptive moment estimation with bias correction. Moments are stored as
/// parameter maps with the same layout as the weights they track.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: ParamStore,
    pub v: ParamStore,
    pub t: u64,
}

impl Adam {
    pub fn new(layout: &ParamStore, config: AdamConfig) -> Self {
        Self {
            config,
            m: layout.zeros_like(),
            v: layout.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore, lr: f64) -> Result<()> {
        params.check_layout(grads)?;
        params.check_layout(&self.m)?;
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.t += 1;
        let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
        let iter = params.iter_mut().zip(grads.iter()).zip(self.m.iter_mut()).zip(self.v.iter_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in iter {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (libm::sqrt(vh) + eps);
            }
        }
        Ok(())
    }
}
