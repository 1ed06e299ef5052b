use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::layers::Module;
use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam optimiser. Moment buffers follow the module's visit order.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub cfg: AdamConfig,
    pub lr: f64,
    step: u64,
    m: Vec<ArrayD<F>>,
    v: Vec<ArrayD<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            lr: cfg.lr,
            cfg,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Multiply the learning rate by `gamma` (called once per epoch).
    pub fn decay(&mut self, gamma: f64) {
        self.lr *= gamma;
    }

    pub fn step(&mut self, module: &mut dyn Module<F>) {
        self.step += 1;
        let t = self.step as i32;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let step_size = F::c(self.lr / bc1);
        let (b1, b2) = (F::c(c.beta1), F::c(c.beta2));
        let (ob1, ob2) = (F::c(1.0 - c.beta1), F::c(1.0 - c.beta2));
        let wd = F::c(c.weight_decay);
        let eps = F::c(c.eps);
        let sqrt_bc2 = F::c(bc2.sqrt());
        let init = self.m.is_empty();
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        module.visit_mut("", &mut |_, p| {
            if init {
                ms.push(ArrayD::zeros(p.value.raw_dim()));
                vs.push(ArrayD::zeros(p.value.raw_dim()));
            }
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g0, m, v| {
                    let g = g0 + wd * *w;
                    *m = b1 * *m + ob1 * g;
                    *v = b2 * *v + ob2 * g * g;
                    *w -= step_size * *m / ((*v).sqrt() / sqrt_bc2 + eps);
                });
            idx += 1;
        });
    }
}
