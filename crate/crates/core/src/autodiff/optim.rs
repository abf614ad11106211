//! Gradient-descent optimizers over a parameter subset.

use super::tensor::{ParamId, ParamStore};

/// Adaptive-moment estimation. beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    ids: Vec<ParamId>,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>) -> Self {
        let m = ids.iter().map(|&id| vec![0.0; store.get(id).numel()]).collect();
        let v = ids.iter().map(|&id| vec![0.0; store.get(id).numel()]).collect();
        Adam {
            ids,
            m,
            v,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (slot, &id) in self.ids.iter().enumerate() {
            let p = store.get_mut(id);
            if !p.requires_grad {
                continue;
            }
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for i in 0..p.values.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.values[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// RMS propagation. decay = 0.99, eps = 1e-8.
#[derive(Debug, Clone)]
pub struct RmsProp {
    ids: Vec<ParamId>,
    sq: Vec<Vec<f64>>,
    pub decay: f64,
    pub eps: f64,
}

impl RmsProp {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>) -> Self {
        let sq = ids.iter().map(|&id| vec![0.0; store.get(id).numel()]).collect();
        RmsProp {
            ids,
            sq,
            decay: 0.99,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        for (slot, &id) in self.ids.iter().enumerate() {
            let p = store.get_mut(id);
            if !p.requires_grad {
                continue;
            }
            let sq = &mut self.sq[slot];
            for i in 0..p.values.len() {
                let g = p.grad[i];
                sq[i] = self.decay * sq[i] + (1.0 - self.decay) * g * g;
                p.values[i] -= lr * g / (sq[i].sqrt() + self.eps);
            }
        }
    }
}
