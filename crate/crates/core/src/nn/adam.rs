use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network};
use super::{NnError, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for every parameter of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl AdamState {
    pub fn new<T: Scalar>(net: &Network<T>, config: AdamConfig) -> Self {
        let n = net.param_count();
        Self { config, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// Applies one update. Non-finite gradients are rejected before any
    /// parameter is touched. Frozen layers keep their values and moments.
    pub fn step<T: Scalar>(&mut self, net: &mut Network<T>, grads: &Gradients<T>) -> Result<(), NnError> {
        if grads.layers.len() != net.layers().len() || self.m.len() != net.param_count() {
            return Err(NnError::GradientLayout);
        }
        for (layer, g) in net.layers().iter().zip(&grads.layers) {
            match g {
                Some(g) if g.weight.len() == layer.weight.len() && g.bias.len() == layer.bias.len() => {}
                None if !layer.kind.has_params() => {}
                _ => return Err(NnError::GradientLayout),
            }
        }
        if !grads.all_finite() {
            return Err(NnError::NonFinite("gradient"));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::powf(c.beta1, t as f32);
        let bc2 = 1.0 - libm::powf(c.beta2, t as f32);
        let mut offset = 0;
        for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
            let n = layer.weight.len() + layer.bias.len();
            let Some(g) = g else { continue };
            if !layer.frozen {
                let params = layer.weight.iter_mut().chain(layer.bias.iter_mut());
                let gs = g.weight.iter().chain(g.bias.iter());
                let m = &mut self.m[offset..offset + n];
                let v = &mut self.v[offset..offset + n];
                for (((p, &gv), mi), vi) in params.zip(gs).zip(m.iter_mut()).zip(v.iter_mut()) {
                    let gv = gv.as_f64() as f32;
                    *mi = c.beta1 * *mi + (1.0 - c.beta1) * gv;
                    *vi = c.beta2 * *vi + (1.0 - c.beta2) * gv * gv;
                    let mhat = *mi / bc1;
                    let vhat = *vi / bc2;
                    *p -= T::of((c.lr * mhat / (libm::sqrtf(vhat) + c.eps)) as f64);
                }
            }
            offset += n;
        }
        Ok(())
    }
}

/// Rescales every gradient set in `grads` by a common factor so their joint
/// L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [&mut Gradients<T>], max_norm: f64) -> f64 {
    let norm = libm::sqrt(grads.iter().map(|g| g.norm_sq()).sum());
    if norm > max_norm && norm > 0.0 {
        for g in grads.iter_mut() {
            g.scale(T::of(max_norm / norm));
        }
    }
    norm
}
