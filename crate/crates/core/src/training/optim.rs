//! Adam with global-norm gradient clipping.

use crate::autograd::Gradients;
use crate::params::ParamStore;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for one [`ParamStore`], laid out flat in
/// registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(store: &ParamStore) -> Self {
        let n = store.num_scalars();
        Self { m: vec![0.0; n], v: vec![0.0; n] }
    }
}

/// Euclidean norm of every gradient belonging to `stores`.
pub fn global_grad_norm(grads: &Gradients, stores: &[&ParamStore]) -> f64 {
    let mut sq = 0.0;
    for s in stores {
        for id in s.ids() {
            if let Some(gr) = grads.param(s.key(id)) {
                sq += gr.sq_norm();
            }
        }
    }
    sq.sqrt()
}

/// Factor that brings the global norm down to `max_norm` (1 when already below).
pub fn clip_scale(norm: f64, max_norm: f64) -> f64 {
    if max_norm > 0.0 && norm > max_norm {
        max_norm / norm
    } else {
        1.0
    }
}

/// One bias-corrected Adam step at 1-based iteration `t`. Parameters without
/// a gradient are treated as having a zero gradient.
pub fn adam_step(
    store: &mut ParamStore,
    moments: &mut AdamMoments,
    grads: &Gradients,
    lr: f64,
    t: u64,
    grad_scale: f64,
) {
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    let ids: Vec<_> = store.ids().collect();
    let mut off = 0;
    for id in ids {
        let key = store.key(id);
        let grad = grads.param(key).map(|g| g.data().to_vec());
        let values = store.get_mut(id).data_mut();
        let n = values.len();
        for k in 0..n {
            let gk = grad.as_ref().map_or(0.0, |g| g[k] * grad_scale);
            let m = &mut moments.m[off + k];
            let v = &mut moments.v[off + k];
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * gk;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * gk * gk;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            values[k] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
        off += n;
    }
}
