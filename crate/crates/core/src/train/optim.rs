use crate::autodiff::ParamStore;
use crate::real::Real;

/// Adam with decoupled weight decay and constant learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// One update of every parameter from its accumulated gradient.
/// Decay applies to all parameters, scaled by the learning rate.
pub fn adamw_step<T: Real>(store: &mut ParamStore<T>, opt: &AdamW) {
    store.step += 1;
    let t = store.step as i32;
    let (b1, b2) = (T::of(opt.beta1), T::of(opt.beta2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (lr, eps, wd) = (T::of(opt.lr), T::of(opt.eps), T::of(opt.weight_decay));
    for i in 0..store.values.len() {
        let g = store.grads[i].data();
        let m = store.m[i].data_mut();
        let v = store.v[i].data_mut();
        let p = store.values[i].data_mut();
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (T::one() - b1) * g[k];
            v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            p[k] -= lr * (mh / (vh.sqrt() + eps) + wd * p[k]);
        }
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping. `max_norm <= 0` disables clipping.
pub fn clip_grad_norm<T: Real>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = store.grad_norm().as_f64();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in &mut store.grads {
            g.scale_in_place(s);
        }
    }
    norm
}
