use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::store::ParameterStore;

/// Adam hyperparameters plus the step counter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
        }
    }

    pub fn step<T: Real>(&mut self, store: &mut ParameterStore<T>) -> Result<()> {
        self.step += 1;
        adam_update(store, self.lr, self.beta1, self.beta2, self.eps, self.step)
    }
}

/// One bias-corrected Adam step over every trainable entry. Gradients are
/// zeroed afterwards. A trainable entry without a gradient is an error.
pub fn adam_update<T: Real>(store: &mut ParameterStore<T>, lr: f64, beta1: f64, beta2: f64, eps: f64, step: u64) -> Result<()> {
    if step == 0 {
        return Err(TensorError::State("adam step counter starts at 1".into()));
    }
    if let Some((name, _)) = store.iter().find(|(_, p)| p.trainable && p.grad.is_none()) {
        return Err(TensorError::State(format!("missing gradient for `{name}`")));
    }
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    let (b1, b2) = (T::of(beta1), T::of(beta2));
    let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
    let (bc1, bc2, lr, eps) = (T::of(bc1), T::of(bc2), T::of(lr), T::of(eps));
    for (_, p) in store.iter_mut() {
        if !p.trainable {
            continue;
        }
        let grad = p.grad.as_mut().expect("checked above");
        let values = p.value.data_mut();
        for i in 0..values.len() {
            let g = grad.data()[i];
            let m = b1 * p.first_moment[i] + one_b1 * g;
            let v = b2 * p.second_moment[i] + one_b2 * g * g;
            p.first_moment[i] = m;
            p.second_moment[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        for x in grad.data_mut() {
            *x = T::zero();
        }
    }
    Ok(())
}

/// Rescales gradients so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Real>(store: &mut ParameterStore<T>, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm && norm > 0.0 {
        store.scale_grads(max_norm / norm);
    }
    norm
}
