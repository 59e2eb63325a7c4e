use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::models::ModelParams;
use crate::{Error, Real, Result};

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments per parameter tensor, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T = f32> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay:
///
/// ```text
/// m <- b1 m + (1 - b1) g          m_hat = m / (1 - b1^t)
/// v <- b2 v + (1 - b2) g^2        v_hat = v / (1 - b2^t)
/// p <- p - lr m_hat / (sqrt(v_hat) + eps) - lr wd p
/// ```
///
/// Gradients are checked before anything is modified; a non-finite entry
/// aborts with the offending parameter path.
pub fn adamw_step<T: Real>(
    opt: &AdamW,
    params: &mut ModelParams<T>,
    grads: &[Vec<T>],
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Input(format!(
            "optimizer got {} gradients and {} moment slots for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for ((name, t), g) in params.iter().zip(grads) {
        if g.len() != t.numel() {
            return Err(Error::Shape {
                op: "adamw",
                lhs: t.shape().to_vec(),
                rhs: vec![g.len()],
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { path: name.into() });
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = T::of(1.0 - libm::pow(opt.beta1, t));
    let bc2 = T::of(1.0 - libm::pow(opt.beta2, t));
    let (b1, b2) = (T::of(opt.beta1), T::of(opt.beta2));
    let (lr, eps, wd) = (T::of(lr), T::of(opt.eps), T::of(opt.weight_decay));
    for (((_, p), g), (m, v)) in params
        .tensors_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
        }
    }
    Ok(())
}
