//! Bias-corrected Adam update.

/// Optimizer hyperparameters. The betas and epsilon default to the standard
/// 0.9 / 0.999 / 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Updates one parameter slice in place. `step` is the 1-based step counter
/// shared by all parameters of a model.
pub fn adam_update(
    value: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    grad: &[f64],
    step: u64,
    hyper: &AdamHyper,
) {
    debug_assert_eq!(value.len(), grad.len());
    debug_assert_eq!(value.len(), m.len());
    debug_assert_eq!(value.len(), v.len());
    let bc1 = 1.0 - hyper.beta1.powi(step as i32);
    let bc2 = 1.0 - hyper.beta2.powi(step as i32);
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
        v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        value[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
}
