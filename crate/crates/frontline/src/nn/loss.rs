//! Training losses with analytic gradients.

use crate::error::{Error, Result};
use crate::nn::tensor::TensorGrid;

/// Clamp for binary cross-entropy probabilities.
const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Bce,
}

/// Scalar loss and its gradient with respect to the prediction.
///
/// MSE is the mean squared difference; BCE is the mean of
/// `-(t ln p + (1-t) ln(1-p))` with `p` clamped to `[1e-7, 1 - 1e-7]`
/// (clamped entries contribute zero gradient).
pub fn loss(kind: LossKind, pred: &TensorGrid, target: &TensorGrid) -> Result<(f64, TensorGrid)> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "prediction shape {:?} does not match target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut grad = TensorGrid::zeros(pred.shape().0, pred.shape().1, pred.shape().2, pred.shape().3);
    let mut total = 0.0;
    match kind {
        LossKind::Mse => {
            for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
                let d = p - t;
                total += d * d;
                *g = 2.0 * d / n;
            }
        }
        LossKind::Bce => {
            for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
                if !(0.0..=1.0).contains(&t) {
                    return Err(Error::Domain(format!("bce target {t} outside [0,1]")));
                }
                let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                total += -(t * pc.ln() + (1.0 - t) * (1.0 - pc).ln());
                *g = if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                    (-t / pc + (1.0 - t) / (1.0 - pc)) / n
                } else {
                    0.0
                };
            }
        }
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_zero_when_equal() {
        let p = TensorGrid::from_vec(1, 1, 2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let (l, g) = loss(LossKind::Mse, &p, &p).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bce_half_is_ln2() {
        let p = TensorGrid::from_vec(1, 1, 1, 2, vec![0.5, 0.5]).unwrap();
        let t = TensorGrid::from_vec(1, 1, 1, 2, vec![0.0, 1.0]).unwrap();
        let (l, _) = loss(LossKind::Bce, &p, &t).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = TensorGrid::zeros(1, 1, 2, 2);
        let t = TensorGrid::zeros(1, 1, 2, 3);
        assert!(matches!(loss(LossKind::Mse, &p, &t), Err(Error::Dimension(_))));
    }
}
