//! MAE and MSE losses, averaged over every tensor element.

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor4};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mae,
    Mse,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Mae => write!(f, "MAE"),
            LossKind::Mse => write!(f, "MSE"),
        }
    }
}

/// Mean loss over all elements of the batch.
pub fn loss<F: Scalar>(kind: LossKind, pred: &Tensor4<F>, target: &Tensor4<F>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::invalid(format!(
            "pred shape {:?} != target shape {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let mut acc = 0.0f64;
    for (p, t) in pred.iter().zip(target.iter()) {
        let d = (*p - *t).as_f64();
        acc += match kind {
            LossKind::Mae => d.abs(),
            LossKind::Mse => d * d,
        };
    }
    Ok(acc / pred.len() as f64)
}

/// Unnormalized per-sample loss sum (caller divides by the batch element
/// count).
pub(crate) fn sample_loss_sum<F: Scalar>(
    kind: LossKind,
    pred: &Array3<F>,
    target: &ArrayView3<F>,
) -> f64 {
    let mut acc = 0.0f64;
    for (p, t) in pred.iter().zip(target.iter()) {
        let d = (*p - *t).as_f64();
        acc += match kind {
            LossKind::Mae => d.abs(),
            LossKind::Mse => d * d,
        };
    }
    acc
}

/// Gradient of the batch-mean loss w.r.t. one sample's prediction.
/// `n_total` is the element count of the whole batch. The MAE subgradient at
/// exactly zero is taken as zero.
pub(crate) fn sample_loss_grad<F: Scalar>(
    kind: LossKind,
    pred: &Array3<F>,
    target: &ArrayView3<F>,
    n_total: usize,
) -> Array3<F> {
    let inv_n = F::from_f64(1.0 / n_total as f64);
    let mut grad = Array3::<F>::zeros(pred.raw_dim());
    ndarray::Zip::from(&mut grad)
        .and(pred)
        .and(target)
        .for_each(|g, &p, &t| {
            let d = p - t;
            *g = match kind {
                LossKind::Mae => {
                    if d > F::zero() {
                        inv_n
                    } else if d < F::zero() {
                        -inv_n
                    } else {
                        F::zero()
                    }
                }
                LossKind::Mse => F::from_f64(2.0) * d * inv_n,
            };
        });
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn known_values() {
        let pred = Array4::from_shape_vec((1, 1, 2, 1), vec![1.0f64, 2.0]).unwrap();
        let target = Array4::zeros((1, 1, 2, 1));
        assert_eq!(loss(LossKind::Mae, &pred, &target).unwrap(), 1.5);
        assert_eq!(loss(LossKind::Mse, &pred, &target).unwrap(), 2.5);
    }

    #[test]
    fn identical_tensors_have_zero_loss() {
        let pred = Array4::from_elem((2, 3, 4, 1), 0.7f32);
        assert_eq!(loss(LossKind::Mae, &pred, &pred).unwrap(), 0.0);
        assert_eq!(loss(LossKind::Mse, &pred, &pred).unwrap(), 0.0);
    }

    #[test]
    fn mae_subgradient_at_zero_is_zero() {
        let pred = Array3::from_elem((1, 1, 1), 0.5f64);
        let target = pred.clone();
        let g = sample_loss_grad(LossKind::Mae, &pred, &target.view(), 1);
        assert_eq!(g[[0, 0, 0]], 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Array4::<f32>::zeros((1, 2, 2, 1));
        let b = Array4::<f32>::zeros((1, 2, 3, 1));
        assert!(loss(LossKind::Mae, &a, &b).is_err());
    }
}
