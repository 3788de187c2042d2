//! SGD with momentum and cosine learning-rate annealing.

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// One SGD step over every trainable parameter:
///
/// ```text
/// buf   <- momentum * buf + (grad + weight_decay * value)
/// value <- value - lr * buf
/// ```
///
/// Weight decay is folded into the gradient before the momentum update
/// (L2-style coupling). Gradients are left untouched; the caller zeroes them.
/// Returns the number of scalars updated, used by the self-test to
/// cross-check the profiler's parameter count against the store.
pub fn sgd_momentum_step<E: Scalar>(
    store: &mut ParamStore<E>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<usize> {
    let (lr, mom, wd) = (E::from_f64(lr), E::from_f64(momentum), E::from_f64(weight_decay));
    let mut updated = 0;
    for (_, p) in store.iter_mut() {
        for &g in p.grad.data() {
            if !g.is_finite() {
                return Err(Error::numerical(format!(
                    "non-finite gradient in parameter '{}'",
                    p.name
                )));
            }
        }
        let value = p.value.data_mut();
        let grad = p.grad.data();
        let buf = p.momentum.data_mut();
        for i in 0..value.len() {
            buf[i] = mom * buf[i] + (grad[i] + wd * value[i]);
            value[i] = value[i] - lr * buf[i];
        }
        updated += value.len();
    }
    Ok(updated)
}

/// Half-cosine decay from `base` at epoch 0 to 0 at `total` epochs:
/// lr(e) = 0.5 * base * (1 + cos(pi * e / total)).
pub fn cosine_lr(epoch: usize, total_epochs: usize, base: f64) -> Result<f64> {
    if total_epochs == 0 {
        return Err(Error::config("cosine_lr: total_epochs must be positive"));
    }
    let frac = epoch as f64 / total_epochs as f64;
    Ok(0.5 * base * (1.0 + (std::f64::consts::PI * frac).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn momentum_recurrence_by_hand() {
        // scalar param 1.0, grad fixed at 1.0, lr=0.1, momentum=0.9, wd=0:
        // v0=1 -> buf=1, v=0.9 -> buf=1.9, v=0.71
        let mut store = ParamStore::<f64>::new();
        let p = store.add("w", Tensor::scalar(1.0));
        store.entry_mut(p).grad.data_mut()[0] = 1.0;
        sgd_momentum_step(&mut store, 0.1, 0.9, 0.0).unwrap();
        assert!((store.value(p).data()[0] - 0.9).abs() < 1e-12);
        store.entry_mut(p).grad.data_mut()[0] = 1.0;
        sgd_momentum_step(&mut store, 0.1, 0.9, 0.0).unwrap();
        assert!((store.value(p).data()[0] - 0.71).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("w", Tensor::scalar(2.0));
        // zero grad, wd only
        sgd_momentum_step(&mut store, 0.1, 0.0, 0.5).unwrap();
        assert!((store.value(p).data()[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn counts_updated_scalars() {
        let mut store = ParamStore::<f64>::new();
        store.add("a", Tensor::zeros(&[3, 4]));
        store.add("b", Tensor::zeros(&[5]));
        let n = sgd_momentum_step(&mut store, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(n, 17);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("w", Tensor::scalar(1.0));
        store.entry_mut(p).grad.data_mut()[0] = f64::NAN;
        assert!(matches!(
            sgd_momentum_step(&mut store, 0.1, 0.9, 0.0),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert!((cosine_lr(0, 100, 0.1).unwrap() - 0.1).abs() < 1e-12);
        assert!((cosine_lr(50, 100, 0.1).unwrap() - 0.05).abs() < 1e-12);
        assert!(cosine_lr(100, 100, 0.1).unwrap() < 1e-12);
        assert!(cosine_lr(0, 0, 0.1).is_err());
    }
}
