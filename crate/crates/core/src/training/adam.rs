use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Runs exactly `iters` Adam steps on `params` in place.
///
/// `grad_fn` writes the gradient at its first argument into the second and
/// returns the loss. A non-finite loss or gradient stops the run before the
/// offending update is applied, so `params` always holds the last finite
/// iterate. Returns the loss seen at the last evaluated iterate.
pub fn adam_run<T, F>(params: &mut [T], mut grad_fn: F, iters: usize, lr: T) -> Result<Option<T>>
where
    T: Scalar,
    F: FnMut(&[T], &mut [T]) -> T,
{
    if !(lr > T::zero()) {
        return Err(Error::config("Adam learning rate must be positive"));
    }
    let n = params.len();
    let (b1, b2, eps) = (T::c(BETA1), T::c(BETA2), T::c(EPSILON));
    let one = T::one();
    let mut m = vec![T::zero(); n];
    let mut v = vec![T::zero(); n];
    let mut grad = vec![T::zero(); n];
    let mut b1_t = one;
    let mut b2_t = one;
    let mut last = None;
    for it in 0..iters {
        let loss = grad_fn(params, &mut grad);
        if !loss.is_finite() {
            return Err(Error::OptimizerAbort {
                iteration: it,
                reason: format!("non-finite loss {loss}"),
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::OptimizerAbort {
                iteration: it,
                reason: format!("non-finite gradient entry {i}"),
            });
        }
        last = Some(loss);
        b1_t *= b1;
        b2_t *= b2;
        let c1 = one - b1_t;
        let c2 = one - b2_t;
        for i in 0..n {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(last)
}
