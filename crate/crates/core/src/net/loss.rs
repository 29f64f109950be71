use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Mean squared error over all elements and its gradient with respect to
/// `pred`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape != target.shape {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", pred.shape),
            got: format!("{:?}", target.shape),
        });
    }
    let n = pred.len().max(1) as f64;
    let scale = T::from_f64(2.0 / n);
    let mut sum = 0.0;
    let grad = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(&p, &t)| {
            let d = p - t;
            sum += d.as_f64() * d.as_f64();
            scale * d
        })
        .collect();
    Ok((sum / n, Tensor::new(pred.shape.clone(), grad)?))
}
