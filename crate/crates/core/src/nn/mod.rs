//! Dense building blocks for the surrogate: matrices, Tanh MLPs, LayerNorm,
//! mean-squared error, Adam and finite-difference gradient checking.
//!
//! Gradients are explicit per-layer backward functions rather than a general
//! tape; each forward returns the cache its backward consumes.

mod adam;
mod dense;
mod matrix;
mod norm;
mod params;

pub use adam::{AdamConfig, AdamState};
pub use dense::{glorot_uniform, Dense, Mlp, MlpCache};
pub use matrix::Matrix;
pub use norm::{LayerNorm, LayerNormCache, LAYER_NORM_EPS};
pub use params::{grad_check, grad_check_report, GradCheck, ParamBlocks};

use crate::error::{Error, Result};

/// Mean over all entries of the squared difference.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<f64> {
    check_same_shape(pred, target)?;
    let n = pred.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / n as f64)
}

/// Loss and its gradient with respect to `pred`.
pub fn mse_loss_grad(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    let loss = mse_loss(pred, target)?;
    let n = pred.data().len().max(1) as f64;
    let grad: Vec<f64> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect();
    Ok((loss, Matrix::from_vec(pred.rows(), pred.cols(), grad)?))
}

fn check_same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::arg(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_cases() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_loss(&a, &Matrix::zeros(2, 2)).unwrap(), 7.5);
        let ones = Matrix::from_vec(2, 2, vec![1.0; 4]).unwrap();
        assert_eq!(mse_loss(&ones, &Matrix::zeros(2, 2)).unwrap(), 1.0);
        assert!(mse_loss(&a, &Matrix::zeros(2, 3)).is_err());
    }
}
