//! Central finite-difference gradient verification.
//!
//! Only forward evaluations are used here, so the checker stays independent
//! of every hand-written backward pass it is pointed at.

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs() + 1e-12)
}

pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Numerical gradient of the scalar `loss` at `inputs`, one matrix per input.
pub fn numerical_gradients(
    inputs: &[Matrix],
    eps: f64,
    mut loss: impl FnMut(&[Matrix]) -> f64,
) -> Vec<Matrix> {
    let mut work = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Matrix::zeros(inputs[i].rows(), inputs[i].cols());
        for j in 0..inputs[i].data().len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let up = loss(&work);
            work[i].data_mut()[j] = orig - eps;
            let down = loss(&work);
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (up - down) / (2.0 * eps);
        }
        grads.push(g);
    }
    grads
}

/// Largest entrywise relative error between `analytic` and central
/// differences of `loss` over every entry of every input.
pub fn grad_check(
    inputs: &[Matrix],
    analytic: &[Matrix],
    eps: f64,
    loss: impl FnMut(&[Matrix]) -> f64,
) -> Result<f64> {
    if inputs.len() != analytic.len() {
        return Err(Error::shape(
            "grad_check",
            format!("{} inputs, {} gradients", inputs.len(), analytic.len()),
        ));
    }
    for (x, g) in inputs.iter().zip(analytic) {
        x.same_shape(g, "grad_check")?;
    }
    let numeric = numerical_gradients(inputs, eps, loss);
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| max_relative_error(a, n))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_enough() {
        let x = Matrix::row_vector(&[1.0, -2.0, 3.0]);
        let analytic = x.scale(2.0);
        let err = grad_check(&[x], &[analytic], DEFAULT_EPS, |v| {
            v[0].data().iter().map(|a| a * a).sum()
        })
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let x = Matrix::row_vector(&[1.0, 2.0]);
        let err = grad_check(&[x.clone()], &[x.clone()], DEFAULT_EPS, |v| {
            v[0].data().iter().map(|a| a * a).sum()
        })
        .unwrap();
        assert!(err > 0.3);
        assert!(grad_check(&[x], &[], DEFAULT_EPS, |_| 0.0).is_err());
    }
}
