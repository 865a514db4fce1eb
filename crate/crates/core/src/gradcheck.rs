//! Central finite differences, the reference for every analytic gradient
//! in the crate.

use nalgebra::DMatrix;

/// Step used by the gradient checks.
pub const FD_STEP: f64 = 1e-5;

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central-difference gradient of `f` at every entry of `x`.
pub fn numeric_gradient(
    x: &DMatrix<f64>,
    h: f64,
    f: impl Fn(&DMatrix<f64>) -> f64,
) -> DMatrix<f64> {
    let mut probe = x.clone();
    let mut grad = DMatrix::zeros(x.nrows(), x.ncols());
    for k in 0..x.len() {
        let orig = probe[k];
        probe[k] = orig + h;
        let plus = f(&probe);
        probe[k] = orig - h;
        let minus = f(&probe);
        probe[k] = orig;
        grad[k] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// `|a - n| / max(|a| + |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic() {
        let g = central_difference(|x| x * x * x, 2.0, 1e-5);
        assert!((g - 12.0).abs() < 1e-8);
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 3.0]);
        let n = numeric_gradient(&m, 1e-5, |m| m[0] * m[1]);
        assert!(max_relative_error(&[3.0, 1.0], n.as_slice()) < 1e-9);
    }
}
