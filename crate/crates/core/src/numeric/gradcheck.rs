//! Central finite differences for checking tape gradients.

use super::matrix::Matrix;

/// Magnitude below which entries are compared absolutely rather than
/// relatively, so that gradients that are zero analytically do not blow up
/// the ratio with round-off noise.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Numerical gradient of `f` at `x` by central differences with step `h`.
pub fn central_difference(x: &Matrix<f64>, h: f64, mut f: impl FnMut(&Matrix<f64>) -> f64) -> Matrix<f64> {
    let mut probe = x.clone();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for k in 0..x.len() {
        let orig = x.data()[k];
        probe.data_mut()[k] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[k] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[k] = orig;
        out.data_mut()[k] = (plus - minus) / (2.0 * h);
    }
    out
}

/// Worst elementwise `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: &Matrix<f64>, numeric: &Matrix<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_ERROR_FLOOR))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let g = central_difference(&x, 1e-5, |m| m.data().iter().map(|v| v * v).sum());
        assert!((g.data()[0] - 2.0).abs() < 1e-8);
        assert!((g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_uses_floor() {
        let a = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        let n = Matrix::from_rows(&[[1e-13, 1.0 + 1e-9]]).unwrap();
        assert!(relative_error(&a, &n) < 1e-6);
        let bad = Matrix::from_rows(&[[0.0, -1.0]]).unwrap();
        assert!(relative_error(&a, &bad) > 1.0);
    }
}
