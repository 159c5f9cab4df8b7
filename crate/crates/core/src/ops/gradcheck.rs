use crate::tensor::Tensor;

/// Step used when checking 32-bit analytic gradients.
pub const FD_EPS_F32: f64 = 1e-3;
/// Step used when checking 64-bit analytic gradients.
pub const FD_EPS_F64: f64 = 1e-6;

/// Central-difference gradient of a scalar function, evaluated in 64-bit.
///
/// `f` is called `2 * x.len()` times; `x` itself is left untouched.
pub fn finite_difference_grad(mut f: impl FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>, epsilon: f64) -> Tensor<f64> {
    assert!(epsilon > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.dims());
    for idx in 0..x.data().len() {
        let orig = x.data()[idx];
        probe.data_mut()[idx] = orig + epsilon;
        let plus = f(&probe);
        probe.data_mut()[idx] = orig - epsilon;
        let minus = f(&probe);
        probe.data_mut()[idx] = orig;
        grad.data_mut()[idx] = (plus - minus) / (2.0 * epsilon);
    }
    grad
}

/// Max-norm relative error of an analytic gradient against a numerical one:
/// `max |a - n|` over `max(|a|, |n|)` taken across both vectors. Two
/// all-zero gradients compare equal.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = numeric
        .iter()
        .chain(analytic)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
