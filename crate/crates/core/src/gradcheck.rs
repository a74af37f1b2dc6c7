//! Central finite differences, used as the independent oracle for every backward rule.
//!
//! Only forward evaluations are used here, so these routines share no code
//! path with the analytic gradients they check.

use crate::tensor::Tensor;

/// Numerical gradient of scalar `f` at `x` by central differences with step `h`.
pub fn numeric_gradient(
    x: &Tensor<f64>,
    h: f64,
    mut f: impl FnMut(&Tensor<f64>) -> f64,
) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or the absolute difference norm when both are below `1e-12`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// `Σ weights ⊙ t`, the scalar probe used to check ops with tensor outputs.
pub fn weighted_sum(t: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
    t.data()
        .iter()
        .zip(weights.data())
        .map(|(a, b)| a * b)
        .sum()
}
