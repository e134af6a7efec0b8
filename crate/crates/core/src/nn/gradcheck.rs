//! Central finite-difference oracle for checking reverse-mode gradients.
//!
//! Only forward evaluations are used here, so the oracle stays independent of
//! the backward closures it is checking.

use super::tensor::Tensor;

/// Central differences of `f` at `x` for the listed flat indices.
pub fn numeric_grad(f: &mut dyn FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>, indices: &[usize], step: f64) -> Vec<f64> {
    let mut probe = x.clone();
    indices
        .iter()
        .map(|&i| {
            let orig = probe.data[i];
            probe.data[i] = orig + step;
            let up = f(&probe);
            probe.data[i] = orig - step;
            let down = f(&probe);
            probe.data[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `max |a - b| / max(max |b|, floor)`.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = numeric.iter().chain(analytic).map(|v| v.abs()).fold(0.0, f64::max);
    diff / scale.max(1e-10)
}
