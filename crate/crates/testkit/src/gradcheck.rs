//! Finite-difference gradient oracle.

/// Central-difference gradient of `f` at `x`.
///
/// Each coordinate is perturbed by `step` in both directions; the function is
/// otherwise treated as a black box.
pub fn central_difference<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut point = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let original = point[i];
        point[i] = original + step;
        let plus = f(&point);
        point[i] = original - step;
        let minus = f(&point);
        point[i] = original;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Worst-case deviation |a_i - b_i| / max(1, |a_i|, |b_i|) over all components.
///
/// The mixed denominator keeps the measure a true relative error for large
/// gradient entries while degrading gracefully to an absolute error for tiny
/// ones, where pure relative error is unresolvable by finite differences.
pub fn max_mixed_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / 1.0_f64.max(x.abs()).max(y.abs()))
        .fold(0.0, f64::max)
}
