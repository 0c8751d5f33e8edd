//! Central-difference gradient verification.

/// Compares analytic gradients against central finite differences of a
/// scalar function, coordinate by coordinate, returning the maximum
/// relative error `|a − n| / max(1e-12, |a| + |n|)`.
pub fn grad_check<F>(mut f: F, x0: &[f64], analytic: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(
        x0.len(),
        analytic.len(),
        "one analytic gradient per coordinate"
    );
    let mut x = x0.to_vec();
    let mut max_rel = 0.0f64;
    for i in 0..x.len() {
        let original = x[i];
        x[i] = original + eps;
        let plus = f(&x);
        x[i] = original - eps;
        let minus = f(&x);
        x[i] = original;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / f64::max(1e-12, a.abs() + numeric.abs());
        max_rel = max_rel.max(rel);
    }
    max_rel
}
