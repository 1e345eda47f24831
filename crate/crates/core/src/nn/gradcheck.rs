//! Central finite-difference checks in `f64`.

use super::ParamSet;

/// Step used by the checks.
pub const DEFAULT_STEP: f64 = 1e-3;

/// `‖a − n‖ / max(‖a‖ + ‖n‖, 1e-12)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / (na + nn).max(1e-12)
}

/// `(f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Compares analytic gradients of every tensor in `params` with central
/// differences of `loss`. Frozen rows are skipped. Returns
/// `(tensor name, relative error)` per tensor.
pub fn check_params(
    params: &ParamSet<f64>,
    analytic: &ParamSet<f64>,
    mut loss: impl FnMut(&ParamSet<f64>) -> f64,
    h: f64,
) -> Vec<(String, f64)> {
    let mut probe = params.clone();
    let mut out = Vec::new();
    for id in params.ids() {
        let p = params.param(id);
        let start = p.frozen_rows * p.value.cols();
        let mut a = Vec::new();
        let mut n = Vec::new();
        for i in start..p.value.len() {
            let x = p.value.data()[i];
            probe[id].data_mut()[i] = x + h;
            let up = loss(&probe);
            probe[id].data_mut()[i] = x - h;
            let down = loss(&probe);
            probe[id].data_mut()[i] = x;
            n.push((up - down) / (2.0 * h));
            a.push(analytic[id].data()[i]);
        }
        out.push((p.name.clone(), relative_error(&a, &n)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        // d(x·y)/dx at (2, 3) is 3.
        let g = numeric_gradient(|v| v[0] * v[1], &[2.0, 3.0], DEFAULT_STEP);
        assert!((g[0] - 3.0).abs() < 1e-9);
        assert!((g[1] - 2.0).abs() < 1e-9);
        let c = numeric_gradient(|_| 7.0, &[1.0], DEFAULT_STEP);
        assert_eq!(c, vec![0.0]);
    }

    #[test]
    fn relative_error_of_equal_vectors_is_zero() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }
}
