//! Finite-difference gradient oracle.
//!
//! Central differences per coordinate; the independent check that every
//! analytic gradient in the crate is measured against.

/// Central finite differences of `f` at `point` with step `h`.
pub fn finite_diff_grad<F>(f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        probe[i] = point[i] + h;
        let plus = f(&probe);
        probe[i] = point[i] - h;
        let minus = f(&probe);
        probe[i] = point[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// Max over coordinates of `|a - b| / max(|a|, |b|, floor)`.
///
/// The floor is `1e-3` times the largest coordinate: entries three orders of
/// magnitude below the dominant gradient direction sit at the
/// finite-difference noise level and are compared on the dominant scale
/// instead of their own.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_derivative_at_three() {
        // f(x) = x^2 at x = 3 -> 6
        let g = finite_diff_grad(|p| p[0] * p[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-8, "{}", g[0]);
    }

    #[test]
    fn constant_closure_gives_zero_vector() {
        let g = finite_diff_grad(|_| 42.0, &[1.0, 2.0, 3.0], 1e-5);
        assert_eq!(g, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn transcendental_matches_calculus() {
        let g = finite_diff_grad(|p| p[0].sin() * p[0].exp(), &[1.0], 1e-6);
        let expected = (1f64.cos() + 1f64.sin()) * 1f64.exp();
        assert!((g[0] - expected).abs() < 1e-7);
    }
}
