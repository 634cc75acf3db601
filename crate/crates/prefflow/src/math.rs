//! Scalar numerics shared by the autodiff tape and the objectives.

/// Logistic sigmoid, computed as `0.5 * (1 + tanh(x/2))`.
///
/// The tanh form is odd-symmetric in floating point, so identities like
/// `sigma(x) + sigma(-x) = 1` hold exactly; the utility normalization
/// relies on that.
pub fn sigmoid(x: f64) -> f64 {
    0.5 * (1.0 + (0.5 * x).tanh())
}

/// Numerically stable `ln(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `x * sigmoid(x)`.
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Derivative of silu: `sigma(x) * (1 + x * (1 - sigma(x)))`.
pub fn silu_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

pub fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean of a slice; caller guarantees it is non-empty.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
