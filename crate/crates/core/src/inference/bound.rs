//! Quadratic-exponential lower bound on the logistic label likelihood
//! `p(t | y) = e^{y t} σ(−y)`.

use crate::math::{ln_sigmoid, sigmoid};

/// `λ(ξ) = (σ(ξ) − ½) / (2ξ)`, with the limit `1/8` at `ξ = 0`. Even in `ξ`.
pub fn jaakkola_lambda(xi: f64) -> f64 {
    let a = xi.abs();
    if a < 1e-12 {
        0.125
    } else {
        // σ(a) − ½ = tanh(a/2)/2 avoids cancellation for small a
        (0.5 * a).tanh() / (4.0 * a)
    }
}

/// `ln h(y, ξ) = y t + ln σ(ξ) − (y + ξ)/2 − λ(ξ)(y² − ξ²)`.
pub fn ln_bound(y: f64, xi: f64, t: f64) -> f64 {
    y * t + ln_sigmoid(xi) - 0.5 * (y + xi) - jaakkola_lambda(xi) * (y * y - xi * xi)
}

pub fn bound(y: f64, xi: f64, t: f64) -> f64 {
    ln_bound(y, xi, t).exp()
}

/// Exact label likelihood `e^{y t} σ(−y)`.
pub fn label_likelihood(y: f64, t: f64) -> f64 {
    (y * t).exp() * sigmoid(-y)
}

pub fn ln_label_likelihood(y: f64, t: f64) -> f64 {
    y * t + ln_sigmoid(-y)
}
