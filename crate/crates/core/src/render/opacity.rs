//! Opacity as a logit-normal random variable.

use std::f64::consts::PI;

use crate::numerics::{scalar, Real};

/// `pi / 8`, the squared scale matching the logistic to the probit.
const PROBIT: f64 = PI / 8.0;

/// Sampled opacity `S(mu + sigma * eps)`.
pub fn opacity_train<T: Real>(mu: T, sigma: T, eps: T) -> T {
    scalar::sigmoid(mu + sigma * eps)
}

/// `(d alpha / d mu, d alpha / d sigma)` of [`opacity_train`]. The second
/// component is the first times `eps`.
pub fn opacity_train_grad<T: Real>(mu: T, sigma: T, eps: T) -> (T, T) {
    let d = scalar::sigmoid_grad(mu + sigma * eps);
    (d, d * eps)
}

/// Closed-form approximation of `E[S(mu + sigma * eps)]` for standard
/// normal `eps`: `S(mu / sqrt(1 + pi sigma^2 / 8))`.
pub fn opacity_expected<T: Real>(mu: T, sigma: T) -> T {
    scalar::sigmoid(mu / (T::one() + T::lit(PROBIT) * sigma * sigma).sqrt())
}

/// `(d alpha / d mu, d alpha / d sigma)` of [`opacity_expected`].
pub fn opacity_expected_grad<T: Real>(mu: T, sigma: T) -> (T, T) {
    let k = T::lit(PROBIT);
    let kappa = T::one() / (T::one() + k * sigma * sigma).sqrt();
    let d = scalar::sigmoid_grad(mu * kappa);
    (d * kappa, -d * mu * k * sigma * kappa * kappa * kappa)
}

/// Monte Carlo estimate of `E[S(mu + sigma * eps)]` from standard normal
/// samples.
pub fn opacity_monte_carlo(mu: f64, sigma: f64, samples: &[f64]) -> f64 {
    let sum: f64 = samples.iter().map(|e| scalar::sigmoid(mu + sigma * e)).sum();
    sum / samples.len() as f64
}
