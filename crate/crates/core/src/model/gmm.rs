//! Balanced symmetric Gaussian mixture.

use crate::numeric::{dot, ln_cosh, logistic, norm_sq, HALF_LN_2PI};

/// `w_θ(y) = ς(2θᵀy/σ²)`, the posterior weight of the `+θ` component.
pub(super) fn weight(theta: &[f64], y: &[f64], s2: f64) -> f64 {
    logistic(2.0 * dot(theta, y) / s2)
}

pub(super) fn q_value(theta_prime: &[f64], theta: &[f64], y: &[f64], sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let w = weight(theta, y, s2);
    let (mut minus, mut plus) = (0.0, 0.0);
    for (&yj, &tj) in y.iter().zip(theta_prime) {
        minus += (yj - tj) * (yj - tj);
        plus += (yj + tj) * (yj + tj);
    }
    let p = y.len() as f64;
    -(w * minus + (1.0 - w) * plus) / (2.0 * s2)
        - std::f64::consts::LN_2
        - p * (HALF_LN_2PI + sigma.ln())
}

pub(super) fn gradient_into(theta_prime: &[f64], theta: &[f64], y: &[f64], s2: f64, out: &mut [f64]) {
    let c = 2.0 * weight(theta, y, s2) - 1.0;
    for ((o, &yj), &tj) in out.iter_mut().zip(y).zip(theta_prime) {
        *o = (c * yj - tj) / s2;
    }
}

/// `(2/σ²)[w_θ(y) − w_θ*(y)]·y`
pub(super) fn grv_into(theta: &[f64], theta_star: &[f64], y: &[f64], s2: f64, out: &mut [f64]) {
    let c = 2.0 * (weight(theta, y, s2) - weight(theta_star, y, s2)) / s2;
    for (o, &yj) in out.iter_mut().zip(y) {
        *o = c * yj;
    }
}

/// `−‖θ' − θ*‖²/(2σ²)`, independent of θ and the sample.
pub(super) fn crv(theta_prime: &[f64], theta_star: &[f64], s2: f64) -> f64 {
    let d: f64 = theta_prime
        .iter()
        .zip(theta_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    -d / (2.0 * s2)
}

/// Summand of the closed-form update `(1/n) Σ (2w_θ(y_k) − 1)·y_k`.
pub(super) fn m_step_term(theta: &[f64], y: &[f64], s2: f64, out: &mut [f64]) {
    let c = 2.0 * weight(theta, y, s2) - 1.0;
    for (o, &yj) in out.iter_mut().zip(y) {
        *o = c * yj;
    }
}

/// `ln(½φ(y−θ) + ½φ(y+θ))` with `φ` the `N(0, σ²I)` density.
pub(super) fn log_density(theta: &[f64], y: &[f64], sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let p = y.len() as f64;
    -p * (HALF_LN_2PI + sigma.ln()) - (norm_sq(y) + norm_sq(theta)) / (2.0 * s2)
        + ln_cosh(dot(theta, y) / s2)
}
