//! Mixture of two symmetric linear regressions.

use crate::numeric::{dot, ln_cosh, logistic, norm_sq, HALF_LN_2PI};

/// `w_θ(y, x) = ς(2y⟨x, θ⟩/σ²)`
pub(super) fn weight(theta: &[f64], y: f64, x: &[f64], s2: f64) -> f64 {
    logistic(2.0 * y * dot(x, theta) / s2)
}

pub(super) fn q_value(theta_prime: &[f64], theta: &[f64], y: f64, x: &[f64], sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let w = weight(theta, y, x, s2);
    let xt = dot(x, theta_prime);
    let p = x.len() as f64;
    -(w * (y - xt).powi(2) + (1.0 - w) * (y + xt).powi(2)) / (2.0 * s2) - 0.5 * norm_sq(x)
        - std::f64::consts::LN_2
        - sigma.ln()
        - (p + 1.0) * HALF_LN_2PI
}

pub(super) fn gradient_into(
    theta_prime: &[f64],
    theta: &[f64],
    y: f64,
    x: &[f64],
    s2: f64,
    out: &mut [f64],
) {
    let c = ((2.0 * weight(theta, y, x, s2) - 1.0) * y - dot(x, theta_prime)) / s2;
    for (o, &xj) in out.iter_mut().zip(x) {
        *o = c * xj;
    }
}

/// `(2/σ²)[w_θ − w_θ*]·y·x`
pub(super) fn grv_into(theta: &[f64], theta_star: &[f64], y: f64, x: &[f64], s2: f64, out: &mut [f64]) {
    let c = 2.0 * (weight(theta, y, x, s2) - weight(theta_star, y, x, s2)) * y / s2;
    for (o, &xj) in out.iter_mut().zip(x) {
        *o = c * xj;
    }
}

/// `−(θ'−θ*)ᵀ x xᵀ (θ'−θ*)/(2σ²)`
pub(super) fn crv(theta_prime: &[f64], theta_star: &[f64], x: &[f64], s2: f64) -> f64 {
    let proj: f64 = x
        .iter()
        .zip(theta_prime.iter().zip(theta_star))
        .map(|(xj, (a, b))| xj * (a - b))
        .sum();
    -proj * proj / (2.0 * s2)
}

/// Summands of the normal equations `[Σ x xᵀ] θ' = Σ (2w_θ − 1) y x`.
pub(super) fn m_step_terms(theta: &[f64], y: f64, x: &[f64], s2: f64, mat: &mut [f64], rhs: &mut [f64]) {
    let p = x.len();
    let c = (2.0 * weight(theta, y, x, s2) - 1.0) * y;
    for i in 0..p {
        rhs[i] = c * x[i];
        for j in 0..p {
            mat[i * p + j] = x[i] * x[j];
        }
    }
}

/// `ln[½φ(y − ⟨x,θ⟩; σ²) + ½φ(y + ⟨x,θ⟩; σ²)] + ln φ(x; 0, I)`
pub(super) fn log_density(theta: &[f64], y: f64, x: &[f64], sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let xt = dot(x, theta);
    let p = x.len() as f64;
    -HALF_LN_2PI - sigma.ln() - (y * y + xt * xt) / (2.0 * s2) + ln_cosh(y * xt / s2)
        - p * HALF_LN_2PI
        - 0.5 * norm_sq(x)
}
