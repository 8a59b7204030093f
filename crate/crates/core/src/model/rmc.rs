//! Linear regression with covariates missing completely at random.
//!
//! `mask[j] == true` marks an observed coordinate (the set `s`); the missing
//! coordinates form `τ = 𝟙 − s`. `θ_τ` keeps the missing coordinates of θ and
//! zeroes the rest, `θ_s` the converse. Given `(y, x_s)` the missing block is
//! Gaussian with mean `b_θ = (y − θ_sᵀx_s)/(σ² + ‖θ_τ‖²)·θ_τ` and covariance
//! `A_θ = diag(τ) − θ_τθ_τᵀ/(σ² + ‖θ_τ‖²)`.

use nalgebra::{DMatrix, DVector};

use crate::numeric::{dot, HALF_LN_2PI};

/// `μ_θ = E[X | y, x_s]`, `A_θ = Cov[X | y, x_s]` and `Σ_θ = E[XXᵀ | y, x_s] = μμᵀ + A`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub mu: DVector<f64>,
    pub a_matrix: DMatrix<f64>,
    pub sigma_matrix: DMatrix<f64>,
}

/// Scalar summary of the conditional law; `mu` is written to a caller buffer.
#[derive(Debug, Clone, Copy)]
struct Posterior {
    /// `σ² + ‖θ_τ‖²`
    denom: f64,
    theta_tau_sq: f64,
    missing: usize,
}

fn posterior(theta: &[f64], y: f64, x_obs: &[f64], mask: &[bool], s2: f64, mu: &mut [f64]) -> Posterior {
    let mut theta_tau_sq = 0.0;
    let mut fitted = 0.0;
    let mut missing = 0;
    for j in 0..theta.len() {
        if mask[j] {
            fitted += theta[j] * x_obs[j];
        } else {
            theta_tau_sq += theta[j] * theta[j];
            missing += 1;
        }
    }
    let denom = s2 + theta_tau_sq;
    let scale = (y - fitted) / denom;
    for j in 0..theta.len() {
        mu[j] = if mask[j] { x_obs[j] } else { scale * theta[j] };
    }
    Posterior {
        denom,
        theta_tau_sq,
        missing,
    }
}

/// `θ_τᵀ v`
fn tau_dot(theta: &[f64], mask: &[bool], v: &[f64]) -> f64 {
    theta
        .iter()
        .zip(v)
        .zip(mask)
        .filter(|(_, &m)| !m)
        .map(|((t, x), _)| t * x)
        .sum()
}

/// `out = Σ_θ v = μ(μᵀv) + τ⊙v − θ_τ(θ_τᵀv)/d`
fn sigma_apply(theta: &[f64], mask: &[bool], mu: &[f64], post: Posterior, v: &[f64], out: &mut [f64]) {
    let mv = dot(mu, v);
    let tv = tau_dot(theta, mask, v) / post.denom;
    for j in 0..v.len() {
        out[j] = mu[j] * mv;
        if !mask[j] {
            out[j] += v[j] - theta[j] * tv;
        }
    }
}

/// `vᵀ Σ_θ v`
fn sigma_quad(theta: &[f64], mask: &[bool], mu: &[f64], post: Posterior, v: &[f64]) -> f64 {
    let mv = dot(mu, v);
    let tv = tau_dot(theta, mask, v);
    let tau_sq: f64 = v.iter().zip(mask).filter(|(_, &m)| !m).map(|(x, _)| x * x).sum();
    mv * mv + tau_sq - tv * tv / post.denom
}

/// `ln ψ(s) = |τ| ln ε + |s| ln(1 − ε)` with `0·ln 0 = 0`.
fn ln_pattern_prob(missing: usize, observed: usize, eps: f64) -> f64 {
    let a = if missing == 0 { 0.0 } else { missing as f64 * eps.ln() };
    let b = if observed == 0 { 0.0 } else { observed as f64 * (1.0 - eps).ln() };
    a + b
}

pub(super) fn q_value(
    theta_prime: &[f64],
    theta: &[f64],
    y: f64,
    x_obs: &[f64],
    mask: &[bool],
    sigma: f64,
    eps: f64,
) -> f64 {
    let s2 = sigma * sigma;
    let p = theta.len();
    let mut mu = vec![0.0; p];
    let post = posterior(theta, y, x_obs, mask, s2, &mut mu);
    let quad = sigma_quad(theta, mask, &mu, post, theta_prime);
    let trace = dot(&mu, &mu) + post.missing as f64 - post.theta_tau_sq / post.denom;
    -(y * y - 2.0 * y * dot(theta_prime, &mu) + quad) / (2.0 * s2) - 0.5 * trace
        - p as f64 * HALF_LN_2PI
        - (HALF_LN_2PI + sigma.ln())
        + ln_pattern_prob(post.missing, p - post.missing, eps)
}

pub(super) fn gradient_into(
    theta_prime: &[f64],
    theta: &[f64],
    y: f64,
    x_obs: &[f64],
    mask: &[bool],
    s2: f64,
    out: &mut [f64],
) {
    let mut mu = vec![0.0; theta.len()];
    let post = posterior(theta, y, x_obs, mask, s2, &mut mu);
    sigma_apply(theta, mask, &mu, post, theta_prime, out);
    for (o, m) in out.iter_mut().zip(&mu) {
        *o = (y * m - *o) / s2;
    }
}

/// `(1/σ²)[y(μ_θ − μ_θ*) − (Σ_θ − Σ_θ*)θ*]`
pub(super) fn grv_into(
    theta: &[f64],
    theta_star: &[f64],
    y: f64,
    x_obs: &[f64],
    mask: &[bool],
    s2: f64,
    out: &mut [f64],
) {
    let p = theta.len();
    let mut mu = vec![0.0; p];
    let mut mu_star = vec![0.0; p];
    let mut sig_star = vec![0.0; p];
    let post = posterior(theta, y, x_obs, mask, s2, &mut mu);
    let post_star = posterior(theta_star, y, x_obs, mask, s2, &mut mu_star);
    sigma_apply(theta, mask, &mu, post, theta_star, out);
    sigma_apply(theta_star, mask, &mu_star, post_star, theta_star, &mut sig_star);
    for j in 0..p {
        out[j] = (y * (mu[j] - mu_star[j]) - (out[j] - sig_star[j])) / s2;
    }
}

/// `−(θ'−θ*)ᵀ Σ_θ (θ'−θ*)/(2σ²)`
pub(super) fn crv(
    theta_prime: &[f64],
    theta: &[f64],
    theta_star: &[f64],
    y: f64,
    x_obs: &[f64],
    mask: &[bool],
    s2: f64,
) -> f64 {
    let mut mu = vec![0.0; theta.len()];
    let post = posterior(theta, y, x_obs, mask, s2, &mut mu);
    let diff: Vec<f64> = theta_prime.iter().zip(theta_star).map(|(a, b)| a - b).collect();
    -sigma_quad(theta, mask, &mu, post, &diff) / (2.0 * s2)
}

/// Summands of the normal equations `[Σ Σ_θ] θ' = Σ y μ_θ`.
pub(super) fn m_step_terms(
    theta: &[f64],
    y: f64,
    x_obs: &[f64],
    mask: &[bool],
    s2: f64,
    mat: &mut [f64],
    rhs: &mut [f64],
) {
    let p = theta.len();
    let post = posterior(theta, y, x_obs, mask, s2, rhs);
    // rhs currently holds μ; fill Σ_θ before scaling it by y.
    for i in 0..p {
        for j in 0..p {
            let mut v = rhs[i] * rhs[j];
            if !mask[i] && !mask[j] {
                v -= theta[i] * theta[j] / post.denom;
                if i == j {
                    v += 1.0;
                }
            }
            mat[i * p + j] = v;
        }
    }
    for r in rhs.iter_mut() {
        *r *= y;
    }
}

pub(super) fn conditional_moments(
    theta: &[f64],
    y: f64,
    x_obs: &[f64],
    mask: &[bool],
    s2: f64,
) -> ConditionalMoments {
    let p = theta.len();
    let mut mu = vec![0.0; p];
    let post = posterior(theta, y, x_obs, mask, s2, &mut mu);
    let a_matrix = DMatrix::from_fn(p, p, |i, j| {
        if mask[i] || mask[j] {
            0.0
        } else {
            let d = if i == j { 1.0 } else { 0.0 };
            d - theta[i] * theta[j] / post.denom
        }
    });
    let mu = DVector::from_vec(mu);
    let sigma_matrix = &mu * mu.transpose() + &a_matrix;
    ConditionalMoments {
        mu,
        a_matrix,
        sigma_matrix,
    }
}

/// `ln φ(y − θ_sᵀx_s; 0, σ² + ‖θ_τ‖²) + Σ_{j∈s} ln φ(x_j) + ln ψ(s)`
pub(super) fn log_density(
    theta: &[f64],
    y: f64,
    x_obs: &[f64],
    mask: &[bool],
    sigma: f64,
    eps: f64,
) -> f64 {
    let s2 = sigma * sigma;
    let mut fitted = 0.0;
    let mut theta_tau_sq = 0.0;
    let mut x_sq = 0.0;
    let mut observed = 0;
    for j in 0..theta.len() {
        if mask[j] {
            fitted += theta[j] * x_obs[j];
            x_sq += x_obs[j] * x_obs[j];
            observed += 1;
        } else {
            theta_tau_sq += theta[j] * theta[j];
        }
    }
    let var = s2 + theta_tau_sq;
    let r = y - fitted;
    -HALF_LN_2PI - 0.5 * var.ln() - r * r / (2.0 * var) - observed as f64 * HALF_LN_2PI - 0.5 * x_sq
        + ln_pattern_prob(theta.len() - observed, observed, eps)
}
