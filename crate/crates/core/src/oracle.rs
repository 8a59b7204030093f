//! Population-level quantities: closed-form contraction bounds, Monte-Carlo
//! population proxies, the RMC fixed-pattern expectations, the ε-bounds and
//! the sample-size conditions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelKind, ModelSpec};
use crate::numeric::{self, min_eigenvalue, norm};
use crate::rates::{estimate_gamma_bar_n, estimate_v_bar_n, BallSpec, SearchOutcome};
use crate::rng::{derive_seed, namespace};
use crate::search::{lattice_offsets, pattern_search_max, SearchBudget};

/// Absolute constants the bounds leave unspecified. The defaults only fix
/// the shape of each bound, never its level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundConstants {
    /// Exponent constant in the GMM rate `e^{−cη²}/σ²`.
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// The small exponent loss in the MLR `n^{1/2−ϵ}`.
    pub mlr_exponent_loss: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        Self {
            c: 1.0,
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
            mlr_exponent_loss: 0.01,
        }
    }
}

impl BoundConstants {
    pub const LABEL: &'static str = "bound-shape only";

    pub fn validate(&self) -> Result<()> {
        let all = [self.c, self.c1, self.c2, self.c3];
        if all.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("bound constants must be positive and finite".into()));
        }
        if !(0.0..0.5).contains(&self.mlr_exponent_loss) {
            return Err(Error::InvalidArgument(
                "mlr_exponent_loss must lie in [0, 1/2)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    ClosedFormBound,
    MonteCarloEstimate,
    /// Exact population value (closed form, no sampling).
    Exact,
}

/// A `(γ, ν, κ = γ/ν)` triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionParams {
    pub gamma: f64,
    pub nu: f64,
    pub kappa: f64,
    pub gamma_provenance: Provenance,
    pub nu_provenance: Provenance,
    /// Standard error of a Monte-Carlo γ.
    pub mc_stderr: Option<f64>,
}

impl ContractionParams {
    fn new(gamma: f64, nu: f64, gp: Provenance, np: Provenance, mc_stderr: Option<f64>) -> Self {
        let kappa = if nu > 0.0 { gamma / nu } else { f64::INFINITY };
        Self {
            gamma,
            nu,
            kappa,
            gamma_provenance: gp,
            nu_provenance: np,
            mc_stderr,
        }
    }

    /// `κ < 1`: the pair contracts.
    pub fn is_contraction(&self) -> bool {
        self.nu > 0.0 && self.kappa < 1.0
    }
}

fn require_nonzero_truth(model: &ModelSpec) -> Result<f64> {
    let t = model.theta_star().norm();
    if t == 0.0 {
        return Err(Error::OutOfRegime("closed-form bounds need θ* ≠ 0".into()));
    }
    Ok(t)
}

/// Closed-form `(γ, ν)` bounds.
pub fn closed_form_bounds(model: &ModelSpec, ball: &BallSpec, constants: &BoundConstants) -> Result<ContractionParams> {
    constants.validate()?;
    let theta_norm = require_nonzero_truth(model)?;
    let s2 = model.sigma_sq();
    let eta = model.snr();
    let omega = ball.r / theta_norm;
    let cf = Provenance::ClosedFormBound;
    match model.kind() {
        ModelKind::Gmm => {
            if ball.r > theta_norm / 4.0 {
                return Err(Error::OutOfRegime(format!(
                    "GMM bound needs r ≤ ‖θ*‖/4 = {}, got r = {}",
                    theta_norm / 4.0,
                    ball.r
                )));
            }
            let gamma = (-constants.c * eta * eta).exp() / s2;
            Ok(ContractionParams::new(gamma, 0.5 / s2, cf, Provenance::Exact, None))
        }
        ModelKind::Mlr => {
            if !(omega > 0.0 && omega <= 0.25) {
                return Err(Error::OutOfRegime(format!(
                    "MLR bound needs ω = r/‖θ*‖ in (0, 1/4], got {omega}"
                )));
            }
            let gamma = (7.3 * omega + 17.0 / eta) / s2;
            Ok(ContractionParams::new(gamma, 0.5 / s2, cf, Provenance::Exact, None))
        }
        ModelKind::Rmc => {
            let eps = model.epsilon_miss();
            let lo = 1.0 / (1.0 + omega).sqrt();
            let hi = if eps > 0.0 {
                1.0 / (3.0 * (1.0 + omega) * eps.powf(0.25))
            } else {
                f64::INFINITY
            };
            if !(eta > lo && eta < hi) {
                return Err(Error::OutOfRegime(format!(
                    "RMC bound needs 1/√(1+ω) < η < 1/(3(1+ω)ε^¼), i.e. {lo} < η < {hi}, got η = {eta}"
                )));
            }
            let (gamma, nu) = rmc_gamma_nu(omega, eta, eps, s2);
            Ok(ContractionParams::new(gamma, nu, cf, cf, None))
        }
    }
}

fn rmc_gamma_nu(omega: f64, eta: f64, eps: f64, s2: f64) -> (f64, f64) {
    let xi = (1.0 + omega) * eta * eta;
    let root = (eps * (1.0 - eps)).sqrt();
    let gamma = ((omega * xi * xi + (3.0 * omega + 2.0) * xi + 1.0) * eps + xi * root) / s2;
    let nu = (1.0 - 2.0 * omega * xi * root - (1.0 + omega) * xi * eps) / (2.0 * s2);
    (gamma, nu)
}

/// Seed of the population-proxy dataset derived from a master seed.
pub fn proxy_seed(master_seed: u64) -> u64 {
    derive_seed(master_seed, &[namespace::POPULATION_PROXY])
}

/// Monte-Carlo population estimate of `γ̄` (and `ν̄`) from a large proxy dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationEstimate {
    pub params: ContractionParams,
    pub n_mc: usize,
    pub proxy_seed: u64,
    pub gamma_search: SearchOutcome,
}

pub const MIN_MC_SAMPLES: usize = 100_000;

/// `γ̄` from the rate search run on a proxy dataset of `n_mc` samples.
///
/// The standard error is the delta-method error of `‖Γ̄(θ)‖/‖θ−θ*‖` at the
/// maximizing θ. `ν̄` is exact for GMM and MLR. For RMC it comes from the
/// pattern-averaged closed form when `p ≤ 12`, and from the proxy otherwise.
pub fn mc_population_grv_bound(
    model: &ModelSpec,
    ball: &BallSpec,
    n_mc: usize,
    budget: &SearchBudget,
    master_seed: u64,
) -> Result<PopulationEstimate> {
    if n_mc < MIN_MC_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "population proxy needs n_mc ≥ {MIN_MC_SAMPLES}, got {n_mc}"
        )));
    }
    let seed = proxy_seed(master_seed);
    let proxy = Dataset::generate(model, n_mc, seed)?;
    population_from_proxy(model, ball, budget, &proxy)
}

/// As [`mc_population_grv_bound`] with a caller-supplied proxy dataset.
pub fn population_from_proxy(
    model: &ModelSpec,
    ball: &BallSpec,
    budget: &SearchBudget,
    proxy: &Dataset,
) -> Result<PopulationEstimate> {
    let search = estimate_gamma_bar_n(model, proxy, ball, budget)?;
    let stderr = ratio_stderr(model, proxy, &search.argmax_offset);
    let (nu, nu_prov) = match model.kind() {
        ModelKind::Gmm | ModelKind::Mlr => (0.5 / model.sigma_sq(), Provenance::Exact),
        ModelKind::Rmc if model.dim() <= MAX_EXACT_PATTERN_DIM => {
            (rmc_population_nu(model, ball, budget), Provenance::Exact)
        }
        ModelKind::Rmc => (
            estimate_v_bar_n(model, proxy, ball, budget)?.value,
            Provenance::MonteCarloEstimate,
        ),
    };
    Ok(PopulationEstimate {
        params: ContractionParams::new(
            search.value,
            nu,
            Provenance::MonteCarloEstimate,
            nu_prov,
            Some(stderr),
        ),
        n_mc: proxy.n(),
        proxy_seed: proxy.seed(),
        gamma_search: search,
    })
}

fn ratio_stderr(model: &ModelSpec, data: &Dataset, offset: &[f64]) -> f64 {
    let p = model.dim();
    let theta: Vec<f64> = model
        .theta_star()
        .iter()
        .zip(offset)
        .map(|(a, b)| a + b)
        .collect();
    let mean = numeric::mean_vec(data.n(), p, |k, out| model.grv_into(&theta, data.sample(k), out));
    let m = norm(&mean);
    let rho = norm(offset);
    if m == 0.0 || rho == 0.0 {
        return 0.0;
    }
    let u: Vec<f64> = mean.iter().map(|x| x / m).collect();
    let second = numeric::mean_scalar(data.n(), |k| {
        let mut g = vec![0.0; p];
        model.grv_into(&theta, data.sample(k), &mut g);
        let d = numeric::dot(&u, &g) - m;
        d * d
    });
    (second * data.n() as f64 / (data.n() - 1).max(1) as f64).sqrt() / (data.n() as f64).sqrt() / rho
}

/// Largest dimension for which RMC expectations are summed over all `2^p` patterns.
pub const MAX_EXACT_PATTERN_DIM: usize = 12;

/// `E[Σ_θ]` and `E[Γ(θ)]` under a fixed observation mask (`true` = observed).
#[derive(Debug, Clone, PartialEq)]
pub struct RmcPopulationMoments {
    pub e_sigma: DMatrix<f64>,
    pub e_grv: DVector<f64>,
}

/// Fixed-pattern closed forms of `E[Σ_θ]` and `E[Γ(θ)]` for RMC.
pub fn rmc_population_moments(model: &ModelSpec, theta: &DVector<f64>, mask: &[bool]) -> Result<RmcPopulationMoments> {
    if model.kind() != ModelKind::Rmc {
        return Err(Error::InvalidArgument("population moments are defined for RMC only".into()));
    }
    let p = model.dim();
    if theta.len() != p || mask.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: if theta.len() != p { theta.len() } else { mask.len() },
        });
    }
    let s2 = model.sigma_sq();
    let ts = model.theta_star();
    let split = |v: &DVector<f64>, observed: bool| {
        DVector::from_iterator(p, v.iter().zip(mask).map(|(&x, &m)| if m == observed { x } else { 0.0 }))
    };
    let (th_s, th_t) = (split(theta, true), split(theta, false));
    let (ts_s, ts_t) = (split(ts, true), split(ts, false));
    let d = s2 + th_t.norm_squared();
    let diff_s = &ts_s - &th_s;
    let cross = th_t.dot(&ts_t);

    let coef = (ts_t.norm_squared() - th_t.norm_squared() + diff_s.norm_squared()) / (d * d);
    let e_sigma = DMatrix::identity(p, p)
        + (&th_t * diff_s.transpose() + &diff_s * th_t.transpose()) / d
        + &th_t * th_t.transpose() * coef;

    let zeta = (d - cross) * (ts_t.norm_squared() - th_t.norm_squared()) - cross * diff_s.norm_squared();
    let e_grv = ((&th_t - &ts_t) - &diff_s * (cross / d) + &th_t * (zeta / (d * d))) / s2;
    Ok(RmcPopulationMoments { e_sigma, e_grv })
}

/// Pattern-averaged `E[Σ_θ]` and `E[Γ(θ)]`, summing `ψ(τ)` over all `2^p` masks.
pub fn rmc_pattern_averaged_moments(model: &ModelSpec, theta: &DVector<f64>) -> Result<RmcPopulationMoments> {
    let p = model.dim();
    if p > MAX_EXACT_PATTERN_DIM {
        return Err(Error::InvalidArgument(format!(
            "pattern averaging enumerates 2^p masks; p = {p} exceeds {MAX_EXACT_PATTERN_DIM}"
        )));
    }
    let eps = model.epsilon_miss();
    let mut e_sigma = DMatrix::zeros(p, p);
    let mut e_grv = DVector::zeros(p);
    for bits in 0u32..(1 << p) {
        let mask: Vec<bool> = (0..p).map(|j| bits & (1 << j) != 0).collect();
        let observed = mask.iter().filter(|&&m| m).count() as i32;
        let w = eps.powi(p as i32 - observed) * (1.0 - eps).powi(observed);
        if w == 0.0 {
            continue;
        }
        let m = rmc_population_moments(model, theta, &mask)?;
        e_sigma += m.e_sigma * w;
        e_grv += m.e_grv * w;
    }
    Ok(RmcPopulationMoments { e_sigma, e_grv })
}

/// Exact population `γ̄` for RMC (small p), searched over the ball.
pub fn rmc_population_gamma(model: &ModelSpec, ball: &BallSpec, budget: &SearchBudget) -> Result<f64> {
    let ts = model.theta_star().clone();
    let ratio = |o: &[f64]| {
        let theta = &ts + DVector::from_column_slice(o);
        rmc_pattern_averaged_moments(model, &theta)
            .map(|m| m.e_grv.norm() / norm(o))
            .unwrap_or(f64::NAN)
    };
    rmc_pattern_averaged_moments(model, &ts)?;
    let lattice = lattice_offsets(model.dim(), ball.r, budget);
    let (i, best) = lattice
        .iter()
        .map(|o| ratio(o))
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    Ok(pattern_search_max(ratio, &lattice[i], best, ball.r, budget.refine_steps).1.max(best))
}

/// Population `ν̄` for RMC (small p): the minimum over searched θ of `λ_min(E Σ_θ)/(2σ²)`.
fn rmc_population_nu(model: &ModelSpec, ball: &BallSpec, budget: &SearchBudget) -> f64 {
    let ts = model.theta_star().clone();
    let two_s2 = 2.0 * model.sigma_sq();
    let neg = |o: &[f64]| {
        let theta = &ts + DVector::from_column_slice(o);
        let m = rmc_pattern_averaged_moments(model, &theta).expect("small p");
        -min_eigenvalue(&m.e_sigma) / two_s2
    };
    let at_truth = neg(&vec![0.0; model.dim()]);
    let lattice = lattice_offsets(model.dim(), ball.r, budget);
    let (i, best) = lattice
        .iter()
        .map(|o| neg(o))
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let refined = pattern_search_max(neg, &lattice[i], best, ball.r, budget.refine_steps).1;
    -(at_truth.max(best).max(refined))
}

/// `ε₁`, `ε₂`, `ε_s` at confidence `1 − δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBounds {
    pub eps1: f64,
    pub eps2: f64,
    pub eps_s: f64,
    pub delta: f64,
    pub n: usize,
    pub p: usize,
    /// `log(L/δ)` with `log L = p·log 5`.
    pub log_l_over_delta: f64,
    pub constants: BoundConstants,
    pub constants_label: String,
}

/// `C(ω, η)` of the RMC gradient-concentration bound.
pub fn rmc_concentration_constant(omega: f64, eta: f64, k: &BoundConstants) -> f64 {
    let a = eta * (1.0 + eta) * (2.0 + omega) + 1.0;
    k.c1 * a * eta * (1.0 + eta) * (1.0 + omega)
        + k.c2 * a * (1.0 + omega) * eta * eta
        + k.c3 * ((1.0 + omega) * eta * eta + 1.0) * (2.0 + omega) * eta * eta
}

pub fn epsilon_bounds(
    model: &ModelSpec,
    delta: f64,
    ball: &BallSpec,
    n: usize,
    constants: &BoundConstants,
) -> Result<EpsilonBounds> {
    constants.validate()?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("δ must lie in (0, 1), got {delta}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("sample size n must be at least 1".into()));
    }
    let p = model.dim();
    let sigma = model.sigma();
    let s2 = model.sigma_sq();
    let eta = model.snr();
    let nf = n as f64;
    let log_l = p as f64 * 5f64.ln() + (1.0 / delta).ln();
    let root = (log_l / nf).sqrt();
    let k = constants;
    let (eps1, eps2, eps_s) = match model.kind() {
        ModelKind::Gmm => {
            let kk = model.scale_k();
            (k.c1 * kk * kk / s2 * root, 0.0, k.c2 * kk / s2 * root)
        }
        ModelKind::Mlr => (
            k.c1 / s2 * log_l / nf.powf(0.5 - k.mlr_exponent_loss),
            k.c2 / s2 * ((1.0 / delta).ln() / nf).sqrt(),
            k.c3 / sigma * (1.0 + 2.0 * eta) * root,
        ),
        ModelKind::Rmc => {
            let omega = ball.r / require_nonzero_truth(model)?;
            (
                rmc_concentration_constant(omega, eta, k) / s2 * root,
                k.c1 / s2 * root,
                k.c2 * (1.0 + eta) / sigma * root,
            )
        }
    };
    Ok(EpsilonBounds {
        eps1,
        eps2,
        eps_s,
        delta,
        n,
        p,
        log_l_over_delta: log_l,
        constants: *constants,
        constants_label: BoundConstants::LABEL.into(),
    })
}

/// `γ̄ₙ = γ̄ + ε₁`, `ν̄ₙ = ν̄ − ε₂` and `κ̄ₙ = γ̄ₙ/ν̄ₙ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteSampleParams {
    pub gamma_n: f64,
    pub nu_n: f64,
    /// `+∞` (serialized as `null`) when `ν̄ₙ ≤ 0`.
    pub kappa_n: f64,
}

pub fn finite_sample_params(params: &ContractionParams, bounds: &EpsilonBounds) -> FiniteSampleParams {
    let gamma_n = params.gamma + bounds.eps1;
    let nu_n = params.nu - bounds.eps2;
    FiniteSampleParams {
        gamma_n,
        nu_n,
        kappa_n: if nu_n > 0.0 { gamma_n / nu_n } else { f64::INFINITY },
    }
}

/// One sample-size condition with its margin (positive means satisfied).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub holds: bool,
    pub margin: f64,
}

impl Condition {
    fn from_margin(margin: f64) -> Self {
        Self {
            holds: margin > 0.0,
            margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeReport {
    /// `ε_s + rε₁ + rε₂ < r(ν̄ − γ̄)`
    pub main: Condition,
    /// `ε₂ < ν̄/2`
    pub eps2_half_nu: Condition,
    /// `ν̄ₙ > 0`
    pub nu_n_positive: Condition,
    /// `ν̄ ≤ γ̄`: no contraction pair, so the main condition cannot hold for any n.
    pub unsatisfiable: bool,
}

impl SampleSizeReport {
    pub fn all_hold(&self) -> bool {
        self.main.holds && self.eps2_half_nu.holds && self.nu_n_positive.holds
    }
}

pub fn check_sample_size_conditions(
    params: &ContractionParams,
    bounds: &EpsilonBounds,
    ball: &BallSpec,
) -> SampleSizeReport {
    let r = ball.r;
    SampleSizeReport {
        main: Condition::from_margin(
            r * (params.nu - params.gamma) - (bounds.eps_s + r * bounds.eps1 + r * bounds.eps2),
        ),
        eps2_half_nu: Condition::from_margin(params.nu / 2.0 - bounds.eps2),
        nu_n_positive: Condition::from_margin(params.nu - bounds.eps2),
        unsatisfiable: params.nu <= params.gamma,
    }
}
