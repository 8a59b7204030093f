//! Empirical aggregates `Γₙ`, `Vₙ`, `𝓔ₙ` and the data-adaptive rate `K̄ₙ`.
//!
//! `Γ̄ₙ = sup ‖Γₙ(θ)‖/‖θ−θ*‖` over the punctured ball is estimated by a
//! lattice scan plus pattern search, so it is a lower bound on the true sup.
//! `V̄ₙ = inf −Vₙ(θ'|θ)/‖θ'−θ*‖²` is exact for GMM and MLR and an upper bound
//! (found by search over θ) for RMC.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::EmTrajectory;
use crate::error::{Error, Result};
use crate::model::{Dataset, ModelKind, ModelSpec};
use crate::numeric::{self, min_eigenvalue, norm};
use crate::search::{lattice_offsets, pattern_search_max, SearchBudget};

/// Contraction balls `B_r(center) ⊆ B_R(center)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    pub r: f64,
    /// Outer radius; `f64::INFINITY` is allowed (serialized as `null`).
    #[serde(with = "outer_radius")]
    pub r_outer: f64,
    pub center: Vec<f64>,
}

mod outer_radius {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl BallSpec {
    pub fn new(r: f64, r_outer: f64, center: &DVector<f64>) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidArgument(format!("inner radius r must be positive, got {r}")));
        }
        if !(r_outer >= r) {
            return Err(Error::InvalidArgument(format!(
                "outer radius R = {r_outer} must be at least r = {r}"
            )));
        }
        Ok(Self {
            r,
            r_outer,
            center: center.as_slice().to_vec(),
        })
    }

    /// `B_r(θ*)` with `R = r`.
    pub fn around_truth(model: &ModelSpec, r: f64) -> Result<Self> {
        Self::new(r, r, model.theta_star())
    }

    /// RCR `ω = r/‖θ*‖`.
    pub fn omega(&self) -> f64 {
        self.r / norm(&self.center)
    }

    fn check(&self, model: &ModelSpec) -> Result<()> {
        if self.center.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: self.center.len(),
            });
        }
        if self.center[..] != model.theta_star().as_slice()[..] {
            return Err(Error::InvalidArgument("ball must be centred at θ*".into()));
        }
        Ok(())
    }
}

/// `Γₙ(θ) = (1/n) Σ Γ(θ; sample_k)`.
pub fn empirical_grv(model: &ModelSpec, theta: &DVector<f64>, data: &Dataset) -> DVector<f64> {
    assert_eq!(theta.len(), model.dim(), "theta dimension");
    DVector::from_vec(grv_mean(model, theta.as_slice(), data))
}

fn grv_mean(model: &ModelSpec, theta: &[f64], data: &Dataset) -> Vec<f64> {
    numeric::mean_vec(data.n(), model.dim(), |k, out| model.grv_into(theta, data.sample(k), out))
}

/// `Vₙ(θ'|θ) = (1/n) Σ V(θ'|θ; sample_k)`.
pub fn empirical_crv(model: &ModelSpec, theta_prime: &DVector<f64>, theta: &DVector<f64>, data: &Dataset) -> f64 {
    assert_eq!(theta.len(), model.dim(), "theta dimension");
    assert_eq!(theta_prime.len(), model.dim(), "theta_prime dimension");
    if model.kind() == ModelKind::Gmm {
        // Sample-free closed form; skips the reduction so the value is exact.
        let d = (theta_prime - model.theta_star()).norm_squared();
        return -d / (2.0 * model.sigma_sq());
    }
    let (tp, t) = (theta_prime.as_slice(), theta.as_slice());
    numeric::mean_scalar(data.n(), |k| model.crv_raw(tp, t, data.sample(k)))
}

/// `𝓔ₙ = (1/n) Σ 𝓔(sample_k)` and `Ēₙ = ‖𝓔ₙ‖`.
pub fn empirical_sev(model: &ModelSpec, data: &Dataset) -> (DVector<f64>, f64) {
    let v = DVector::from_vec(numeric::mean_vec(data.n(), model.dim(), |k, out| {
        model.sev_into(data.sample(k), out)
    }));
    let e = v.norm();
    (v, e)
}

/// Lattice and refined parts of a sup/inf search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub value: f64,
    pub lattice_value: f64,
    pub refined_value: f64,
    /// Offset `θ − θ*` where `value` was attained.
    pub argmax_offset: Vec<f64>,
    pub evaluations: usize,
    /// Lattice and refinement differ by more than 5 %.
    pub disagreement_warning: bool,
}

fn disagree(a: f64, b: f64) -> bool {
    let scale = a.abs().max(b.abs());
    scale > 0.0 && (a - b).abs() > 0.05 * scale
}

/// Estimate of `Γ̄ₙ`; a lower bound on the true supremum.
pub fn estimate_gamma_bar_n(
    model: &ModelSpec,
    data: &Dataset,
    ball: &BallSpec,
    budget: &SearchBudget,
) -> Result<SearchOutcome> {
    ball.check(model)?;
    budget.validate()?;
    let ts = model.theta_star().as_slice();
    let ratio = |offset: &[f64]| {
        let theta: Vec<f64> = ts.iter().zip(offset).map(|(a, b)| a + b).collect();
        norm(&grv_mean(model, &theta, data)) / norm(offset)
    };
    let lattice = lattice_offsets(model.dim(), ball.r, budget);
    let vals: Vec<f64> = lattice.par_iter().map(|o| ratio(o)).collect();
    let (best_i, lattice_value) = argmax(&vals);
    let (arg, refined_value) =
        pattern_search_max(ratio, &lattice[best_i], lattice_value, ball.r, budget.refine_steps);
    Ok(SearchOutcome {
        value: lattice_value.max(refined_value),
        lattice_value,
        refined_value,
        argmax_offset: arg,
        evaluations: lattice.len() + 2 * model.dim() * budget.refine_steps,
        disagreement_warning: disagree(lattice_value, refined_value),
    })
}

fn argmax(vals: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in vals.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// How `V̄ₙ` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VBarMethod {
    /// `1/(2σ²)`
    ExactGmm,
    /// `λ_min(Σ̂)/(2σ²)`
    ExactMlr,
    /// Minimum over searched θ of `λ_min((1/n)Σ Σ_θ)/(2σ²)`; an upper bound.
    SearchedRmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VBarEstimate {
    pub value: f64,
    pub method: VBarMethod,
    pub search: Option<SearchOutcome>,
}

/// `(1/n) Σ Σ_θ(sample_k)` for RMC.
pub fn rmc_mean_sigma(model: &ModelSpec, theta: &DVector<f64>, data: &Dataset) -> DMatrix<f64> {
    let p = model.dim();
    let flat = numeric::mean_vec(data.n(), p * p, |k, out| {
        let cm = model
            .rmc_conditional_moments(theta, data.sample(k))
            .expect("RMC dataset");
        for i in 0..p {
            for j in 0..p {
                out[i * p + j] = cm.sigma_matrix[(i, j)];
            }
        }
    });
    let m = DMatrix::from_row_slice(p, p, &flat);
    (&m + m.transpose()) * 0.5
}

/// Estimate of `V̄ₙ`. The ratio is invariant to the length of `θ' − θ*`, so `R` plays no role.
pub fn estimate_v_bar_n(
    model: &ModelSpec,
    data: &Dataset,
    ball: &BallSpec,
    budget: &SearchBudget,
) -> Result<VBarEstimate> {
    ball.check(model)?;
    let two_s2 = 2.0 * model.sigma_sq();
    match model.kind() {
        ModelKind::Gmm => Ok(VBarEstimate {
            value: 1.0 / two_s2,
            method: VBarMethod::ExactGmm,
            search: None,
        }),
        ModelKind::Mlr => Ok(VBarEstimate {
            value: min_eigenvalue(&data.second_moment()) / two_s2,
            method: VBarMethod::ExactMlr,
            search: None,
        }),
        ModelKind::Rmc => {
            budget.validate()?;
            let ts = model.theta_star();
            // Minimizing λ_min is maximizing its negative.
            let neg = |offset: &[f64]| {
                let theta = ts + DVector::from_column_slice(offset);
                -min_eigenvalue(&rmc_mean_sigma(model, &theta, data)) / two_s2
            };
            let at_truth = neg(&vec![0.0; model.dim()]);
            let lattice = lattice_offsets(model.dim(), ball.r, budget);
            let vals: Vec<f64> = lattice.par_iter().map(|o| neg(o)).collect();
            let (best_i, lattice_best) = argmax(&vals);
            let lattice_value = lattice_best.max(at_truth);
            let (arg, refined) = if lattice_best >= at_truth {
                pattern_search_max(neg, &lattice[best_i], lattice_best, ball.r, budget.refine_steps)
            } else {
                (vec![0.0; model.dim()], at_truth)
            };
            let value = -(lattice_value.max(refined));
            let search = SearchOutcome {
                value,
                lattice_value: -lattice_value,
                refined_value: -refined,
                argmax_offset: arg,
                evaluations: 1 + lattice.len() + 2 * model.dim() * budget.refine_steps,
                disagreement_warning: disagree(lattice_value, refined),
            };
            Ok(VBarEstimate {
                value,
                method: VBarMethod::SearchedRmc,
                search: Some(search),
            })
        }
    }
}

/// `K̄ₙ = min(Γ̄ₙ/V̄ₙ, κ̄ₙ)` when `0 < V̄ₙ < ∞`, otherwise `κ̄ₙ`.
pub fn compute_k_bar_n(gamma_bar_n: f64, v_bar_n: f64, kappa_n_ceiling: f64) -> f64 {
    if v_bar_n > 0.0 && v_bar_n.is_finite() {
        (gamma_bar_n / v_bar_n).min(kappa_n_ceiling)
    } else {
        kappa_n_ceiling
    }
}

/// Where the ceiling `κ̄ₙ` came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaCeiling {
    pub value: f64,
    pub provenance: String,
}

impl KappaCeiling {
    /// No ceiling: `K̄ₙ = Γ̄ₙ/V̄ₙ`.
    pub fn none() -> Self {
        Self {
            value: f64::INFINITY,
            provenance: "none".into(),
        }
    }
}

/// Realizations of `Γ̄ₙ`, `V̄ₙ`, `Ēₙ`, `K̄ₙ` for one dataset and ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRates {
    pub gamma_bar_n: f64,
    pub v_bar_n: f64,
    pub e_bar_n: f64,
    pub k_bar_n: f64,
    pub kappa_n_ceiling: f64,
    pub ceiling_provenance: String,
    /// `Ēₙ/(V̄ₙ − Γ̄ₙ)` when `V̄ₙ > Γ̄ₙ`.
    pub floor_bound: Option<f64>,
    pub gamma_search: SearchOutcome,
    pub v_method: VBarMethod,
    pub v_search: Option<SearchOutcome>,
    pub budget: SearchBudget,
    pub ball: BallSpec,
    /// Always true: the sup is estimated from below.
    pub gamma_is_lower_bound: bool,
    /// True when `V̄ₙ` came from a search and bounds the inf from above.
    pub v_is_upper_bound: bool,
}

impl EmpiricalRates {
    /// `Ēₙ/V̄ₙ`, the additive term of the one-step inequality.
    pub fn one_step_offset(&self) -> f64 {
        if self.v_bar_n > 0.0 {
            self.e_bar_n / self.v_bar_n
        } else {
            f64::INFINITY
        }
    }
}

pub fn compute_empirical_rates(
    model: &ModelSpec,
    data: &Dataset,
    ball: &BallSpec,
    budget: &SearchBudget,
    ceiling: &KappaCeiling,
) -> Result<EmpiricalRates> {
    let gamma = estimate_gamma_bar_n(model, data, ball, budget)?;
    let v = estimate_v_bar_n(model, data, ball, budget)?;
    let (_, e_bar_n) = empirical_sev(model, data);
    let k_bar_n = compute_k_bar_n(gamma.value, v.value, ceiling.value);
    let floor_bound = (v.value > gamma.value).then(|| e_bar_n / (v.value - gamma.value));
    Ok(EmpiricalRates {
        gamma_bar_n: gamma.value,
        v_bar_n: v.value,
        e_bar_n,
        k_bar_n,
        kappa_n_ceiling: ceiling.value,
        ceiling_provenance: ceiling.provenance.clone(),
        floor_bound,
        gamma_search: gamma,
        v_method: v.method,
        v_is_upper_bound: v.method == VBarMethod::SearchedRmc,
        v_search: v.search,
        budget: *budget,
        ball: ball.clone(),
        gamma_is_lower_bound: true,
    })
}

/// Outcome of checking a trajectory against the one-step and cumulative bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionAudit {
    pub rate_used: f64,
    /// `errors[t+1] ≤ k·errors[t] + Ēₙ/V̄ₙ + 10⁻¹⁰` for each step.
    pub per_step: Vec<bool>,
    pub per_step_violations: usize,
    /// `errors[t] ≤ kᵗ·errors[0] + Ēₙ/(V̄ₙ−Γ̄ₙ)`; `None` when the floor is undefined.
    pub cumulative: Option<Vec<bool>>,
    pub cumulative_violations: Option<usize>,
}

pub const AUDIT_SLACK: f64 = 1e-10;

pub fn verify_contraction_inequality(traj: &EmTrajectory, rates: &EmpiricalRates) -> ContractionAudit {
    audit_with_rate(traj, rates, rates.k_bar_n)
}

/// The audit with an arbitrary rate in place of `K̄ₙ`.
pub fn audit_with_rate(traj: &EmTrajectory, rates: &EmpiricalRates, k: f64) -> ContractionAudit {
    let e = &traj.errors;
    let offset = rates.one_step_offset();
    let per_step: Vec<bool> = e
        .windows(2)
        .map(|w| w[1] <= k * w[0] + offset + AUDIT_SLACK)
        .collect();
    let cumulative = rates.floor_bound.map(|floor| {
        let mut kt = 1.0;
        e.iter()
            .map(|&et| {
                let ok = et <= kt * e[0] + floor + AUDIT_SLACK;
                kt *= k;
                ok
            })
            .collect::<Vec<bool>>()
    });
    ContractionAudit {
        rate_used: k,
        per_step_violations: per_step.iter().filter(|b| !**b).count(),
        per_step,
        cumulative_violations: cumulative.as_ref().map(|c| c.iter().filter(|b| !**b).count()),
        cumulative,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_bar_branches() {
        assert!((compute_k_bar_n(0.2, 0.5, 0.6) - 0.4).abs() < 1e-15);
        assert_eq!(compute_k_bar_n(0.2, -0.1, 0.6), 0.6);
        assert_eq!(compute_k_bar_n(0.9, 1.0, 0.6), 0.6);
        assert_eq!(compute_k_bar_n(0.2, f64::INFINITY, 0.6), 0.6);
    }

    #[test]
    fn ball_validation() {
        let c = DVector::from_vec(vec![1.0]);
        assert!(BallSpec::new(0.0, 1.0, &c).is_err());
        assert!(BallSpec::new(1.0, 0.5, &c).is_err());
        assert!(BallSpec::new(1.0, f64::INFINITY, &c).is_ok());
    }

    #[test]
    fn ball_json_round_trip_with_infinite_outer_radius() {
        let b = BallSpec::new(0.5, f64::INFINITY, &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        let s = serde_json::to_string(&b).unwrap();
        assert!(s.contains("null"));
        let back: BallSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
    }
}
