//! Sample EM iterations and realized-rate measurement.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelSpec};
use crate::numeric::{fit_line, median};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmSettings {
    /// Maximum number of M-steps.
    pub max_iters: usize,
    /// Stop once `‖θᵗ⁺¹ − θᵗ‖ ≤ param_tol`.
    pub param_tol: f64,
}

impl Default for EmSettings {
    fn default() -> Self {
        Self {
            max_iters: 500,
            param_tol: 1e-12,
        }
    }
}

impl EmSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.param_tol >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "param_tol must be nonnegative, got {}",
                self.param_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxIters,
    ParamTol,
}

/// The iterate sequence `θ⁰..θᵀ` of one EM run with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTrajectory {
    pub iterates: Vec<DVector<f64>>,
    /// `‖θᵗ − θ*‖`
    pub errors: Vec<f64>,
    /// `Qₙ(θᵗ⁺¹|θᵗ) − Qₙ(θᵗ|θᵗ)`, one per M-step.
    pub q_gains: Vec<f64>,
    /// `Lₙ(θᵗ)`, one per iterate.
    pub loglik: Vec<f64>,
    pub dataset_seed: u64,
    pub stopped_reason: StopReason,
}

impl EmTrajectory {
    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }

    pub fn last(&self) -> &DVector<f64> {
        self.iterates.last().expect("trajectory holds at least θ⁰")
    }

    pub fn final_error(&self) -> f64 {
        *self.errors.last().expect("trajectory holds at least θ⁰")
    }

    /// Largest distance from θ* reached along the run.
    pub fn max_excursion(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    /// Whether any iterate left `B_radius(θ*)`. The M-step is unconstrained,
    /// so this is a diagnostic only.
    pub fn exited_ball(&self, radius: f64) -> bool {
        self.max_excursion() > radius
    }

    /// `‖θᵗ − θ̂‖` for `t < T`, where `θ̂ = θᵀ` is the final iterate.
    pub fn errors_to_limit(&self) -> Vec<f64> {
        let last = self.last();
        self.iterates[..self.len() - 1]
            .iter()
            .map(|th| (th - last).norm())
            .collect()
    }

    /// Smallest per-step change of the log-likelihood (negative means a decrease).
    pub fn min_loglik_increment(&self) -> f64 {
        self.loglik
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Runs `θᵗ⁺¹ = argmax Qₙ(·|θᵗ)` from `theta0`.
pub fn run_em(
    model: &ModelSpec,
    data: &Dataset,
    theta0: &DVector<f64>,
    settings: &EmSettings,
) -> Result<EmTrajectory> {
    settings.validate()?;
    if theta0.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: theta0.len(),
        });
    }
    if data.dim() != model.dim() || data.model().kind() != model.kind() {
        return Err(Error::InvalidArgument(
            "dataset was drawn from a different model family or dimension".into(),
        ));
    }
    let ts = model.theta_star();
    let mut theta = theta0.clone();
    let mut traj = EmTrajectory {
        errors: vec![(&theta - ts).norm()],
        loglik: vec![model.log_likelihood(&theta, data)],
        iterates: vec![theta.clone()],
        q_gains: Vec::new(),
        dataset_seed: data.seed(),
        stopped_reason: StopReason::MaxIters,
    };
    for t in 0..settings.max_iters {
        let next = model.m_step(&theta, data).map_err(|e| e.at_iteration(t))?;
        traj.q_gains.push(model.q_n_gain(&next, &theta, data));
        traj.loglik.push(model.log_likelihood(&next, data));
        traj.errors.push((&next - ts).norm());
        let step = (&next - &theta).norm();
        traj.iterates.push(next.clone());
        theta = next;
        if step <= settings.param_tol {
            traj.stopped_reason = StopReason::ParamTol;
            break;
        }
    }
    Ok(traj)
}

/// Thresholds of the slope-fit protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateFitSettings {
    /// Fraction of trailing errors whose median defines the plateau.
    pub tail_fraction: f64,
    /// The fit keeps the prefix of errors above `knee_multiplier × floor`.
    pub knee_multiplier: f64,
    /// Distances to the limit below this fraction of the first one are
    /// treated as rounding noise.
    pub limit_cutoff: f64,
}

impl Default for RateFitSettings {
    fn default() -> Self {
        Self {
            tail_fraction: 0.2,
            knee_multiplier: 3.0,
            limit_cutoff: 1e-8,
        }
    }
}

/// Per-iteration contraction factor measured from a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub rate: f64,
    pub floor: f64,
    /// Inclusive iteration indices of the fitted segment.
    pub fit_window: (usize, usize),
    pub r_squared: f64,
}

/// Slope-fit rate of `traj.errors` (distance to θ*).
pub fn estimate_rate(traj: &EmTrajectory) -> Result<RateEstimate> {
    estimate_rate_from_errors(&traj.errors, &RateFitSettings::default())
}

/// Plateau-aware slope fit of a nonnegative error sequence.
///
/// The plateau is the median of the trailing `tail_fraction` of the errors;
/// the fit uses the longest prefix that stays above `knee_multiplier` times it.
pub fn estimate_rate_from_errors(errors: &[f64], settings: &RateFitSettings) -> Result<RateEstimate> {
    if errors.len() < 5 {
        return Err(Error::TooFewPoints { points: errors.len() });
    }
    let tail = ((settings.tail_fraction * errors.len() as f64).ceil() as usize).clamp(1, errors.len());
    let floor = median(&errors[errors.len() - tail..]);
    let cut = settings.knee_multiplier * floor;
    let m = errors.iter().take_while(|&&e| e > cut && e > 0.0).count();
    fit_prefix(errors, m, floor)
}

/// Slope fit of the distances to the run's own limit `θ̂ = θᵀ`.
///
/// Near `θ̂` the EM map contracts geometrically down to rounding level, so
/// no plateau needs to be removed; points below `cutoff_rel × ‖θ⁰ − θ̂‖`
/// (rounding noise) are discarded.
pub fn estimate_rate_to_limit(traj: &EmTrajectory, cutoff_rel: f64) -> Result<RateEstimate> {
    let d = traj.errors_to_limit();
    let Some(&d0) = d.first() else {
        return Err(Error::TooFewPoints { points: 0 });
    };
    let scale = 1.0 + traj.last().norm();
    let cut = (cutoff_rel * d0).max(1e-13 * scale);
    let m = d.iter().take_while(|&&e| e > cut).count();
    fit_prefix(&d, m, 0.0)
}

fn fit_prefix(errors: &[f64], m: usize, floor: f64) -> Result<RateEstimate> {
    if m < 3 {
        return Err(Error::TooFewPoints { points: m });
    }
    let xs: Vec<f64> = (0..m).map(|t| t as f64).collect();
    let ys: Vec<f64> = errors[..m].iter().map(|e| e.ln()).collect();
    let fit = fit_line(&xs, &ys).ok_or(Error::TooFewPoints { points: m })?;
    Ok(RateEstimate {
        rate: fit.slope.exp(),
        floor,
        fit_window: (0, m - 1),
        r_squared: fit.r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_geometric_sequence() {
        let mut e: Vec<f64> = (0..5).map(|t| (-(t as f64)).exp()).collect();
        e.extend(std::iter::repeat_n(1e-9, 20));
        let r = estimate_rate_from_errors(&e, &RateFitSettings::default()).unwrap();
        assert_relative_eq!(r.rate, (-1.0f64).exp(), epsilon = 1e-6);
        assert_eq!(r.fit_window, (0, 4));
    }

    #[test]
    fn flat_errors_have_no_decay_window() {
        let e = vec![0.3; 30];
        let err = estimate_rate_from_errors(&e, &RateFitSettings::default()).unwrap_err();
        assert!(matches!(err, Error::TooFewPoints { points: 0 }));
    }

    #[test]
    fn short_input_is_rejected() {
        assert!(estimate_rate_from_errors(&[1.0, 0.5, 0.25], &RateFitSettings::default()).is_err());
    }

    #[test]
    fn geometric_plus_floor_recovers_kappa() {
        for kappa in [0.3, 0.5, 0.8] {
            let e: Vec<f64> = (0..200).map(|t| kappa_pow(kappa, t) + 1e-4).collect();
            let r = estimate_rate_from_errors(&e, &RateFitSettings::default()).unwrap();
            assert!((r.rate - kappa).abs() < 0.02, "kappa {kappa}: got {}", r.rate);
        }
    }

    fn kappa_pow(k: f64, t: usize) -> f64 {
        k.powi(t as i32)
    }
}
