//! Replicate studies: rate fluctuation at fixed n, rate stabilization
//! across n, and consistency of the final estimate.
//!
//! Replicate `i` at sample size `n` draws its dataset with seed
//! `derive_seed(master_seed, [n, i])`, so adding replicates or sample sizes
//! never changes existing records.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{estimate_rate_from_errors, estimate_rate_to_limit, run_em, EmSettings, EmTrajectory, RateEstimate, RateFitSettings};
use crate::error::{Error, Result};
use crate::model::{Dataset, ModelSpec};
use crate::numeric::{fit_line, mean, quantile, sample_std, LineFit};
use crate::oracle::{
    closed_form_bounds, epsilon_bounds, finite_sample_params, mc_population_grv_bound, BoundConstants,
    ContractionParams, PopulationEstimate,
};
use crate::rates::{compute_empirical_rates, verify_contraction_inequality, BallSpec, KappaCeiling};
use crate::rng::{derive_seed, namespace, Stream};
use crate::search::SearchBudget;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    RateFluctuation,
    RateStabilization,
    Consistency,
}

/// How the initial point is chosen. Both variants are shared by every replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Theta0Policy {
    /// `θ⁰ = θ* + offset`.
    FixedOffset { offset: Vec<f64> },
    /// `θ⁰ = θ* + radius·u`, `u` a unit direction drawn from the master seed.
    /// The radius defaults to `r/2`.
    RandomInBall { radius: Option<f64> },
}

impl Default for Theta0Policy {
    fn default() -> Self {
        Theta0Policy::RandomInBall { radius: None }
    }
}

/// What the realized rate is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateReference {
    /// Distances `‖θᵗ − θ*‖` with plateau removal.
    Truth,
    /// Distances `‖θᵗ − θ̂‖` to the run's own limit.
    #[default]
    Limit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallConfig {
    pub r: f64,
    /// Omitted means `R = +∞`.
    pub r_outer: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CeilingSource {
    /// `κ̄ₙ = +∞`, so `K̄ₙ = Γ̄ₙ/V̄ₙ`.
    #[default]
    None,
    /// Closed-form `(γ, ν)` plus the ε-bounds.
    ClosedForm,
    /// Population-proxy `(γ̄, ν̄)` plus the ε-bounds.
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CeilingConfig {
    pub source: CeilingSource,
    pub delta: f64,
    pub constants: BoundConstants,
}

impl Default for CeilingConfig {
    fn default() -> Self {
        Self {
            source: CeilingSource::None,
            delta: 0.05,
            constants: BoundConstants::default(),
        }
    }
}

/// The large-n population proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub n_mc: usize,
    /// Also run EM on the proxy to get a population slope rate.
    #[serde(default = "yes")]
    pub run_em: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub study: StudyKind,
    pub model: ModelSpec,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    #[serde(default)]
    pub theta0: Theta0Policy,
    pub ball: BallConfig,
    #[serde(default)]
    pub em: EmSettings,
    #[serde(default)]
    pub rate_fit: RateFitSettings,
    #[serde(default)]
    pub rate_reference: RateReference,
    #[serde(default)]
    pub search: SearchBudget,
    #[serde(default = "yes")]
    pub compute_rates: bool,
    #[serde(default)]
    pub ceiling: CeilingConfig,
    #[serde(default)]
    pub population: Option<PopulationConfig>,
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.replicates < 2 {
            return bad(format!("replicates must be at least 2, got {}", self.replicates));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes[0] == 0 {
            return bad("sample_sizes must be nonempty with every n ≥ 1".into());
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sample_sizes must be strictly increasing".into());
        }
        match self.study {
            StudyKind::RateFluctuation if self.sample_sizes.len() != 1 => {
                return bad("the rate-fluctuation study takes a single sample size".into())
            }
            StudyKind::RateStabilization if self.sample_sizes.len() < 3 => {
                return bad("the rate-stabilization study needs at least 3 sample sizes".into())
            }
            StudyKind::Consistency => {
                let (lo, hi) = (self.sample_sizes[0], *self.sample_sizes.last().unwrap());
                if self.sample_sizes.len() < 4 || (hi as f64) < 100.0 * lo as f64 {
                    return bad("the consistency study needs at least 4 sample sizes spanning 2 decades".into());
                }
            }
            _ => {}
        }
        self.ball()?;
        self.em.validate()?;
        self.search.validate()?;
        self.ceiling.constants.validate()?;
        if self.ceiling.source == CeilingSource::MonteCarlo && self.population.is_none() {
            return bad("a monte-carlo ceiling needs a [population] section".into());
        }
        if let Theta0Policy::FixedOffset { offset } = &self.theta0 {
            if offset.len() != self.model.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.model.dim(),
                    got: offset.len(),
                });
            }
        }
        Ok(())
    }

    pub fn ball(&self) -> Result<BallSpec> {
        BallSpec::new(
            self.ball.r,
            self.ball.r_outer.unwrap_or(f64::INFINITY),
            self.model.theta_star(),
        )
    }

    pub fn theta0(&self) -> DVector<f64> {
        let ts = self.model.theta_star();
        match &self.theta0 {
            Theta0Policy::FixedOffset { offset } => ts + DVector::from_column_slice(offset),
            Theta0Policy::RandomInBall { radius } => {
                let radius = radius.unwrap_or(self.ball.r / 2.0);
                let seed = derive_seed(self.master_seed, &[namespace::INITIAL_DIRECTION]);
                let u = Stream::new(seed, 0).unit_vector(self.model.dim());
                ts + DVector::from_vec(u) * radius
            }
        }
    }

    pub fn replicate_seed(&self, n: usize, replicate: usize) -> u64 {
        derive_seed(self.master_seed, &[n as u64, replicate as u64])
    }
}

/// One `(n, replicate)` outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub iterations: usize,
    pub stopped_at_tol: bool,
    pub final_error: f64,
    pub rate: Option<f64>,
    pub rate_r_squared: Option<f64>,
    pub fit_last: Option<usize>,
    pub rate_floor: Option<f64>,
    /// Why the rate or the run is missing.
    pub skipped: Option<String>,
    pub gamma_bar_n: Option<f64>,
    pub v_bar_n: Option<f64>,
    pub e_bar_n: Option<f64>,
    pub k_bar_n: Option<f64>,
    pub kappa_n_ceiling: Option<f64>,
    pub floor_bound: Option<f64>,
    pub gamma_search_warning: Option<bool>,
    pub step_violations: Option<usize>,
    pub cumulative_violations: Option<usize>,
    pub exited_outer_ball: bool,
    pub min_loglik_increment: f64,
    pub min_q_gain: f64,
}

/// Error series of one run, for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySeries {
    pub n: usize,
    pub replicate: usize,
    pub errors: Vec<f64>,
    pub errors_to_limit: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub records: usize,
    /// Replicates without a rate (too few points, or a failed run).
    pub skipped: usize,
    pub rate_mean: Option<f64>,
    pub rate_std: Option<f64>,
    pub rate_iqr: Option<f64>,
    pub k_bar_mean: Option<f64>,
    pub k_bar_std: Option<f64>,
    pub k_bar_iqr: Option<f64>,
    pub final_error_mean: f64,
    pub final_error_std: f64,
    /// Fraction of replicates with `K̄ₙ` below the proxy `κ̄`.
    pub frac_k_bar_below_proxy: Option<f64>,
    /// Fraction of replicates whose slope rate beats the proxy EM's slope rate.
    pub frac_rate_below_proxy: Option<f64>,
}

/// Population-proxy results shared by all replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSummary {
    pub estimate: PopulationEstimate,
    pub kappa_bar: f64,
    pub proxy_em_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub rate_std_strictly_decreasing: Option<bool>,
    pub k_bar_std_strictly_decreasing: Option<bool>,
    /// Log-log fit of `std(K̄ₙ)` against n.
    pub k_bar_std_slope: Option<LineFitRecord>,
    pub rate_std_slope: Option<LineFitRecord>,
    /// Log-log fit of the mean final error against n.
    pub final_error_slope: Option<LineFitRecord>,
    /// `|mean K̄ₙ − κ̄_proxy|` per n.
    pub k_bar_proxy_gaps: Option<Vec<f64>>,
    /// Standard errors of the replicate mean of `K̄ₙ` per n.
    pub k_bar_mean_stderr: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFitRecord {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl From<LineFit> for LineFitRecord {
    fn from(f: LineFit) -> Self {
        Self {
            slope: f.slope,
            intercept: f.intercept,
            r_squared: f.r_squared,
        }
    }
}

/// Regime status of the model and ball against the closed-form bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeStatus {
    pub closed_form: Option<ContractionParams>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub theta0: Vec<f64>,
    pub regime: RegimeStatus,
    pub population: Option<PopulationSummary>,
    pub records: Vec<ReplicateRecord>,
    pub trajectories: Vec<TrajectorySeries>,
    pub aggregates: Vec<Aggregate>,
    pub summary: StudySummary,
}

fn regime_status(cfg: &ExperimentConfig, ball: &BallSpec) -> RegimeStatus {
    match closed_form_bounds(&cfg.model, ball, &cfg.ceiling.constants) {
        Ok(p) => {
            let note = if p.is_contraction() {
                format!("closed-form κ = {:.6} < 1 (constants are bound-shape only)", p.kappa)
            } else {
                format!("closed-form κ = {:.6} ≥ 1: outside the guaranteed contraction regime", p.kappa)
            };
            RegimeStatus {
                closed_form: Some(p),
                note,
            }
        }
        Err(e) => RegimeStatus {
            closed_form: None,
            note: e.to_string(),
        },
    }
}

fn measure_rate(cfg: &ExperimentConfig, traj: &EmTrajectory) -> Result<RateEstimate> {
    match cfg.rate_reference {
        RateReference::Truth => estimate_rate_from_errors(&traj.errors, &cfg.rate_fit),
        RateReference::Limit => estimate_rate_to_limit(traj, cfg.rate_fit.limit_cutoff),
    }
}

fn ceiling_for(
    cfg: &ExperimentConfig,
    ball: &BallSpec,
    n: usize,
    regime: &RegimeStatus,
    population: Option<&PopulationSummary>,
) -> Result<KappaCeiling> {
    let base = match cfg.ceiling.source {
        CeilingSource::None => return Ok(KappaCeiling::none()),
        CeilingSource::ClosedForm => match &regime.closed_form {
            Some(p) => (p.clone(), "closed-form bound + ε-bounds"),
            None => {
                return Ok(KappaCeiling {
                    value: f64::INFINITY,
                    provenance: format!("none (closed form unavailable: {})", regime.note),
                })
            }
        },
        CeilingSource::MonteCarlo => (
            population.expect("validated").estimate.params.clone(),
            "population proxy + ε-bounds",
        ),
    };
    let eps = epsilon_bounds(&cfg.model, cfg.ceiling.delta, ball, n, &cfg.ceiling.constants)?;
    Ok(KappaCeiling {
        value: finite_sample_params(&base.0, &eps).kappa_n,
        provenance: base.1.into(),
    })
}

/// Runs one replicate on the dataset with the given seed.
pub fn run_replicate(
    cfg: &ExperimentConfig,
    n: usize,
    replicate: usize,
    seed: u64,
    theta0: &DVector<f64>,
    ceiling: &KappaCeiling,
) -> Result<(ReplicateRecord, TrajectorySeries)> {
    let ball = cfg.ball()?;
    let data = Dataset::generate(&cfg.model, n, seed)?;
    let mut rec = ReplicateRecord {
        n,
        replicate,
        seed,
        iterations: 0,
        stopped_at_tol: false,
        final_error: f64::NAN,
        rate: None,
        rate_r_squared: None,
        fit_last: None,
        rate_floor: None,
        skipped: None,
        gamma_bar_n: None,
        v_bar_n: None,
        e_bar_n: None,
        k_bar_n: None,
        kappa_n_ceiling: None,
        floor_bound: None,
        gamma_search_warning: None,
        step_violations: None,
        cumulative_violations: None,
        exited_outer_ball: false,
        min_loglik_increment: f64::NAN,
        min_q_gain: f64::NAN,
    };
    let mut series = TrajectorySeries {
        n,
        replicate,
        errors: Vec::new(),
        errors_to_limit: Vec::new(),
    };
    let traj = match run_em(&cfg.model, &data, theta0, &cfg.em) {
        Ok(t) => t,
        Err(e) if e.is_numerical() => {
            rec.skipped = Some(e.to_string());
            return Ok((rec, series));
        }
        Err(e) => return Err(e),
    };
    rec.iterations = traj.len() - 1;
    rec.stopped_at_tol = traj.stopped_reason == crate::em::StopReason::ParamTol;
    rec.final_error = traj.final_error();
    rec.exited_outer_ball = traj.exited_ball(ball.r_outer);
    rec.min_loglik_increment = traj.min_loglik_increment();
    rec.min_q_gain = traj.q_gains.iter().copied().fold(f64::INFINITY, f64::min);
    match measure_rate(cfg, &traj) {
        Ok(r) => {
            rec.rate = Some(r.rate);
            rec.rate_r_squared = Some(r.r_squared);
            rec.fit_last = Some(r.fit_window.1);
            rec.rate_floor = Some(r.floor);
        }
        Err(e @ Error::TooFewPoints { .. }) => rec.skipped = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    if cfg.compute_rates {
        let rates = compute_empirical_rates(&cfg.model, &data, &ball, &cfg.search, ceiling)?;
        let audit = verify_contraction_inequality(&traj, &rates);
        rec.gamma_bar_n = Some(rates.gamma_bar_n);
        rec.v_bar_n = Some(rates.v_bar_n);
        rec.e_bar_n = Some(rates.e_bar_n);
        rec.k_bar_n = Some(rates.k_bar_n);
        rec.kappa_n_ceiling = Some(rates.kappa_n_ceiling);
        rec.floor_bound = rates.floor_bound;
        rec.gamma_search_warning = Some(rates.gamma_search.disagreement_warning);
        rec.step_violations = Some(audit.per_step_violations);
        rec.cumulative_violations = audit.cumulative_violations;
    }
    series.errors_to_limit = traj.errors_to_limit();
    series.errors = traj.errors;
    Ok((rec, series))
}

fn population_summary(cfg: &ExperimentConfig, ball: &BallSpec, theta0: &DVector<f64>) -> Result<Option<PopulationSummary>> {
    let Some(pc) = &cfg.population else {
        return Ok(None);
    };
    let estimate = mc_population_grv_bound(&cfg.model, ball, pc.n_mc, &cfg.search, cfg.master_seed)?;
    let proxy_em_rate = if pc.run_em {
        let proxy = Dataset::generate(&cfg.model, pc.n_mc, estimate.proxy_seed)?;
        let traj = run_em(&cfg.model, &proxy, theta0, &cfg.em)?;
        measure_rate(cfg, &traj).ok().map(|r| r.rate)
    } else {
        None
    };
    Ok(Some(PopulationSummary {
        kappa_bar: estimate.params.kappa,
        estimate,
        proxy_em_rate,
    }))
}

fn opt_stats(values: &[f64]) -> (Option<f64>, Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None, None);
    }
    let iqr = quantile(values, 0.75) - quantile(values, 0.25);
    (Some(mean(values)), Some(sample_std(values)), Some(iqr))
}

/// Per-n aggregates recomputed from the records.
pub fn aggregate(records: &[ReplicateRecord], sample_sizes: &[usize], population: Option<&PopulationSummary>) -> Vec<Aggregate> {
    sample_sizes
        .iter()
        .map(|&n| {
            let recs: Vec<&ReplicateRecord> = records.iter().filter(|r| r.n == n).collect();
            let rates: Vec<f64> = recs.iter().filter_map(|r| r.rate).collect();
            let kbars: Vec<f64> = recs.iter().filter_map(|r| r.k_bar_n).collect();
            let finals: Vec<f64> = recs
                .iter()
                .map(|r| r.final_error)
                .filter(|e| e.is_finite())
                .collect();
            let (rate_mean, rate_std, rate_iqr) = opt_stats(&rates);
            let (k_bar_mean, k_bar_std, k_bar_iqr) = opt_stats(&kbars);
            let frac = |vals: &[f64], bound: Option<f64>| {
                bound
                    .filter(|_| !vals.is_empty())
                    .map(|b| vals.iter().filter(|&&v| v < b).count() as f64 / vals.len() as f64)
            };
            Aggregate {
                n,
                records: recs.len(),
                skipped: recs.len() - rates.len(),
                rate_mean,
                rate_std,
                rate_iqr,
                k_bar_mean,
                k_bar_std,
                k_bar_iqr,
                final_error_mean: if finals.is_empty() { f64::NAN } else { mean(&finals) },
                final_error_std: sample_std(&finals),
                frac_k_bar_below_proxy: frac(&kbars, population.map(|p| p.kappa_bar)),
                frac_rate_below_proxy: frac(&rates, population.and_then(|p| p.proxy_em_rate)),
            }
        })
        .collect()
}

fn loglog(ns: &[usize], ys: &[Option<f64>]) -> Option<LineFitRecord> {
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(ys)
        .filter_map(|(&n, y)| y.filter(|v| *v > 0.0).map(|v| ((n as f64).ln(), v.ln())))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    fit_line(&xs, &ys).map(Into::into)
}

fn strictly_decreasing(vals: &[Option<f64>]) -> Option<bool> {
    let v: Option<Vec<f64>> = vals.iter().copied().collect();
    v.filter(|v| v.len() >= 2).map(|v| v.windows(2).all(|w| w[1] < w[0]))
}

fn summarize(cfg: &ExperimentConfig, aggs: &[Aggregate], population: Option<&PopulationSummary>) -> StudySummary {
    let ns: Vec<usize> = aggs.iter().map(|a| a.n).collect();
    let rate_std: Vec<Option<f64>> = aggs.iter().map(|a| a.rate_std).collect();
    let k_std: Vec<Option<f64>> = aggs.iter().map(|a| a.k_bar_std).collect();
    let multi = ns.len() >= 2;
    let finals: Vec<Option<f64>> = aggs.iter().map(|a| Some(a.final_error_mean)).collect();
    let gaps = population.and_then(|p| {
        aggs.iter()
            .map(|a| a.k_bar_mean.map(|m| (m - p.kappa_bar).abs()))
            .collect::<Option<Vec<f64>>>()
    });
    let stderr = aggs
        .iter()
        .map(|a| {
            let count = a.records as f64;
            a.k_bar_std.map(|s| s / count.sqrt())
        })
        .collect::<Option<Vec<f64>>>();
    StudySummary {
        rate_std_strictly_decreasing: if multi { strictly_decreasing(&rate_std) } else { None },
        k_bar_std_strictly_decreasing: if multi && cfg.compute_rates { strictly_decreasing(&k_std) } else { None },
        k_bar_std_slope: if multi { loglog(&ns, &k_std) } else { None },
        rate_std_slope: if multi { loglog(&ns, &rate_std) } else { None },
        final_error_slope: if multi { loglog(&ns, &finals) } else { None },
        k_bar_proxy_gaps: gaps,
        k_bar_mean_stderr: if cfg.compute_rates { stderr } else { None },
    }
}

/// Runs the configured study.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let ball = cfg.ball()?;
    let theta0 = cfg.theta0();
    let regime = regime_status(cfg, &ball);
    let population = population_summary(cfg, &ball, &theta0)?;
    let mut jobs = Vec::new();
    for &n in &cfg.sample_sizes {
        let ceiling = ceiling_for(cfg, &ball, n, &regime, population.as_ref())?;
        for i in 0..cfg.replicates {
            jobs.push((n, i, ceiling.clone()));
        }
    }
    // Collect preserves job order, so records come out sorted by (n, replicate).
    let outcomes: Vec<(ReplicateRecord, TrajectorySeries)> = jobs
        .par_iter()
        .map(|(n, i, ceiling)| run_replicate(cfg, *n, *i, cfg.replicate_seed(*n, *i), &theta0, ceiling))
        .collect::<Result<_>>()?;
    let (records, trajectories): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    let aggregates = aggregate(&records, &cfg.sample_sizes, population.as_ref());
    let summary = summarize(cfg, &aggregates, population.as_ref());
    Ok(ExperimentResult {
        config: cfg.clone(),
        theta0: theta0.as_slice().to_vec(),
        regime,
        population,
        records,
        trajectories,
        aggregates,
        summary,
    })
}

pub fn run_rate_fluctuation_study(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    expect_study(cfg, StudyKind::RateFluctuation)?;
    run_experiment(cfg)
}

pub fn run_rate_stabilization_study(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    expect_study(cfg, StudyKind::RateStabilization)?;
    run_experiment(cfg)
}

pub fn run_consistency_study(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    expect_study(cfg, StudyKind::Consistency)?;
    run_experiment(cfg)
}

fn expect_study(cfg: &ExperimentConfig, kind: StudyKind) -> Result<()> {
    if cfg.study != kind {
        return Err(Error::InvalidArgument(format!(
            "config describes a {:?} study, expected {kind:?}",
            cfg.study
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        ExperimentConfig {
            schema_version: 1,
            study: StudyKind::RateFluctuation,
            model: ModelSpec::with_snr(crate::model::ModelKind::Gmm, 2, 2.0, 1.0, 0.0).unwrap(),
            sample_sizes: vec![200],
            replicates: 3,
            theta0: Theta0Policy::default(),
            ball: BallConfig { r: 0.5, r_outer: None },
            em: EmSettings::default(),
            rate_fit: RateFitSettings::default(),
            rate_reference: RateReference::Limit,
            search: SearchBudget {
                directions: 8,
                radii: 3,
                refine_steps: 3,
            },
            compute_rates: true,
            ceiling: CeilingConfig::default(),
            population: None,
            master_seed: 42,
        }
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = base();
        c.replicates = 1;
        assert!(c.validate().is_err());
        let mut c = base();
        c.study = StudyKind::RateStabilization;
        c.sample_sizes = vec![100, 1000, 500];
        assert!(c.validate().is_err());
        let mut c = base();
        c.ceiling.source = CeilingSource::MonteCarlo;
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let c = base();
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
        let bad = format!("{text}\nsurprise = 1\n");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn theta0_is_half_radius_and_shared() {
        let c = base();
        let d = (c.theta0() - c.model.theta_star()).norm();
        assert!((d - 0.25).abs() < 1e-12);
        assert_eq!(c.theta0(), c.theta0());
    }

    #[test]
    fn identical_seeds_give_zero_spread() {
        let c = base();
        let t0 = c.theta0();
        let seed = c.replicate_seed(200, 0);
        let (a, _) = run_replicate(&c, 200, 0, seed, &t0, &KappaCeiling::none()).unwrap();
        let (b, _) = run_replicate(&c, 200, 1, seed, &t0, &KappaCeiling::none()).unwrap();
        assert_eq!(a.rate, b.rate);
        assert_eq!(a.k_bar_n, b.k_bar_n);
        let aggs = aggregate(&[a, b], &[200], None);
        assert_eq!(aggs[0].rate_std, Some(0.0));
    }

    #[test]
    fn experiment_is_deterministic_and_prefix_stable() {
        let c = base();
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.records, b.records);
        let mut more = base();
        more.replicates = 6;
        let m = run_experiment(&more).unwrap();
        assert_eq!(m.records[..3], a.records[..]);
        // Aggregates are recomputable from the records.
        assert_eq!(aggregate(&a.records, &c.sample_sizes, None), a.aggregates);
    }
}
