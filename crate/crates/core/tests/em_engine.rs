use em_rates::em::{
    estimate_rate_from_errors, estimate_rate_to_limit, run_em, EmSettings, RateFitSettings, StopReason,
};
use em_rates::{Dataset, Error, ModelKind, ModelSpec};
use nalgebra::DVector;
use proptest::prelude::*;

fn run_to_fixed_point(m: &ModelSpec, d: &Dataset, start: &DVector<f64>) -> DVector<f64> {
    run_em(m, d, start, &EmSettings { max_iters: 5000, param_tol: 0.0 })
        .unwrap()
        .last()
        .clone()
}

#[test]
fn fixed_point_start_stops_immediately() {
    let m = ModelSpec::with_snr(ModelKind::Gmm, 2, 2.0, 1.0, 0.0).unwrap();
    let d = Dataset::generate(&m, 400, 1).unwrap();
    let fixed = run_to_fixed_point(&m, &d, m.theta_star());
    let traj = run_em(&m, &d, &fixed, &EmSettings { max_iters: 50, param_tol: 0.0 }).unwrap();
    assert_eq!(traj.stopped_reason, StopReason::ParamTol);
    assert!(traj.iterates.iter().all(|t| *t == fixed));
}

#[test]
fn low_snr_single_run_decays_to_a_plateau() {
    let m = ModelSpec::with_snr(ModelKind::Gmm, 5, 1.0, 1.0, 0.0).unwrap();
    let d = Dataset::generate(&m, 300, 2).unwrap();
    let theta0 = m.theta_star() + DVector::from_element(5, 0.2 / 5f64.sqrt());
    let traj = run_em(&m, &d, &theta0, &EmSettings { max_iters: 1000, param_tol: 1e-12 }).unwrap();
    let fit = estimate_rate_to_limit(&traj, 1e-8).unwrap();
    assert!(fit.rate < 1.0 && fit.r_squared > 0.9, "{fit:?}");
    // The plateau is the run's limit, a statistical distance away from θ*.
    assert!(traj.final_error() > 0.0);
}

#[test]
fn start_at_truth_stays_within_the_floor() {
    let m = ModelSpec::with_snr(ModelKind::Gmm, 3, 2.0, 1.0, 0.0).unwrap();
    let d = Dataset::generate(&m, 100_000, 3).unwrap();
    let traj = run_em(&m, &d, m.theta_star(), &EmSettings::default()).unwrap();
    let floor = traj.final_error();
    // The floor is O(√(p/n)) and the whole run sits within a small multiple of it.
    assert!(floor < 5.0 * (3.0f64 / 100_000.0).sqrt());
    assert!(traj.max_excursion() <= 1.5 * floor + 1e-12, "{} vs {floor}", traj.max_excursion());
}

#[test]
fn rate_fit_reference_cases() {
    let mut e: Vec<f64> = (0..5).map(|t| (-(t as f64)).exp()).collect();
    e.extend([1e-12; 20]);
    let r = estimate_rate_from_errors(&e, &RateFitSettings::default()).unwrap();
    assert!((r.rate - 0.367_879).abs() < 1e-6);

    let flat = vec![0.2; 40];
    assert!(matches!(
        estimate_rate_from_errors(&flat, &RateFitSettings::default()),
        Err(Error::TooFewPoints { .. })
    ));

    let e: Vec<f64> = (0..100).map(|t| 0.5f64.powi(t) + 1e-4).collect();
    let r = estimate_rate_from_errors(&e, &RateFitSettings::default()).unwrap();
    assert!((0.48..=0.52).contains(&r.rate), "{}", r.rate);
}

#[test]
fn contraction_regime_errors_shrink_before_plateau() {
    let m = ModelSpec::with_snr(ModelKind::Gmm, 3, 2.0, 1.0, 0.0).unwrap();
    let d = Dataset::generate(&m, 10_000, 4).unwrap();
    let u = DVector::from_vec(vec![1.0, -1.0, 0.5]).normalize();
    let theta0 = m.theta_star() + u * (m.theta_star().norm() / 4.0);
    let traj = run_em(&m, &d, &theta0, &EmSettings::default()).unwrap();
    let knee = 3.0 * traj.final_error();
    let pre: Vec<f64> = traj.errors.iter().copied().take_while(|&e| e > knee).collect();
    assert!(pre.len() >= 2);
    for t in 0..pre.len() - 1 {
        assert!(traj.errors[t + 1] < traj.errors[t], "step {t}");
    }
}

#[test]
fn wrong_dimension_and_family_are_rejected() {
    let m = ModelSpec::with_snr(ModelKind::Gmm, 2, 2.0, 1.0, 0.0).unwrap();
    let d = Dataset::generate(&m, 10, 5).unwrap();
    assert!(matches!(
        run_em(&m, &d, &DVector::zeros(3), &EmSettings::default()),
        Err(Error::DimensionMismatch { .. })
    ));
    let other = ModelSpec::with_snr(ModelKind::Mlr, 2, 2.0, 1.0, 0.0).unwrap();
    assert!(run_em(&other, &d, &DVector::zeros(2), &EmSettings::default()).is_err());
}

#[test]
fn singular_mlr_system_reports_iteration() {
    // Every covariate is zero, so the second-moment matrix vanishes.
    let m = ModelSpec::mlr(DVector::from_vec(vec![1.0, 1.0]), 1.0).unwrap();
    let samples = vec![
        em_rates::Sample::Mlr { y: 1.0, x: DVector::zeros(2) },
        em_rates::Sample::Mlr { y: -1.0, x: DVector::zeros(2) },
    ];
    let d = Dataset::from_samples(&m, &samples, 0).unwrap();
    let err = run_em(&m, &d, &DVector::from_vec(vec![0.5, 0.5]), &EmSettings::default()).unwrap_err();
    assert!(matches!(err, Error::SingularSystem { iteration: Some(0), .. }), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn runs_are_bit_identical(seed: u64, kind in prop_oneof![Just(ModelKind::Gmm), Just(ModelKind::Mlr), Just(ModelKind::Rmc)]) {
        let eps = if kind == ModelKind::Rmc { 0.2 } else { 0.0 };
        let m = ModelSpec::with_snr(kind, 3, 2.0, 1.0, eps).unwrap();
        let d = Dataset::generate(&m, 300, seed).unwrap();
        let theta0 = m.theta_star() + DVector::from_element(3, 0.3);
        let a = run_em(&m, &d, &theta0, &EmSettings::default()).unwrap();
        let b = run_em(&m, &d, &theta0, &EmSettings::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn likelihood_never_decreases(seed: u64, kind in prop_oneof![Just(ModelKind::Gmm), Just(ModelKind::Mlr), Just(ModelKind::Rmc)]) {
        let eps = if kind == ModelKind::Rmc { 0.3 } else { 0.0 };
        let m = ModelSpec::with_snr(kind, 2, 1.0, 1.0, eps).unwrap();
        let d = Dataset::generate(&m, 200, seed).unwrap();
        let theta0 = m.theta_star() + DVector::from_element(2, -0.4);
        let t = run_em(&m, &d, &theta0, &EmSettings::default()).unwrap();
        prop_assert!(t.min_loglik_increment() >= -1e-10);
        prop_assert!(t.q_gains.iter().all(|&g| g >= -1e-10));
    }

    #[test]
    fn geometric_rates_are_recovered(kappa in 0.2f64..0.9, e0 in 0.1f64..10.0) {
        let e: Vec<f64> = (0..400).map(|t| e0 * kappa.powi(t) + 1e-4 * e0).collect();
        let r = estimate_rate_from_errors(&e, &RateFitSettings::default()).unwrap();
        prop_assert!((r.rate - kappa).abs() < 0.02, "{} vs {}", r.rate, kappa);
    }
}
