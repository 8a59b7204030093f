use approx::assert_relative_eq;
use em_rates::numeric::{logistic, mean, sample_std};
use em_rates::{Dataset, ModelKind, ModelSpec, Sample};
use nalgebra::DVector;
use proptest::prelude::*;

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_vec(v.to_vec())
}

#[test]
fn gmm_zero_mean_when_theta_star_is_zero() {
    let m = ModelSpec::gmm(dv(&[0.0]), 1.0).unwrap();
    let d = Dataset::generate(&m, 1_000_000, 11).unwrap();
    let ys: Vec<f64> = d.samples().map(|s| match s {
        em_rates::SampleRef::Gmm { y } => y[0],
        _ => unreachable!(),
    }).collect();
    let se = sample_std(&ys) / (ys.len() as f64).sqrt();
    assert!(mean(&ys).abs() < 4.0 * se);
}

#[test]
fn gmm_covariance_matches_model() {
    let m = ModelSpec::gmm(dv(&[1.0, -0.5]), 0.8).unwrap();
    let n = 1_000_000;
    let d = Dataset::generate(&m, n, 12).unwrap();
    let ts = m.theta_star();
    for i in 0..2 {
        for j in 0..2 {
            let prods: Vec<f64> = d.samples().map(|s| match s {
                em_rates::SampleRef::Gmm { y } => y[i] * y[j],
                _ => unreachable!(),
            }).collect();
            let target = if i == j { 0.64 } else { 0.0 } + ts[i] * ts[j];
            let se = sample_std(&prods) / (n as f64).sqrt();
            assert!((mean(&prods) - target).abs() < 5.0 * se, "entry ({i},{j})");
        }
    }
}

#[test]
fn rmc_without_missingness_observes_everything() {
    let m = ModelSpec::rmc(dv(&[1.0, 2.0, 0.5]), 1.0, 0.0).unwrap();
    let d = Dataset::generate(&m, 2000, 13).unwrap();
    assert!(d.samples().all(|s| match s {
        em_rates::SampleRef::Rmc { mask, .. } => mask.iter().all(|&b| b),
        _ => false,
    }));
}

#[test]
fn rmc_pattern_frequency() {
    let m = ModelSpec::rmc(dv(&[1.0, 1.0]), 1.0, 0.25).unwrap();
    let n = 1_000_000;
    let d = Dataset::generate(&m, n, 14).unwrap();
    let hits = d
        .samples()
        .filter(|s| matches!(s, em_rates::SampleRef::Rmc { mask, .. } if mask[..] == [true, false]))
        .count() as f64;
    let psi = 0.25 * 0.75;
    let se = (psi * (1.0 - psi) / n as f64).sqrt();
    assert!((hits / n as f64 - psi).abs() < 4.0 * se);
}

#[test]
fn rmc_missing_coordinates_are_zeroed() {
    let m = ModelSpec::rmc(dv(&[1.0, 1.0, 1.0]), 1.0, 0.4).unwrap();
    let d = Dataset::generate(&m, 500, 15).unwrap();
    for s in d.samples() {
        if let em_rates::SampleRef::Rmc { x_obs, mask, .. } = s {
            for (x, o) in x_obs.iter().zip(mask) {
                if !o {
                    assert_eq!(*x, 0.0);
                }
            }
        }
    }
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(ModelSpec::gmm(dv(&[1.0]), 0.0).is_err());
    assert!(ModelSpec::gmm(DVector::zeros(0), 1.0).is_err());
    assert!(ModelSpec::rmc(dv(&[1.0]), 1.0, 1.0).is_err());
    assert!(ModelSpec::new(ModelKind::Mlr, dv(&[1.0]), 1.0, 0.1).is_err());
    assert!(Dataset::generate(&ModelSpec::gmm(dv(&[1.0]), 1.0).unwrap(), 0, 1).is_err());
}

#[test]
fn derived_quantities() {
    let m = ModelSpec::gmm(dv(&[3.0, 4.0]), 2.0).unwrap();
    assert_relative_eq!(m.snr(), 2.5);
    assert_relative_eq!(m.scale_k(), 2.0 * 3.5);
}

#[test]
fn gmm_q_value_at_origin() {
    let m = ModelSpec::gmm(dv(&[1.0]), 1.0).unwrap();
    let s = Sample::Gmm { y: dv(&[0.0]) };
    let q = m.q_value(&dv(&[0.0]), &dv(&[0.0]), s.as_ref());
    assert_relative_eq!(q, -(2.0 * (2.0 * std::f64::consts::PI).sqrt()).ln(), epsilon = 1e-15);
}

#[test]
fn mlr_q_value_hand_oracle() {
    let m = ModelSpec::mlr(dv(&[1.0]), 1.0).unwrap();
    let s = Sample::Mlr { y: 1.0, x: dv(&[1.0]) };
    let w = 1.0 / (1.0 + (-2.0f64).exp());
    assert_relative_eq!(w, 0.880797, epsilon = 1e-6);
    let expected = -0.5 * (w * 0.25 + (1.0 - w) * 2.25) - 0.5 - (4.0 * std::f64::consts::PI).ln();
    let q = m.q_value(&dv(&[0.5]), &dv(&[1.0]), s.as_ref());
    assert_relative_eq!(q, expected, epsilon = 1e-14);
}

#[test]
fn gmm_gradient_with_orthogonal_data() {
    let m = ModelSpec::gmm(dv(&[1.0, 0.0]), 1.5).unwrap();
    let s = Sample::Gmm { y: dv(&[0.0, 2.0]) };
    let tp = dv(&[0.3, -0.7]);
    let g = m.q_gradient(&tp, &dv(&[1.0, 0.0]), s.as_ref());
    assert_relative_eq!(g, -&tp / 2.25, epsilon = 1e-15);
}

#[test]
fn mlr_gradient_vanishes_at_origin() {
    let m = ModelSpec::mlr(dv(&[1.0, 1.0]), 1.0).unwrap();
    let s = Sample::Mlr { y: 0.7, x: dv(&[1.0, -2.0]) };
    let z = dv(&[0.0, 0.0]);
    assert_eq!(m.q_gradient(&z, &z, s.as_ref()), z);
}

#[test]
fn gmm_m_step_hand_oracle() {
    let m = ModelSpec::gmm(dv(&[1.0]), 1.0).unwrap();
    let samples: Vec<Sample> = [2.0, -2.0, 1.0].iter().map(|&y| Sample::Gmm { y: dv(&[y]) }).collect();
    let d = Dataset::from_samples(&m, &samples, 0).unwrap();
    let out = m.m_step(&dv(&[1.0]), &d).unwrap();
    let expected = (2.0f64.tanh() * 2.0 + (-2.0f64).tanh() * -2.0 + 1.0f64.tanh()) / 3.0;
    assert_relative_eq!(out[0], expected, epsilon = 1e-15);
}

#[test]
fn m_step_at_origin_is_origin() {
    for kind in [ModelKind::Gmm, ModelKind::Mlr] {
        let m = ModelSpec::with_snr(kind, 3, 2.0, 1.0, 0.0).unwrap();
        let d = Dataset::generate(&m, 200, 3).unwrap();
        let out = m.m_step(&DVector::zeros(3), &d).unwrap();
        assert!(out.norm() < 1e-15, "{kind}: {out}");
    }
}

#[test]
fn rmc_conditional_moments_hand_oracle() {
    let m = ModelSpec::rmc(dv(&[1.0, 1.0]), 1.0, 0.3).unwrap();
    let s = Sample::rmc(3.0, &[2.0, 0.0], &[true, false]);
    let cm = m.rmc_conditional_moments(&dv(&[1.0, 1.0]), s.as_ref()).unwrap();
    assert_relative_eq!(cm.mu, dv(&[2.0, 0.5]), epsilon = 1e-15);
    assert_relative_eq!(cm.a_matrix[(0, 0)], 0.0);
    assert_relative_eq!(cm.a_matrix[(1, 1)], 0.5, epsilon = 1e-15);
    assert_relative_eq!(cm.a_matrix[(0, 1)], 0.0);
    assert_relative_eq!(cm.sigma_matrix, &cm.mu * cm.mu.transpose() + &cm.a_matrix, epsilon = 1e-15);
}

#[test]
fn rmc_conditional_moments_edge_masks() {
    let m = ModelSpec::rmc(dv(&[1.0, -1.0]), 0.5, 0.3).unwrap();
    let theta = dv(&[0.8, -0.6]);
    let full = Sample::rmc(1.0, &[0.3, 0.4], &[true, true]);
    let cm = m.rmc_conditional_moments(&theta, full.as_ref()).unwrap();
    let x = dv(&[0.3, 0.4]);
    assert_eq!(cm.mu, x);
    assert_eq!(cm.a_matrix.norm(), 0.0);
    assert_relative_eq!(cm.sigma_matrix, &x * x.transpose(), epsilon = 1e-15);

    let none = Sample::rmc(1.5, &[0.3, 0.4], &[false, false]);
    let cm = m.rmc_conditional_moments(&theta, none.as_ref()).unwrap();
    let expected = &theta * (1.5 / (0.25 + theta.norm_squared()));
    assert_relative_eq!(cm.mu, expected, epsilon = 1e-15);
}

#[test]
fn log_density_hand_oracles() {
    let m = ModelSpec::gmm(dv(&[1.0]), 1.0).unwrap();
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let s0 = Sample::Gmm { y: dv(&[0.0]) };
    assert_relative_eq!(m.log_density(&dv(&[0.0]), s0.as_ref()), phi(0.0).ln(), epsilon = 1e-15);
    let s1 = Sample::Gmm { y: dv(&[1.0]) };
    let expected = (0.5 * phi(0.0) + 0.5 * phi(2.0)).ln();
    assert_relative_eq!(m.log_density(&dv(&[1.0]), s1.as_ref()), expected, epsilon = 1e-14);
}

#[test]
fn gmm_crv_ignores_theta_and_data() {
    let m = ModelSpec::gmm(dv(&[1.0, 2.0]), 1.3).unwrap();
    let tp = dv(&[0.4, 2.5]);
    let expected = -(&tp - m.theta_star()).norm_squared() / (2.0 * 1.69);
    for (y, th) in [([0.0, 0.0], [1.0, 1.0]), ([5.0, -3.0], [-2.0, 0.1])] {
        let s = Sample::Gmm { y: dv(&y) };
        let q = m.per_sample_quantities(&tp, &dv(&th), s.as_ref());
        assert_relative_eq!(q.crv, expected, epsilon = 1e-15);
    }
}

#[test]
fn sev_is_centred_for_gmm() {
    let m = ModelSpec::gmm(dv(&[1.0, 0.5]), 1.0).unwrap();
    let n = 1_000_000;
    let d = Dataset::generate(&m, n, 16).unwrap();
    let ts = m.theta_star().clone();
    for j in 0..2 {
        let v: Vec<f64> = d
            .samples()
            .map(|s| m.per_sample_quantities(&ts, &ts, s).sev[j])
            .collect();
        let se = sample_std(&v) / (n as f64).sqrt();
        assert!(mean(&v).abs() <= 5.0 * se, "coordinate {j}");
    }
}

#[test]
fn logistic_matches_reference_in_both_tails() {
    assert_relative_eq!(logistic(2.0), 0.880_797_077_977_882_3, epsilon = 1e-15);
    assert!(logistic(-800.0) >= 0.0 && logistic(800.0) == 1.0);
}

fn kind_strategy() -> impl Strategy<Value = ModelKind> {
    prop_oneof![Just(ModelKind::Gmm), Just(ModelKind::Mlr), Just(ModelKind::Rmc)]
}

fn model_and_data(kind: ModelKind, p: usize, snr: f64, seed: u64, n: usize) -> (ModelSpec, Dataset) {
    let eps = if kind == ModelKind::Rmc { 0.2 } else { 0.0 };
    let m = ModelSpec::with_snr(kind, p, snr, 1.0, eps).unwrap();
    let d = Dataset::generate(&m, n, seed).unwrap();
    (m, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn m_step_is_a_stationary_point(kind in kind_strategy(), p in 1usize..5, snr in 0.5f64..4.0, seed: u64, off in -1.0f64..1.0) {
        let (m, d) = model_and_data(kind, p, snr, seed, 300);
        let theta = m.theta_star() + DVector::from_element(p, off);
        let out = m.m_step(&theta, &d).unwrap();
        let g = m.q_n_gradient(&out, &theta, &d);
        prop_assert!(g.norm() < 1e-8 * (1.0 + out.norm()), "gradient {}", g.norm());
    }

    #[test]
    fn em_step_ascends_q_and_likelihood(kind in kind_strategy(), p in 1usize..5, snr in 0.5f64..4.0, seed: u64, off in -1.0f64..1.0) {
        let (m, d) = model_and_data(kind, p, snr, seed, 300);
        let theta = m.theta_star() + DVector::from_element(p, off);
        let next = m.m_step(&theta, &d).unwrap();
        prop_assert!(m.q_n_gain(&next, &theta, &d) >= -1e-10);
        prop_assert!(m.log_likelihood(&next, &d) >= m.log_likelihood(&theta, &d) - 1e-10);
    }

    #[test]
    fn grv_vanishes_at_truth(kind in kind_strategy(), p in 1usize..5, seed: u64) {
        let (m, d) = model_and_data(kind, p, 2.0, seed, 20);
        let ts = m.theta_star().clone();
        for s in d.samples() {
            let g = m.per_sample_quantities(&ts, &ts, s).grv;
            if kind == ModelKind::Rmc {
                prop_assert!(g.norm() <= 1e-12);
            } else {
                prop_assert_eq!(g.norm(), 0.0);
            }
        }
    }

    #[test]
    fn crv_is_nonpositive(kind in kind_strategy(), p in 1usize..5, seed: u64, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let (m, d) = model_and_data(kind, p, 2.0, seed, 10);
        let tp = m.theta_star() + DVector::from_element(p, a);
        let th = m.theta_star() + DVector::from_element(p, b);
        for s in d.samples() {
            prop_assert!(m.per_sample_quantities(&tp, &th, s).crv <= 1e-14);
        }
    }

    #[test]
    fn finite_difference_gradient(kind in kind_strategy(), p in 1usize..5, seed: u64, a in -1.5f64..1.5, b in -1.5f64..1.5) {
        let (m, d) = model_and_data(kind, p, 1.5, seed, 1);
        let s = d.sample(0);
        let tp = m.theta_star() + DVector::from_fn(p, |i, _| a * (i as f64 + 1.0) / p as f64);
        let th = m.theta_star() + DVector::from_element(p, b);
        let g = m.q_gradient(&tp, &th, s);
        let fd = DVector::from_fn(p, |j, _| {
            let h = 1e-6;
            let (mut u, mut v) = (tp.clone(), tp.clone());
            u[j] += h;
            v[j] -= h;
            (m.q_value(&u, &th, s) - m.q_value(&v, &th, s)) / (2.0 * h)
        });
        prop_assert!((&fd - &g).norm() / g.norm().max(1.0) < 1e-5);
    }

    #[test]
    fn generation_is_deterministic(kind in kind_strategy(), p in 1usize..4, seed: u64) {
        let (_, a) = model_and_data(kind, p, 2.0, seed, 50);
        let (_, b) = model_and_data(kind, p, 2.0, seed, 50);
        prop_assert_eq!(a, b);
    }
}
