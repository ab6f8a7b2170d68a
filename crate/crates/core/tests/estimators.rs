mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;

use common::*;
use tatesens::design::{Family, Link};
use tatesens::estimation::{fit_glm_irls, fit_wls, lincom, residuals, IrlsControl, VcovKind, VcovRequest};
use tatesens::stats::Inference;
use tatesens::Error;

#[test]
fn wls_matches_explicit_normal_equations() {
    let mut r = rng(1);
    for case in 0..50 {
        let n = 20 + case * 3;
        let p = 2 + case % 7;
        let y: Vec<f64> = (0..n).map(|_| 3.0 * normal(&mut r)).collect();
        let d = random_design(&mut r, n, p, y.clone());
        let w: Vec<f64> = (0..n).map(|i| 0.2 + (i % 5) as f64).collect();
        let fit = fit_wls(&d, Some(&w), &VcovRequest::Auto).unwrap();
        let oracle = wls_oracle(&d.x, &y, &w);
        for j in 0..p {
            assert!(rel_err(fit.coefficients[j], oracle[j]) < 1e-8, "case {case} coef {j}");
        }
    }
}

#[test]
fn irls_matches_newton_on_exact_likelihood() {
    let mut r = rng(2);
    for (link, family) in [
        (Link::Logit, Family::Binomial),
        (Link::Log, Family::Poisson),
        (Link::Log, Family::Binomial),
    ] {
        let mut boundaries = 0;
        for case in 0..50 {
            let (d, truth, w) = glm_problem(&mut r, link, family);
            let fit = fit_glm_irls(&d, link, family, Some(&w), &VcovRequest::Auto, &IrlsControl::default()).unwrap();
            let y: Vec<f64> = d.y.iter().copied().collect();
            let start = feasible_start(link, family, &truth);
            let oracle = newton_oracle(link, family, &d.x, &y, &w, &start);
            if fit.boundary {
                // No interior optimum to match; IRLS must still do at least as well.
                assert_eq!((link, family), (Link::Log, Family::Binomial));
                let b: Vec<f64> = fit.coefficients.iter().copied().collect();
                let (li, lo) = (
                    capped_log_binomial_loglik(&d.x, &y, &w, &b),
                    capped_log_binomial_loglik(&d.x, &y, &w, &oracle),
                );
                assert!(
                    li >= lo - 1e-9 * lo.abs(),
                    "case {case}: boundary fit {li} below oracle {lo}"
                );
                boundaries += 1;
                continue;
            }
            for j in 0..d.n_coef() {
                assert!(
                    rel_err(fit.coefficients[j], oracle[j]) < 1e-8,
                    "{link:?}/{family:?} case {case} coef {j}: {} vs {}",
                    fit.coefficients[j],
                    oracle[j]
                );
            }
        }
        assert!(boundaries <= 5, "{link:?}/{family:?}: {boundaries} boundary fits");
    }
}

/// Half the generating coefficients; for log-binomial a low intercept keeps
/// every fitted probability below 1.
fn feasible_start(link: Link, family: Family, truth: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = truth.iter().map(|b| 0.5 * b).collect();
    if (link, family) == (Link::Log, Family::Binomial) {
        s[0] = -6.0;
    }
    s
}

#[test]
fn unweighted_linear_fit_uses_t_with_residual_df() {
    let mut r = rng(3);
    let y: Vec<f64> = (0..40).map(|_| normal(&mut r)).collect();
    let d = random_design(&mut r, 40, 4, y);
    let fit = fit_wls(&d, None, &VcovRequest::Auto).unwrap();
    assert_eq!(fit.vcov_kind, VcovKind::ModelBased);
    assert_eq!(fit.inference, Inference::T { df: 36.0 });
    let w = vec![2.0; 40];
    let wfit = fit_wls(&d, Some(&w), &VcovRequest::Auto).unwrap();
    assert_eq!(wfit.vcov_kind, VcovKind::Sandwich);
    assert_eq!(wfit.inference, Inference::Z);
}

#[test]
fn sandwich_matches_hc1_formula() {
    let mut r = rng(4);
    let n = 80;
    let y: Vec<f64> = (0..n).map(|i| normal(&mut r) * (1.0 + (i % 3) as f64)).collect();
    let d = random_design(&mut r, n, 3, y.clone());
    let w: Vec<f64> = (0..n).map(|_| r.random_range(0.5..3.0)).collect();
    let fit = fit_wls(&d, Some(&w), &VcovRequest::Sandwich).unwrap();
    let beta = wls_oracle(&d.x, &y, &w);
    let (a, _) = normal_equations(&d.x, &y, &w);
    let bread = DMatrix::from_fn(3, 3, |i, j| a[i][j]).try_inverse().unwrap();
    let mut meat = DMatrix::<f64>::zeros(3, 3);
    for i in 0..n {
        let e = y[i] - (0..3).map(|j| d.x[(i, j)] * beta[j]).sum::<f64>();
        for j in 0..3 {
            for k in 0..3 {
                meat[(j, k)] += (w[i] * e).powi(2) * d.x[(i, j)] * d.x[(i, k)];
            }
        }
    }
    let v = &bread * meat * &bread * (n as f64 / (n as f64 - 3.0));
    for j in 0..3 {
        for k in 0..3 {
            assert!(rel_err(fit.vcov[(j, k)], v[(j, k)]) < 1e-9);
        }
    }
}

#[test]
fn separation_is_reported() {
    let x = DMatrix::from_fn(20, 2, |i, j| if j == 0 { 1.0 } else { i as f64 - 9.5 });
    let y: Vec<f64> = (0..20).map(|i| f64::from(i >= 10)).collect();
    let d = design_from(x, y);
    let err = fit_glm_irls(
        &d,
        Link::Logit,
        Family::Binomial,
        None,
        &VcovRequest::Auto,
        &IrlsControl::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Separation { .. }), "{err}");
}

#[test]
fn log_binomial_boundary_is_flagged() {
    // Every subject with x = 1 has the event, so the MLE sits on μ = 1.
    let x = DMatrix::from_fn(40, 2, |i, j| if j == 0 { 1.0 } else { f64::from(i < 20) });
    let y: Vec<f64> = (0..40).map(|i| f64::from(i < 20 || i % 3 == 0)).collect();
    let d = design_from(x, y);
    match fit_glm_irls(
        &d,
        Link::Log,
        Family::Binomial,
        None,
        &VcovRequest::Auto,
        &IrlsControl::default(),
    ) {
        Ok(fit) => assert!(fit.boundary),
        Err(e) => assert!(matches!(e, Error::Separation { .. } | Error::Fit(_)), "{e}"),
    }
}

fn problem(seed: u64, n: usize, p: usize) -> (tatesens::design::Design, Vec<f64>) {
    let mut r = rng(seed);
    let y: Vec<f64> = (0..n).map(|_| 2.0 * normal(&mut r)).collect();
    let d = random_design(&mut r, n, p, y);
    let w: Vec<f64> = (0..n).map(|_| r.random_range(0.1..5.0)).collect();
    (d, w)
}

use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weighted_residuals_are_orthogonal(seed in 0u64..10_000, n in 15usize..120, p in 1usize..7) {
        let (d, w) = problem(seed, n, p);
        let fit = fit_wls(&d, Some(&w), &VcovRequest::Auto).unwrap();
        let r = residuals(&d, &fit);
        for j in 0..p {
            let s: f64 = (0..n).map(|i| d.x[(i, j)] * w[i] * r[i]).sum();
            let scale: f64 = (0..n).map(|i| (d.x[(i, j)] * w[i] * d.y[i]).abs()).sum::<f64>().max(1.0);
            prop_assert!(s.abs() / scale < 1e-8);
        }
    }

    #[test]
    fn rescaling_a_regressor_rescales_its_coefficient(seed in 0u64..10_000, k in 0.01f64..100.0) {
        let (d, w) = problem(seed, 50, 4);
        let fit = fit_wls(&d, Some(&w), &VcovRequest::Auto).unwrap();
        let mut d2 = d.clone();
        d2.x.column_mut(2).scale_mut(k);
        let fit2 = fit_wls(&d2, Some(&w), &VcovRequest::Auto).unwrap();
        prop_assert!(rel_err(fit2.coefficients[2] * k, fit.coefficients[2]) < 1e-10);
        for i in 0..50 {
            prop_assert!((fit.fitted[i] - fit2.fitted[i]).abs() < 1e-10 * (1.0 + fit.fitted[i].abs()));
        }
    }

    #[test]
    fn weight_scale_leaves_coefficients_and_sandwich_unchanged(seed in 0u64..10_000, c in 0.001f64..1000.0) {
        let (d, w) = problem(seed, 60, 3);
        let wc: Vec<f64> = w.iter().map(|v| v * c).collect();
        let a = fit_wls(&d, Some(&w), &VcovRequest::Sandwich).unwrap();
        let b = fit_wls(&d, Some(&wc), &VcovRequest::Sandwich).unwrap();
        for j in 0..3 {
            prop_assert!(rel_err(a.coefficients[j], b.coefficients[j]) < 1e-10);
            prop_assert!(rel_err(a.vcov[(j, j)], b.vcov[(j, j)]) < 1e-9);
        }
    }

    #[test]
    fn irls_deviance_never_increases(seed in 0u64..10_000, pick in 0usize..3) {
        let (link, family) = [(Link::Logit, Family::Binomial), (Link::Log, Family::Poisson), (Link::Log, Family::Binomial)][pick];
        let mut r = rng(seed);
        let (d, _, w) = glm_problem(&mut r, link, family);
        if let Ok(fit) = fit_glm_irls(&d, link, family, Some(&w), &VcovRequest::Auto, &IrlsControl::default()) {
            let t = &fit.convergence.deviance_trace;
            for k in 1..t.len() {
                prop_assert!(t[k] <= t[k - 1] * (1.0 + 1e-12) + 1e-12, "{:?}", t);
            }
        }
    }

    #[test]
    fn one_hot_lincom_reproduces_coefficients(seed in 0u64..10_000) {
        let (d, w) = problem(seed, 40, 5);
        let fit = fit_wls(&d, Some(&w), &VcovRequest::Auto).unwrap();
        let se = fit.std_errors();
        for (j, name) in fit.names.iter().enumerate() {
            let l = lincom(&fit, &[(name.as_str(), 1.0)], 0.95).unwrap();
            prop_assert_eq!(l.estimate, fit.coefficients[j]);
            prop_assert_eq!(l.std_error, se[j]);
        }
    }
}
