mod common;

use std::sync::Arc;

use common::*;
use rand::Rng;
use serde::Deserialize;
use spider_core::algorithms::{run_3p_spider, run_vmfb, KinSchedule, RunConfig};
use spider_core::logreg::{
    build_model, criterion_f, em_statistic_model, gradient_oracle, integral_by_identity,
    integral_by_quadrature, quadrature_hbar, synthesize_dataset, GaussHermite, IntegralMethod, LogRegModel,
};
use spider_core::mcmc::GibbsTarget;
use spider_core::{ForwardOracle, Matrix, MetricOperator, ProxFunction, Vector};

#[derive(Deserialize)]
struct Golden {
    cases: Vec<GoldenCase>,
}

#[derive(Deserialize)]
struct GoldenCase {
    a: f64,
    c: f64,
    sigma2: f64,
    integral: f64,
}

fn golden() -> Golden {
    let text = include_str!("golden/integral_values.json");
    serde_json::from_str(text).unwrap()
}

fn model(n: usize, seed: u64) -> LogRegModel {
    let ds = synthesize_dataset(n, 5, &[0.8, -0.6, 0.4, 1.0, -0.3], 0.05, seed).unwrap();
    build_model(&ds, 0.05, 1.0).unwrap()
}

fn theta_in_k(m: &LogRegModel, r: &mut rand_chacha::ChaCha8Rng) -> Vector {
    let dir = gaussian_vector(r, m.dim(), 1.0);
    &dir / dir.norm() * (m.k_radius2().sqrt() * r.random::<f64>())
}

#[test]
fn quadrature_matches_golden_values() {
    let gh = GaussHermite::new(128).unwrap();
    for case in golden().cases {
        let t = GibbsTarget::new(case.a, case.c, case.sigma2).unwrap();
        let got = integral_by_quadrature(&gh, t);
        // 1e-8 is promised for the small-variance regime only; wider latent
        // variance with a steep weight leaves a few 1e-8 of error at 128 nodes.
        let tol = if case.sigma2 <= 0.05 { 1e-8 } else { 1e-6 };
        assert!((got - case.integral).abs() <= tol, "{got} vs {}", case.integral);
    }
}

#[test]
fn golden_values_agree_with_an_independent_trapezoid() {
    for case in golden().cases {
        let (a, c, s2) = (case.a, case.c, case.sigma2);
        let den = trapezoid_gaussian(a, s2, 200_001, |z| log_sigmoid(c * z).exp());
        let num = trapezoid_gaussian(a, s2, 200_001, |z| z * log_sigmoid(c * z).exp());
        assert!((num / den - case.integral).abs() <= 1e-9);
    }
}

#[test]
fn weight_identity_agrees_with_direct_ratio() {
    let gh = GaussHermite::new(128).unwrap();
    let mut r = rng(1);
    for _ in 0..50 {
        let t = GibbsTarget::new(
            3.0 * r.random::<f64>() - 1.5,
            8.0 * r.random::<f64>() - 4.0,
            0.05,
        )
        .unwrap();
        assert!((integral_by_identity(&gh, t) - integral_by_quadrature(&gh, t)).abs() <= 1e-8);
    }
    let flat = GibbsTarget::new(0.7, 0.0, 0.05).unwrap();
    assert!((integral_by_quadrature(&gh, flat) - 0.7).abs() < 1e-14);
}

#[test]
fn matrices_are_recomputable() {
    let ds = synthesize_dataset(40, 4, &[0.1, 0.2, 0.3, 0.4], 0.05, 3).unwrap();
    let m = build_model(&ds, 0.05, 1.0).unwrap();
    let mut u = Matrix::identity(4, 4);
    for x in ds.features() {
        u += x * x.transpose() / (x.norm_squared() * 2.0 * 0.05 * 40.0);
    }
    assert!((m.u().matrix() - &u).amax() <= 1e-12);
    let prod = m.b().matrix() * m.u().matrix() * 2.0;
    assert!((prod - Matrix::identity(4, 4)).amax() <= 1e-10);
    assert!((m.k_radius2() - 4f64.ln()).abs() < 1e-15);
}

#[test]
fn gradient_matches_finite_differences() {
    let m = model(50, 4);
    let mut r = rng(2);
    let h = 1e-5;
    for _ in 0..5 {
        let theta = theta_in_k(&m, &mut r);
        let g = m.gradient(&theta).unwrap();
        for j in 0..m.dim() {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (criterion_f(&m, &up).unwrap() - criterion_f(&m, &dn).unwrap()) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1e-2), "coord {j}: {fd} vs {}", g[j]);
        }
    }
}

#[test]
fn statistic_field_is_a_preconditioned_gradient() {
    let m = Arc::new(model(50, 5));
    let em = Arc::new(em_statistic_model(Arc::clone(&m)).unwrap());
    let b = m.b();
    let mut r = rng(3);
    let h = 1e-5;
    for _ in 0..5 {
        let s = m.u().apply(&theta_in_k(&m, &mut r)).unwrap() * 2.0;
        let field = (0..m.n()).fold(Vector::zeros(5), |acc, i| acc + quadrature_hbar(&s, i, &m).unwrap()) / m.n() as f64;
        let grad = -b.apply(&field).unwrap();
        for j in 0..5 {
            let mut up = s.clone();
            let mut dn = s.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (em.objective(&up).unwrap() - em.objective(&dn).unwrap()) / (2.0 * h);
            assert!((fd - grad[j]).abs() <= 1e-5 * grad[j].abs().max(1e-2), "coord {j}: {fd} vs {}", grad[j]);
        }
    }
}

#[test]
fn interior_statistics_are_prox_fixed_points() {
    let m = model(20, 6);
    let g = m.statistic_constraint().unwrap();
    let s = m.u().apply(&Vector::from_element(5, 0.1)).unwrap() * 2.0;
    assert!(g.domain_check(&s));
    let p = spider_core::prox::prox(&g, 0.4, m.b(), &s).unwrap();
    assert!((p - s).amax() < 1e-12);
}

#[test]
fn iterates_stay_in_the_bounded_set() {
    let m = Arc::new(model(200, 7));
    let em = Arc::new(em_statistic_model(Arc::clone(&m)).unwrap());
    let oracle = em.oracle(IntegralMethod::Quadrature).unwrap();
    let g = m.statistic_constraint().unwrap();
    let mut r = rng(4);
    let bound = m.k_radius2() + 1e-9;
    for start in 0..10 {
        let s0 = m.u().apply(&theta_in_k(&m, &mut r)).unwrap() * 2.0;
        let mut cfg = RunConfig::new(200, 20, 3, 0.4, em.metric_choice());
        cfg.kin = KinSchedule::Constant(7);
        cfg.master_seed = start;
        cfg.record_iterates = true;
        let res = run_3p_spider(&cfg, &oracle, &g, &s0, m.b()).unwrap();
        for s in &res.iterates {
            assert!(m.b().apply(s).unwrap().norm_squared() <= bound);
        }
    }
    // Without the constraint the fixed point still lies inside.
    let mut cfg = RunConfig::new(200, 200, 200, 1.0, em.metric_choice());
    cfg.record_wallclock = false;
    let res = run_vmfb(&cfg, &oracle, &ProxFunction::zero(), &Vector::zeros(5)).unwrap();
    assert!(res.trace.last().unwrap().delta < 1e-12);
    assert!(m.b().apply(&res.final_iterate).unwrap().norm_squared() <= bound);
}

#[test]
fn monte_carlo_gradient_oracle_is_close_to_exact() {
    let m = Arc::new(model(30, 8));
    let exact = gradient_oracle(Arc::clone(&m), IntegralMethod::Quadrature);
    let mc = gradient_oracle(Arc::clone(&m), IntegralMethod::Mcmc);
    let id = MetricOperator::identity(5);
    let mut r = rng(9);
    for i in [0usize, 7, 19] {
        let theta = theta_in_k(&m, &mut r);
        let a = exact.eval_single(i, &theta, &id, 1, 0).unwrap();
        let b = mc.eval_single(i, &theta, &id, 100_000, i as u64).unwrap();
        assert!((a - b).amax() <= 0.01);
    }
}

#[test]
fn criterion_shrinks_toward_origin_under_heavy_penalty() {
    let ds = synthesize_dataset(50, 3, &[1.0, 0.5, -0.5], 0.05, 10).unwrap();
    let m = build_model(&ds, 0.05, 50.0).unwrap();
    let dir = Vector::from_row_slice(&[0.6, -0.3, 0.2]);
    let values: Vec<f64> = (0..=20)
        .map(|k| criterion_f(&m, &(&dir * (k as f64 / 20.0))).unwrap())
        .collect();
    assert!(values.windows(2).all(|w| w[0] <= w[1]), "{values:?}");
}

#[test]
fn synthetic_labels_follow_the_model() {
    let ds = synthesize_dataset(2_000, 3, &[8.0, 0.0, 0.0], 1e-6, 11).unwrap();
    let pos = ds.labels().iter().filter(|&&y| y > 0.0).count() as f64 / 2_000.0;
    assert!(pos >= 0.99);
    let n = 10_000;
    let ds = synthesize_dataset(n, 3, &[0.0; 3], 0.05, 12).unwrap();
    let frac = ds.labels().iter().filter(|&&y| y > 0.0).count() as f64 / n as f64;
    assert!((frac - 0.5).abs() <= 3.0 * (0.25 / n as f64).sqrt());
}
