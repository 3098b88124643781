use std::sync::Arc;

use spider_core::em::{
    em_field_oracle, em_full_step, online_em_step, CurvedExpFamilyModel, EmEvaluation, GaussianFixture,
};
use spider_core::{Error, ForwardOracle, MetricOperator, ProxFunction, Result, Vector};

/// The fixture with its closed form hidden.
struct SimulationOnly(GaussianFixture);

impl CurvedExpFamilyModel for SimulationOnly {
    fn stat_dim(&self) -> usize {
        1
    }
    fn n(&self) -> usize {
        self.0.observations().len()
    }
    fn posterior_mean(&self, _i: usize, _theta: &Vector) -> Result<Vector> {
        Err(Error::Unsupported("no closed form".into()))
    }
    fn posterior_mean_oracle(&self, i: usize, theta: &Vector, budget: usize, seed: u64) -> Result<Vector> {
        self.0.posterior_mean_oracle(i, theta, budget, seed)
    }
    fn m_step(&self, s: &Vector) -> Result<Vector> {
        Ok(s.clone())
    }
    fn induced_metric(&self, _s: &Vector) -> Result<MetricOperator> {
        Ok(MetricOperator::identity(1))
    }
    fn stat_domain(&self) -> ProxFunction {
        ProxFunction::zero()
    }
    fn has_exact_posterior(&self) -> bool {
        false
    }
}

#[test]
fn exact_mode_requires_closed_form() {
    let model = Arc::new(SimulationOnly(GaussianFixture::new(vec![1.0, 2.0]).unwrap()));
    assert!(matches!(
        em_field_oracle(Arc::clone(&model), EmEvaluation::Exact),
        Err(Error::Unsupported(_))
    ));
    assert!(em_field_oracle(model, EmEvaluation::MonteCarlo).is_ok());
}

#[test]
fn full_batch_online_step_is_the_em_step() {
    let f = Arc::new(GaussianFixture::synthetic(30, -0.4, 2).unwrap());
    let o = em_field_oracle(Arc::clone(&f), EmEvaluation::Exact).unwrap();
    let s = Vector::from_element(1, 0.8);
    let all: Vec<usize> = (0..30).rev().collect();
    let a = online_em_step(&o, &s, 0.6, &ProxFunction::zero(), &all, 1, 0).unwrap();
    let b = em_full_step(&o, &s, 0.6, &ProxFunction::zero(), 1, 0).unwrap();
    assert!((a[0] - b[0]).abs() < 1e-15);
    let expected = 0.8 + 0.6 * ((0.8 + f.mean()) / 2.0 - 0.8);
    assert!((a[0] - expected).abs() < 1e-12);
    assert_eq!(em_full_step(&o, &s, 0.0, &ProxFunction::zero(), 1, 0).unwrap(), s);
}

#[test]
fn steps_from_outside_the_domain_are_rejected() {
    let f = Arc::new(GaussianFixture::synthetic(10, 0.0, 1).unwrap());
    let o = em_field_oracle(f, EmEvaluation::Exact).unwrap();
    let g = ProxFunction::ball(0.5, Vector::zeros(1)).unwrap();
    assert!(matches!(
        em_full_step(&o, &Vector::from_element(1, 2.0), 0.5, &g, 1, 0),
        Err(Error::DomainViolation)
    ));
}

#[test]
fn monte_carlo_field_is_unbiased_for_the_fixture() {
    let f = Arc::new(GaussianFixture::synthetic(5, 1.0, 4).unwrap());
    let exact = em_field_oracle(Arc::clone(&f), EmEvaluation::Exact).unwrap();
    let mc = em_field_oracle(f, EmEvaluation::MonteCarlo).unwrap();
    let s = Vector::from_element(1, 0.2);
    let b = MetricOperator::identity(1);
    let target = exact.eval_single(3, &s, &b, 1, 0).unwrap()[0];
    let reps = 20_000;
    let draws: Vec<f64> = (0..reps).map(|r| mc.eval_single(3, &s, &b, 4, r).unwrap()[0]).collect();
    let mean = draws.iter().sum::<f64>() / reps as f64;
    // Posterior variance 1/2 spread over 4 draws.
    let se = (0.5f64 / 4.0 / reps as f64).sqrt();
    assert!((mean - target).abs() < 4.0 * se, "{mean} vs {target}");
}
