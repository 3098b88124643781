//! Penalized logistic regression with Gaussian random effects.
//!
//! Example `i` has covariates `X_i`, a label `y_i ∈ {-1, 1}` and a latent
//! `Z_i ~ N(θ, σ² I)`; `P(y_i = 1 | Z_i) = (1 + exp(-<X_i, Z_i>))^{-1}`. The
//! criterion adds `τ‖θ‖²` to the normalized negative log-likelihood.

pub mod data;
pub mod quadrature;

use std::f64::consts::PI;
use std::sync::Arc;

use crate::em::{em_field_oracle, CurvedExpFamilyModel, EmEvaluation, EmFieldOracle};
use crate::error::{Error, Result};
use crate::mcmc::{gibbs_chain, logistic_weight, mean_logistic_weight, GibbsTarget, DEFAULT_BURN_IN};
use crate::metric::{Matrix, MetricChoice, MetricOperator, Vector};
use crate::oracle::{Exactness, ForwardOracle};
use crate::prox::ProxFunction;

pub use data::{
    ingest_dataset, synthesize_dataset, synthesize_dataset_with, Dataset, Provenance,
    SyntheticOptions,
};
pub use quadrature::{GaussHermite, DEFAULT_NODES};

/// `ln (1 + exp(-u))^{-1}`.
fn log_sigmoid(u: f64) -> f64 {
    if u > 0.0 {
        -(-u).exp().ln_1p()
    } else {
        u - u.exp().ln_1p()
    }
}

/// Model quantities shared by the gradient and EM formulations.
#[derive(Debug, Clone)]
pub struct LogRegModel {
    x: Vec<Vector>,
    norms: Vec<f64>,
    y: Vec<f64>,
    sigma2: f64,
    tau: f64,
    u: MetricOperator,
    b: Arc<MetricOperator>,
    k_radius2: f64,
    quad: GaussHermite,
    burn_in: usize,
}

pub fn build_model(dataset: &Dataset, sigma2: f64, tau: f64) -> Result<LogRegModel> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) || !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sigma2 and tau must be positive, got {sigma2} and {tau}"
        )));
    }
    let d = dataset.dim();
    let n = dataset.n();
    let mut norms = Vec::with_capacity(n);
    let mut scatter = Matrix::zeros(d, d);
    for (i, x) in dataset.features().iter().enumerate() {
        let nx = x.norm();
        if !(nx > 0.0) {
            return Err(Error::InvalidArgument(format!("covariate vector {i} is zero")));
        }
        scatter += x * x.transpose() / (nx * nx);
        norms.push(nx);
    }
    let u_mat = Matrix::identity(d, d) * tau + scatter / (2.0 * sigma2 * n as f64);
    let u = MetricOperator::new(u_mat)?;
    let b = MetricOperator::new(u.inverse_matrix() * 0.5)?;
    Ok(LogRegModel {
        x: dataset.features().to_vec(),
        norms,
        y: dataset.labels().to_vec(),
        sigma2,
        tau,
        u,
        b: Arc::new(b),
        k_radius2: 4f64.ln() / tau,
        quad: GaussHermite::new(DEFAULT_NODES)?,
        burn_in: DEFAULT_BURN_IN,
    })
}

impl LogRegModel {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.u.dim()
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn u(&self) -> &MetricOperator {
        &self.u
    }

    /// `B = U^{-1}/2`.
    pub fn b(&self) -> &Arc<MetricOperator> {
        &self.b
    }

    /// Squared radius `ln 4 / τ` of the ball containing every minimizer.
    pub fn k_radius2(&self) -> f64 {
        self.k_radius2
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn covariates(&self, i: usize) -> &Vector {
        &self.x[i]
    }

    /// Euclidean ball `K` in parameter space.
    pub fn parameter_constraint(&self) -> ProxFunction {
        ProxFunction::Ball {
            radius: self.k_radius2.sqrt(),
            center: Vector::zeros(self.dim()),
        }
    }

    /// `{s : Bs ∈ K}` in statistic space.
    pub fn statistic_constraint(&self) -> Result<ProxFunction> {
        ProxFunction::metric_ball(
            self.b.matrix().clone(),
            self.k_radius2.sqrt(),
            Vector::zeros(self.dim()),
        )
    }

    /// Gaussian location `a = <X_i, θ>/‖X_i‖` and logistic scale `c = y_i‖X_i‖`.
    pub fn target(&self, i: usize, theta: &Vector) -> Result<GibbsTarget> {
        self.check(i, theta)?;
        GibbsTarget::new(
            self.x[i].dot(theta) / self.norms[i],
            self.y[i] * self.norms[i],
            self.sigma2,
        )
    }

    fn check(&self, i: usize, theta: &Vector) -> Result<()> {
        if i >= self.n() {
            return Err(Error::InvalidArgument(format!("example {i} out of range")));
        }
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(())
    }

    /// `𝓘_i(θ)`, the posterior mean of the latent coordinate, by quadrature.
    pub fn quadrature_integral(&self, i: usize, theta: &Vector) -> Result<f64> {
        let t = self.target(i, theta)?;
        Ok(integral_by_quadrature(&self.quad, t))
    }

    /// `𝓘_i(θ)` from a Gibbs chain: `a + cσ² · mean (1 + e^{cz})^{-1}`.
    pub fn chain_integral(&self, i: usize, theta: &Vector, m: usize, seed: u64) -> Result<f64> {
        let t = self.target(i, theta)?;
        let chain = gibbs_chain(&t, m, self.burn_in, seed)?;
        Ok(t.a + t.c * t.sigma2 * mean_logistic_weight(t.c, &chain.z_samples))
    }

    /// `G_i(θ) = 2Uθ - X_i 𝓘_i(θ)/(σ²‖X_i‖)`.
    pub fn component_gradient(&self, i: usize, theta: &Vector, integral: f64) -> Vector {
        self.u.apply(theta).expect("dimension checked") * 2.0
            - &self.x[i] * (integral / (self.sigma2 * self.norms[i]))
    }

    /// Mean of the exact component gradients.
    pub fn gradient(&self, theta: &Vector) -> Result<Vector> {
        let mut acc = Vector::zeros(self.dim());
        for i in 0..self.n() {
            let integral = self.quadrature_integral(i, theta)?;
            acc += self.component_gradient(i, theta, integral);
        }
        Ok(acc / self.n() as f64)
    }

    /// `s̄_i(θ) = X_i 𝓘_i(θ)/(σ²‖X_i‖)`.
    pub fn posterior_statistic(&self, i: usize, integral: f64) -> Vector {
        &self.x[i] * (integral / (self.sigma2 * self.norms[i]))
    }
}

/// `𝓘` as the ratio of two Gauss–Hermite sums against `N(a, σ²)`.
pub fn integral_by_quadrature(quad: &GaussHermite, t: GibbsTarget) -> f64 {
    let den = quad.gaussian_expectation(t.a, t.sigma2, |z| (-(-t.c * z).exp().ln_1p()).exp());
    let num = quad.gaussian_expectation(t.a, t.sigma2, |z| z * (log_sigmoid(t.c * z)).exp());
    let r = num / den;
    assert!(r.is_finite(), "quadrature produced a non-finite value");
    r
}

/// `𝓘` through the identity `a + cσ² E_π[(1 + e^{cz})^{-1}]`, both
/// expectations by quadrature.
pub fn integral_by_identity(quad: &GaussHermite, t: GibbsTarget) -> f64 {
    let den = quad.gaussian_expectation(t.a, t.sigma2, |z| log_sigmoid(t.c * z).exp());
    let num = quad.gaussian_expectation(t.a, t.sigma2, |z| {
        log_sigmoid(t.c * z).exp() * logistic_weight(t.c, z)
    });
    t.a + t.c * t.sigma2 * num / den
}

/// `𝓘_i(θ)` by quadrature.
pub fn quadrature_oracle(model: &LogRegModel, i: usize, theta: &Vector) -> Result<f64> {
    model.quadrature_integral(i, theta)
}

/// `F(θ) = τ‖θ‖² - ln(2πσ²)/2 - n^{-1} Σ_i ln E_{N(a_i, σ²)}[(1 + e^{-c_i z})^{-1}]`.
///
/// Equal to `‖θ‖²_U - n^{-1} Σ_i ln ∫ exp(...) dz` after completing the square.
pub fn criterion_f(model: &LogRegModel, theta: &Vector) -> Result<f64> {
    if theta.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: theta.len(),
        });
    }
    let mut acc = 0.0;
    for i in 0..model.n() {
        let t = model.target(i, theta)?;
        acc += model
            .quad
            .gaussian_log_expectation(t.a, t.sigma2, |z| log_sigmoid(t.c * z));
    }
    Ok(model.tau * theta.norm_squared()
        - 0.5 * (2.0 * PI * model.sigma2).ln()
        - acc / model.n() as f64)
}

/// How the latent posterior mean is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegralMethod {
    Quadrature,
    Mcmc,
}

/// Parameter-space oracle `h_i(θ, B) = -B^{-1} G_i(θ)`.
#[derive(Debug, Clone)]
pub struct GradientOracle {
    model: Arc<LogRegModel>,
    method: IntegralMethod,
}

pub fn gradient_oracle(model: Arc<LogRegModel>, method: IntegralMethod) -> GradientOracle {
    GradientOracle { model, method }
}

impl GradientOracle {
    pub fn model(&self) -> &Arc<LogRegModel> {
        &self.model
    }
}

impl ForwardOracle for GradientOracle {
    fn n(&self) -> usize {
        self.model.n()
    }

    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn exactness(&self) -> Exactness {
        match self.method {
            IntegralMethod::Quadrature => Exactness::Exact,
            IntegralMethod::Mcmc => Exactness::BiasedRandom,
        }
    }

    fn eval_single(
        &self,
        i: usize,
        theta: &Vector,
        b: &MetricOperator,
        budget: usize,
        seed: u64,
    ) -> Result<Vector> {
        let integral = match self.method {
            IntegralMethod::Quadrature => self.model.quadrature_integral(i, theta)?,
            IntegralMethod::Mcmc => self.model.chain_integral(i, theta, budget.max(1), seed)?,
        };
        Ok(-b.apply_inverse(&self.model.component_gradient(i, theta, integral))?)
    }
}

/// Statistic-space view: `T(s) = Bs`, metric `B`, constraint `{s : Bs ∈ K}`.
#[derive(Debug, Clone)]
pub struct LogRegEmModel {
    model: Arc<LogRegModel>,
    domain: ProxFunction,
}

pub fn em_statistic_model(model: Arc<LogRegModel>) -> Result<LogRegEmModel> {
    let domain = model.statistic_constraint()?;
    Ok(LogRegEmModel { model, domain })
}

impl LogRegEmModel {
    pub fn model(&self) -> &Arc<LogRegModel> {
        &self.model
    }

    pub fn metric_choice(&self) -> MetricChoice {
        MetricChoice::Constant(Arc::clone(&self.model.b))
    }

    /// Forward oracle in statistic space.
    pub fn oracle(self: &Arc<Self>, method: IntegralMethod) -> Result<EmFieldOracle<LogRegEmModel>> {
        let mode = match method {
            IntegralMethod::Quadrature => EmEvaluation::Exact,
            IntegralMethod::Mcmc => EmEvaluation::MonteCarlo,
        };
        em_field_oracle(Arc::clone(self), mode)
    }

    /// Objective `F(Bs)`.
    pub fn objective(&self, s: &Vector) -> Result<f64> {
        criterion_f(&self.model, &self.model.b.apply(s)?)
    }
}

impl CurvedExpFamilyModel for LogRegEmModel {
    fn stat_dim(&self) -> usize {
        self.model.dim()
    }

    fn n(&self) -> usize {
        self.model.n()
    }

    fn posterior_mean(&self, i: usize, theta: &Vector) -> Result<Vector> {
        let integral = self.model.quadrature_integral(i, theta)?;
        Ok(self.model.posterior_statistic(i, integral))
    }

    fn posterior_mean_oracle(
        &self,
        i: usize,
        theta: &Vector,
        budget: usize,
        seed: u64,
    ) -> Result<Vector> {
        let integral = self.model.chain_integral(i, theta, budget, seed)?;
        Ok(self.model.posterior_statistic(i, integral))
    }

    fn m_step(&self, s: &Vector) -> Result<Vector> {
        self.model.b.apply(s)
    }

    fn induced_metric(&self, _s: &Vector) -> Result<MetricOperator> {
        Ok((*self.model.b).clone())
    }

    fn stat_domain(&self) -> ProxFunction {
        self.domain.clone()
    }

    fn has_exact_posterior(&self) -> bool {
        true
    }
}

/// Monte Carlo `h̄_i(s)` from a Gibbs chain of length `m` at `θ = Bs`.
///
/// With `crn_partner` the chain runs on the partner's seed, so the two
/// estimates of a difference share their random streams.
pub fn mc_hbar_estimate(
    s: &Vector,
    i: usize,
    model: &LogRegModel,
    m: usize,
    seed: u64,
    crn_partner: Option<u64>,
) -> Result<Vector> {
    let theta = model.b.apply(s)?;
    let integral = model.chain_integral(i, &theta, m, crn_partner.unwrap_or(seed))?;
    Ok(model.posterior_statistic(i, integral) - s)
}

/// Exact `h̄_i(s)` by quadrature.
pub fn quadrature_hbar(s: &Vector, i: usize, model: &LogRegModel) -> Result<Vector> {
    let theta = model.b.apply(s)?;
    let integral = model.quadrature_integral(i, &theta)?;
    Ok(model.posterior_statistic(i, integral) - s)
}
