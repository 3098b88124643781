//! Expectation-maximization for curved exponential families, written in the
//! space of sufficient statistics.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metric::{MetricChoice, MetricOperator, Vector};
use crate::oracle::{batch_word, ordered_mean, Exactness, ForwardOracle};
use crate::prox::{prox, ProxFunction};
use crate::seed::{derive_seed, rng_from_seed, StreamTag};

/// A latent-variable model whose complete-data likelihood is a curved
/// exponential family.
pub trait CurvedExpFamilyModel: Send + Sync {
    /// Dimension `q` of the sufficient statistic.
    fn stat_dim(&self) -> usize;

    fn n(&self) -> usize;

    /// `s̄_i(θ)`, the conditional expectation of the statistic of example `i`.
    fn posterior_mean(&self, i: usize, theta: &Vector) -> Result<Vector>;

    /// Monte Carlo approximation of `s̄_i(θ)` from `budget` draws.
    fn posterior_mean_oracle(&self, i: usize, theta: &Vector, budget: usize, seed: u64)
        -> Result<Vector>;

    /// `T(s)`, the maximizer of the complete-data criterion.
    fn m_step(&self, s: &Vector) -> Result<Vector>;

    /// `𝖡(s)`.
    fn induced_metric(&self, s: &Vector) -> Result<MetricOperator>;

    /// Constraint set containing every `s̄(θ)`.
    fn stat_domain(&self) -> ProxFunction;

    /// Whether [`posterior_mean`](Self::posterior_mean) is available.
    fn has_exact_posterior(&self) -> bool;

    /// Class of [`posterior_mean_oracle`](Self::posterior_mean_oracle).
    fn mc_exactness(&self) -> Exactness {
        Exactness::BiasedRandom
    }

    /// `ψ(θ) - <s, φ(θ)>`, when the model exposes it.
    fn m_step_criterion(&self, _theta: &Vector, _s: &Vector) -> Option<f64> {
        None
    }
}

/// How an [`EmFieldOracle`] evaluates `s̄_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmEvaluation {
    Exact,
    MonteCarlo,
}

/// Forward oracle `h̄_i(s) = s̄_i(T(s)) - s`.
///
/// The metric argument is ignored: the EM field is already preconditioned.
pub struct EmFieldOracle<M: ?Sized> {
    model: Arc<M>,
    mode: EmEvaluation,
}

impl<M: ?Sized> Clone for EmFieldOracle<M> {
    fn clone(&self) -> Self {
        EmFieldOracle {
            model: Arc::clone(&self.model),
            mode: self.mode,
        }
    }
}

pub fn em_field_oracle<M: CurvedExpFamilyModel + ?Sized>(
    model: Arc<M>,
    mode: EmEvaluation,
) -> Result<EmFieldOracle<M>> {
    if mode == EmEvaluation::Exact && !model.has_exact_posterior() {
        return Err(Error::Unsupported(
            "model has no closed-form posterior mean".into(),
        ));
    }
    if model.n() == 0 || model.stat_dim() == 0 {
        return Err(Error::InvalidArgument("empty model".into()));
    }
    Ok(EmFieldOracle { model, mode })
}

impl<M: CurvedExpFamilyModel + ?Sized + 'static> EmFieldOracle<M> {
    pub fn model(&self) -> &Arc<M> {
        &self.model
    }

    pub fn mode(&self) -> EmEvaluation {
        self.mode
    }

    /// `s ↦ 𝖡(s)` as a metric choice for the drivers.
    pub fn metric_choice(&self) -> MetricChoice {
        let model = Arc::clone(&self.model);
        MetricChoice::state_dependent(move |s| model.induced_metric(s))
    }
}

impl<M: CurvedExpFamilyModel + ?Sized> ForwardOracle for EmFieldOracle<M> {
    fn n(&self) -> usize {
        self.model.n()
    }

    fn dim(&self) -> usize {
        self.model.stat_dim()
    }

    fn exactness(&self) -> Exactness {
        match self.mode {
            EmEvaluation::Exact => Exactness::Exact,
            EmEvaluation::MonteCarlo => self.model.mc_exactness(),
        }
    }

    fn eval_single(
        &self,
        i: usize,
        s: &Vector,
        _b: &MetricOperator,
        budget: usize,
        seed: u64,
    ) -> Result<Vector> {
        if i >= self.model.n() {
            return Err(Error::InvalidArgument(format!("component {i} out of range")));
        }
        let theta = self.model.m_step(s)?;
        let sbar = match self.mode {
            EmEvaluation::Exact => self.model.posterior_mean(i, &theta)?,
            EmEvaluation::MonteCarlo => {
                self.model.posterior_mean_oracle(i, &theta, budget.max(1), seed)?
            }
        };
        Ok(sbar - s)
    }
}

fn batch_field<M: CurvedExpFamilyModel + ?Sized>(
    oracle: &EmFieldOracle<M>,
    s: &Vector,
    batch: &[usize],
    budget: usize,
    seed: u64,
) -> Result<Vector> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let b = MetricOperator::identity(s.len());
    let parts = batch
        .par_iter()
        .enumerate()
        .map(|(j, &i)| {
            let seed_i = derive_seed(seed, 0, 0, batch_word(j, i), StreamTag::Current);
            oracle.eval_single(i, s, &b, budget, seed_i)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ordered_mean(parts, s.len()))
}

fn em_step<M: CurvedExpFamilyModel + ?Sized>(
    oracle: &EmFieldOracle<M>,
    s: &Vector,
    gamma: f64,
    g: &ProxFunction,
    batch: &[usize],
    budget: usize,
    seed: u64,
) -> Result<Vector> {
    if !g.domain_check(s) {
        return Err(Error::DomainViolation);
    }
    if gamma == 0.0 {
        return Ok(s.clone());
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be nonnegative, got {gamma}")));
    }
    let field = batch_field(oracle, s, batch, budget, seed)?;
    let metric = oracle.model.induced_metric(s)?;
    prox(g, gamma, &metric, &(s + field * gamma))
}

/// `prox_{γg}^{𝖡(s)}(s + γ n^{-1} Σ_i h̄_i(s))`.
pub fn em_full_step<M: CurvedExpFamilyModel + ?Sized>(
    oracle: &EmFieldOracle<M>,
    s: &Vector,
    gamma: f64,
    g: &ProxFunction,
    budget: usize,
    seed: u64,
) -> Result<Vector> {
    let all: Vec<usize> = (0..oracle.model.n()).collect();
    em_step(oracle, s, gamma, g, &all, budget, seed)
}

/// `prox_{γg}^{𝖡(s)}(s + γ b^{-1} Σ_{i∈batch} h̄_i(s))`.
pub fn online_em_step<M: CurvedExpFamilyModel + ?Sized>(
    oracle: &EmFieldOracle<M>,
    s: &Vector,
    gamma: f64,
    g: &ProxFunction,
    batch: &[usize],
    budget: usize,
    seed: u64,
) -> Result<Vector> {
    let mut sorted = batch.to_vec();
    sorted.sort_unstable();
    em_step(oracle, s, gamma, g, &sorted, budget, seed)
}

/// Gaussian latent mean model: `z_i ~ N(θ, 1)`, `y_i | z_i ~ N(z_i, 1)`.
///
/// The statistic is the posterior mean of `z_i`, so `s̄_i(θ) = (θ + y_i)/2`,
/// `T(s) = s` and `𝖡 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFixture {
    y: Vec<f64>,
}

impl GaussianFixture {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidArgument("fixture needs observations".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("observations must be finite".into()));
        }
        Ok(GaussianFixture { y })
    }

    /// Observations `y_i ~ N(theta, 2)` drawn from a seed.
    pub fn synthetic(n: usize, theta: f64, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(derive_seed(seed, 0, 0, 0, StreamTag::Synthetic));
        let y = (0..n)
            .map(|_| {
                let e: f64 = rng.sample(StandardNormal);
                theta + std::f64::consts::SQRT_2 * e
            })
            .collect();
        Self::new(y)
    }

    pub fn observations(&self) -> &[f64] {
        &self.y
    }

    pub fn mean(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.y.len() as f64
    }

    /// One textbook EM update of `θ`.
    pub fn parameter_em_step(&self, theta: f64) -> f64 {
        self.y.iter().map(|y| (theta + y) / 2.0).sum::<f64>() / self.y.len() as f64
    }

    /// Negative log-likelihood of the observed data, `y_i ~ N(θ, 2)`.
    pub fn neg_log_likelihood(&self, theta: f64) -> f64 {
        let c = 0.5 * (4.0 * std::f64::consts::PI).ln();
        self.y.iter().map(|y| (y - theta).powi(2) / 4.0 + c).sum()
    }
}

impl CurvedExpFamilyModel for GaussianFixture {
    fn stat_dim(&self) -> usize {
        1
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn posterior_mean(&self, i: usize, theta: &Vector) -> Result<Vector> {
        Ok(Vector::from_element(1, (theta[0] + self.y[i]) / 2.0))
    }

    fn posterior_mean_oracle(
        &self,
        i: usize,
        theta: &Vector,
        budget: usize,
        seed: u64,
    ) -> Result<Vector> {
        let mut rng = rng_from_seed(seed);
        let centre = (theta[0] + self.y[i]) / 2.0;
        let sd = std::f64::consts::FRAC_1_SQRT_2;
        let sum: f64 = (0..budget)
            .map(|_| {
                let e: f64 = rng.sample(StandardNormal);
                centre + sd * e
            })
            .sum();
        Ok(Vector::from_element(1, sum / budget as f64))
    }

    fn m_step(&self, s: &Vector) -> Result<Vector> {
        if s.len() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: s.len(),
            });
        }
        Ok(s.clone())
    }

    fn induced_metric(&self, _s: &Vector) -> Result<MetricOperator> {
        Ok(MetricOperator::identity(1))
    }

    fn stat_domain(&self) -> ProxFunction {
        ProxFunction::Zero
    }

    fn has_exact_posterior(&self) -> bool {
        true
    }

    fn mc_exactness(&self) -> Exactness {
        Exactness::UnbiasedRandom
    }

    fn m_step_criterion(&self, theta: &Vector, s: &Vector) -> Option<f64> {
        Some(theta[0] * theta[0] / 2.0 - s[0] * theta[0])
    }
}
