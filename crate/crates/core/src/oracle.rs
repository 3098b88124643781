//! Preconditioned forward operators `h_i(s, B) = -B^{-1} G_i(s)` and their
//! stochastic approximations.

use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{MetricChoice, MetricOperator, Vector};
use crate::prox::ProxFunction;
use crate::seed::{derive_seed, hash_words, rng_from_seed, StreamTag};

/// Quality class of an oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exactness {
    Exact,
    UnbiasedRandom,
    BiasedRandom,
    DeterministicApprox,
}

/// Simulation budgets `m_{t,k}` used by the oracle calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum BudgetSchedule {
    Constant { refresh: usize, inner: usize },
    /// `m_{t,0} = refresh * t^a` and `m_{t,k} = inner * t^a * (k+1)^b`, rounded up.
    Polynomial {
        refresh: usize,
        inner: usize,
        outer_exponent: f64,
        inner_exponent: f64,
    },
}

impl Default for BudgetSchedule {
    fn default() -> Self {
        BudgetSchedule::Constant {
            refresh: 1,
            inner: 1,
        }
    }
}

impl BudgetSchedule {
    pub fn constant(refresh: usize, inner: usize) -> Self {
        BudgetSchedule::Constant { refresh, inner }
    }

    pub fn validate(&self) -> Result<()> {
        let (r, i) = match self {
            BudgetSchedule::Constant { refresh, inner } => (*refresh, *inner),
            BudgetSchedule::Polynomial {
                refresh,
                inner,
                outer_exponent,
                inner_exponent,
            } => {
                if !(*outer_exponent >= 0.0 && *inner_exponent >= 0.0) {
                    return Err(Error::InvalidArgument(
                        "budget exponents must be nonnegative".into(),
                    ));
                }
                (*refresh, *inner)
            }
        };
        if r == 0 || i == 0 {
            return Err(Error::InvalidArgument("budgets must be positive".into()));
        }
        Ok(())
    }

    /// Budget of the refresh of outer loop `t` (1-based).
    pub fn refresh(&self, t: usize) -> usize {
        match self {
            BudgetSchedule::Constant { refresh, .. } => *refresh,
            BudgetSchedule::Polynomial {
                refresh,
                outer_exponent,
                ..
            } => scaled(*refresh, (t.max(1) as f64).powf(*outer_exponent)),
        }
    }

    /// Budget `m_{t,k}` of inner iteration `k >= 1`.
    pub fn inner(&self, t: usize, k: usize) -> usize {
        match self {
            BudgetSchedule::Constant { inner, .. } => *inner,
            BudgetSchedule::Polynomial {
                inner,
                outer_exponent,
                inner_exponent,
                ..
            } => scaled(
                *inner,
                (t.max(1) as f64).powf(*outer_exponent) * ((k + 1) as f64).powf(*inner_exponent),
            ),
        }
    }
}

fn scaled(base: usize, factor: f64) -> usize {
    ((base as f64) * factor).ceil().max(1.0) as usize
}

/// Declared error constants of an oracle together with its budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorProfile {
    pub c_b: f64,
    pub c_v: f64,
    pub c_vb: f64,
    pub budgets: BudgetSchedule,
}

impl ErrorProfile {
    pub fn exact() -> Self {
        ErrorProfile {
            c_b: 0.0,
            c_v: 0.0,
            c_vb: 0.0,
            budgets: BudgetSchedule::default(),
        }
    }

    pub fn new(c_b: f64, c_v: f64, c_vb: f64, budgets: BudgetSchedule) -> Result<Self> {
        for (name, v) in [("C_b", c_b), ("C_v", c_v), ("C_vb", c_vb)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be a finite nonnegative number, got {v}"
                )));
            }
        }
        budgets.validate()?;
        Ok(ErrorProfile {
            c_b,
            c_v,
            c_vb,
            budgets,
        })
    }

    /// Check the zero pattern required by an exactness class.
    pub fn validate_for(&self, exactness: Exactness) -> Result<()> {
        let bad = match exactness {
            Exactness::Exact => self.c_b != 0.0 || self.c_v != 0.0 || self.c_vb != 0.0,
            Exactness::UnbiasedRandom => self.c_b != 0.0 || self.c_vb != 0.0,
            Exactness::DeterministicApprox => self.c_v != 0.0,
            Exactness::BiasedRandom => false,
        };
        if bad {
            return Err(Error::InvalidArgument(format!(
                "error constants ({}, {}, {}) are inconsistent with a {:?} oracle",
                self.c_b, self.c_v, self.c_vb, exactness
            )));
        }
        Ok(())
    }

    /// `m_{t,k}`; the bias and variance budgets `M_{t,k}`, `M̄_{t,k}` coincide with it
    /// for the Monte Carlo oracles provided here.
    pub fn m(&self, t: usize, k: usize) -> usize {
        if k == 0 {
            self.budgets.refresh(t)
        } else {
            self.budgets.inner(t, k)
        }
    }
}

/// Source of approximations of `h_i(s, B)`.
pub trait ForwardOracle: Send + Sync {
    fn n(&self) -> usize;

    fn dim(&self) -> usize;

    fn exactness(&self) -> Exactness;

    fn error_profile(&self) -> ErrorProfile {
        ErrorProfile::exact()
    }

    /// Approximation of `h_i(s, B)`; `i` is 0-based.
    fn eval_single(
        &self,
        i: usize,
        s: &Vector,
        b: &MetricOperator,
        budget: usize,
        seed: u64,
    ) -> Result<Vector>;

    /// Approximation of `h_i(s_cur, B_cur) - h_i(s_prev, B_prev)`.
    ///
    /// With `crn` both terms are computed from the same seed.
    #[allow(clippy::too_many_arguments)]
    fn eval_diff(
        &self,
        i: usize,
        s_cur: &Vector,
        b_cur: &MetricOperator,
        s_prev: &Vector,
        b_prev: &MetricOperator,
        budget: usize,
        seed: u64,
        crn: bool,
    ) -> Result<Vector> {
        let prev_seed = if crn {
            seed
        } else {
            hash_words(&[seed, StreamTag::Previous as u64])
        };
        let cur = self.eval_single(i, s_cur, b_cur, budget, seed)?;
        let prev = self.eval_single(i, s_prev, b_prev, budget, prev_seed)?;
        Ok(cur - prev)
    }
}

impl<O: ForwardOracle + ?Sized> ForwardOracle for Arc<O> {
    fn n(&self) -> usize {
        (**self).n()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn exactness(&self) -> Exactness {
        (**self).exactness()
    }
    fn error_profile(&self) -> ErrorProfile {
        (**self).error_profile()
    }
    fn eval_single(
        &self,
        i: usize,
        s: &Vector,
        b: &MetricOperator,
        budget: usize,
        seed: u64,
    ) -> Result<Vector> {
        (**self).eval_single(i, s, b, budget, seed)
    }
    fn eval_diff(
        &self,
        i: usize,
        s_cur: &Vector,
        b_cur: &MetricOperator,
        s_prev: &Vector,
        b_prev: &MetricOperator,
        budget: usize,
        seed: u64,
        crn: bool,
    ) -> Result<Vector> {
        (**self).eval_diff(i, s_cur, b_cur, s_prev, b_prev, budget, seed, crn)
    }
}

pub type ComponentGradient = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;

/// Oracle returning `-B^{-1} G_i(s)` exactly.
#[derive(Clone)]
pub struct ExactFiniteSumOracle {
    components: Vec<ComponentGradient>,
    dim: usize,
    metric: MetricChoice,
    domain: Option<ProxFunction>,
}

impl std::fmt::Debug for ExactFiniteSumOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExactFiniteSumOracle")
            .field("n", &self.components.len())
            .field("dim", &self.dim)
            .finish()
    }
}

/// Build an exact oracle from component gradients `G_i`.
pub fn exact_finite_sum_oracle(
    components: Vec<ComponentGradient>,
    dim: usize,
    metric: MetricChoice,
) -> Result<ExactFiniteSumOracle> {
    if components.is_empty() {
        return Err(Error::InvalidArgument("no components".into()));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    Ok(ExactFiniteSumOracle {
        components,
        dim,
        metric,
        domain: None,
    })
}

impl ExactFiniteSumOracle {
    /// Reject evaluation points outside `dom g`.
    pub fn with_domain(mut self, g: ProxFunction) -> Self {
        self.domain = Some(g);
        self
    }

    pub fn metric(&self) -> &MetricChoice {
        &self.metric
    }

    pub fn gradient(&self, i: usize, s: &Vector) -> Result<Vector> {
        let g = self.components.get(i).ok_or_else(|| {
            Error::InvalidArgument(format!("component {i} out of range"))
        })?;
        if s.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: s.len(),
            });
        }
        if let Some(dom) = &self.domain {
            if !dom.domain_check(s) {
                return Err(Error::DomainViolation);
            }
        }
        let v = g(s);
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        Ok(v)
    }

    /// `h̄_i(s) = h_i(s, B(s))`.
    pub fn hbar_single(&self, i: usize, s: &Vector) -> Result<Vector> {
        let b = self.metric.at(s)?;
        self.eval_single(i, s, &b, 1, 0)
    }

    /// `h̄(s)`.
    pub fn hbar(&self, s: &Vector) -> Result<Vector> {
        let b = self.metric.at(s)?;
        mean_field(self, s, &b)
    }
}

impl ForwardOracle for ExactFiniteSumOracle {
    fn n(&self) -> usize {
        self.components.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn exactness(&self) -> Exactness {
        Exactness::Exact
    }

    fn eval_single(
        &self,
        i: usize,
        s: &Vector,
        b: &MetricOperator,
        _budget: usize,
        _seed: u64,
    ) -> Result<Vector> {
        let g = self.gradient(i, s)?;
        Ok(-b.apply_inverse(&g)?)
    }
}

/// Quadratic components `G_i(s) = A_i s - c_i`.
pub fn quadratic_components(
    a: &[crate::metric::Matrix],
    c: &[Vector],
) -> Result<Vec<ComponentGradient>> {
    if a.len() != c.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: c.len(),
        });
    }
    Ok(a.iter()
        .zip(c)
        .map(|(ai, ci)| {
            let (ai, ci) = (ai.clone(), ci.clone());
            Arc::new(move |s: &Vector| &ai * s - &ci) as ComponentGradient
        })
        .collect())
}

/// Exact oracle perturbed by centered Gaussian noise of variance
/// `sigma_i^2 / budget` per coordinate.
#[derive(Debug, Clone)]
pub struct NoisyOracle<O> {
    inner: O,
    noise_std: Vec<f64>,
}

impl<O: ForwardOracle> NoisyOracle<O> {
    pub fn new(inner: O, noise_std: Vec<f64>) -> Result<Self> {
        if noise_std.len() != inner.n() {
            return Err(Error::DimensionMismatch {
                expected: inner.n(),
                found: noise_std.len(),
            });
        }
        if noise_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidArgument("noise levels must be nonnegative".into()));
        }
        Ok(NoisyOracle { inner, noise_std })
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    /// `E‖δ - h_i‖²` at budget `m`.
    pub fn noise_variance(&self, i: usize, budget: usize) -> f64 {
        let s = self.noise_std[i];
        s * s * self.inner.dim() as f64 / budget.max(1) as f64
    }
}

impl<O: ForwardOracle> ForwardOracle for NoisyOracle<O> {
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn exactness(&self) -> Exactness {
        Exactness::UnbiasedRandom
    }

    fn error_profile(&self) -> ErrorProfile {
        let c_v = self.noise_std.iter().fold(0.0f64, |m, s| m.max(s * s)) * self.dim() as f64;
        ErrorProfile {
            c_b: 0.0,
            c_v,
            c_vb: 0.0,
            budgets: BudgetSchedule::default(),
        }
    }

    fn eval_single(
        &self,
        i: usize,
        s: &Vector,
        b: &MetricOperator,
        budget: usize,
        seed: u64,
    ) -> Result<Vector> {
        let mut h = self.inner.eval_single(i, s, b, budget, seed)?;
        let sd = self.noise_std[i] / (budget.max(1) as f64).sqrt();
        let mut rng = rng_from_seed(seed);
        for x in h.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *x += sd * e;
        }
        Ok(h)
    }
}

/// One logged oracle request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleCall {
    pub diff: bool,
    pub i: usize,
    pub budget: usize,
    pub seed: u64,
    pub crn: bool,
}

/// Wrapper recording every request made to the inner oracle.
#[derive(Debug)]
pub struct RecordingOracle<O> {
    inner: O,
    log: Mutex<Vec<OracleCall>>,
}

impl<O: ForwardOracle> RecordingOracle<O> {
    pub fn new(inner: O) -> Self {
        RecordingOracle {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Calls sorted by `(i, seed)` so that the log does not depend on scheduling.
    pub fn calls(&self) -> Vec<OracleCall> {
        let mut v = self.log.lock().expect("oracle log poisoned").clone();
        v.sort_by_key(|c| (c.diff, c.i, c.seed, c.budget, c.crn));
        v
    }

    fn push(&self, call: OracleCall) {
        self.log.lock().expect("oracle log poisoned").push(call);
    }
}

impl<O: ForwardOracle> ForwardOracle for RecordingOracle<O> {
    fn n(&self) -> usize {
        self.inner.n()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn exactness(&self) -> Exactness {
        self.inner.exactness()
    }
    fn error_profile(&self) -> ErrorProfile {
        self.inner.error_profile()
    }
    fn eval_single(
        &self,
        i: usize,
        s: &Vector,
        b: &MetricOperator,
        budget: usize,
        seed: u64,
    ) -> Result<Vector> {
        self.push(OracleCall {
            diff: false,
            i,
            budget,
            seed,
            crn: false,
        });
        self.inner.eval_single(i, s, b, budget, seed)
    }
    fn eval_diff(
        &self,
        i: usize,
        s_cur: &Vector,
        b_cur: &MetricOperator,
        s_prev: &Vector,
        b_prev: &MetricOperator,
        budget: usize,
        seed: u64,
        crn: bool,
    ) -> Result<Vector> {
        self.push(OracleCall {
            diff: true,
            i,
            budget,
            seed,
            crn,
        });
        self.inner
            .eval_diff(i, s_cur, b_cur, s_prev, b_prev, budget, seed, crn)
    }
}

/// `h(s, B) = n^{-1} Σ h_i(s, B)` for an exact oracle.
pub fn mean_field<O: ForwardOracle + ?Sized>(oracle: &O, s: &Vector, b: &MetricOperator) -> Result<Vector> {
    if oracle.exactness() != Exactness::Exact {
        return Err(Error::InexactOracle);
    }
    let n = oracle.n();
    let parts = (0..n)
        .into_par_iter()
        .map(|i| oracle.eval_single(i, s, b, 1, 0))
        .collect::<Result<Vec<_>>>()?;
    Ok(ordered_mean(parts, oracle.dim()))
}

/// Sum in the given order and divide by the count.
pub(crate) fn ordered_mean(parts: Vec<Vector>, dim: usize) -> Vector {
    let count = parts.len() as f64;
    let mut acc = Vector::zeros(dim);
    for p in parts {
        acc += p;
    }
    acc / count
}

/// Seed word for position `j` of a batch holding index `i`.
pub(crate) fn batch_word(j: usize, i: usize) -> u64 {
    ((j as u64) << 32) ^ i as u64
}

/// Refresh estimate `|batch|^{-1} Σ_{i ∈ batch} δ_{t,0,i}` of outer loop `t`.
pub fn spider_refresh<O: ForwardOracle + ?Sized>(
    oracle: &O,
    batch: &[usize],
    s0: &Vector,
    b0: &MetricOperator,
    budget: usize,
    master_seed: u64,
    t: usize,
) -> Result<Vector> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = oracle.n();
    if let Some(&bad) = batch.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidArgument(format!(
            "batch index {bad} out of range for n = {n}"
        )));
    }
    let parts = batch
        .par_iter()
        .enumerate()
        .map(|(j, &i)| {
            let seed = derive_seed(master_seed, t as u64, 0, batch_word(j, i), StreamTag::Refresh);
            oracle.eval_single(i, s0, b0, budget, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ordered_mean(parts, oracle.dim()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    fn scalar_oracle(coefs: &[f64]) -> ExactFiniteSumOracle {
        let comps = coefs
            .iter()
            .map(|&a| Arc::new(move |s: &Vector| s * a) as ComponentGradient)
            .collect();
        exact_finite_sum_oracle(comps, 1, MetricChoice::identity(1)).unwrap()
    }

    #[test]
    fn identity_component() {
        let o = scalar_oracle(&[1.0]);
        let h = o.eval_single(0, &v(&[2.5]), &MetricOperator::identity(1), 1, 0).unwrap();
        assert_eq!(h[0], -2.5);
    }

    #[test]
    fn scaled_metric() {
        let o = scalar_oracle(&[2.0]);
        let b = MetricOperator::from_diagonal(&[4.0]).unwrap();
        let h = o.eval_single(0, &v(&[3.0]), &b, 1, 0).unwrap();
        assert_eq!(h[0], -1.5);
    }

    #[test]
    fn exact_diff_at_same_point_is_zero() {
        let o = scalar_oracle(&[0.3]);
        let b = MetricOperator::identity(1);
        let s = v(&[0.1234567]);
        for crn in [false, true] {
            let d = o.eval_diff(0, &s, &b, &s, &b, 5, 9, crn).unwrap();
            assert_eq!(d[0], 0.0);
        }
    }

    #[test]
    fn quadratic_diff_is_linear() {
        let a = crate::metric::Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let comps = quadratic_components(std::slice::from_ref(&a), &[v(&[1.0, -1.0])]).unwrap();
        let o = exact_finite_sum_oracle(comps, 2, MetricChoice::identity(2)).unwrap();
        let id = MetricOperator::identity(2);
        let (s, sp) = (v(&[0.5, 2.0]), v(&[-1.0, 0.25]));
        let d = o.eval_diff(0, &s, &id, &sp, &id, 1, 0, false).unwrap();
        let expect = -(&a * (&s - &sp));
        assert!((d - expect).norm() < 1e-14);
    }

    #[test]
    fn mean_field_examples() {
        let o = scalar_oracle(&[1.0, 3.0]);
        let id = MetricOperator::identity(1);
        assert_eq!(mean_field(&o, &v(&[1.0]), &id).unwrap()[0], -2.0);
        let single = scalar_oracle(&[1.7]);
        let s = v(&[0.4]);
        assert_eq!(
            mean_field(&single, &s, &id).unwrap(),
            single.eval_single(0, &s, &id, 1, 0).unwrap()
        );
        let noisy = NoisyOracle::new(o, vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            mean_field(&noisy, &s, &id),
            Err(Error::InexactOracle)
        ));
    }

    #[test]
    fn refresh_examples() {
        let o = scalar_oracle(&[1.0, 3.0]);
        let id = MetricOperator::identity(1);
        let s = v(&[1.0]);
        assert_eq!(spider_refresh(&o, &[0], &s, &id, 1, 0, 1).unwrap()[0], -1.0);
        assert_eq!(
            spider_refresh(&o, &[0, 1], &s, &id, 1, 0, 1).unwrap(),
            mean_field(&o, &s, &id).unwrap()
        );
        assert!(matches!(
            spider_refresh(&o, &[], &s, &id, 1, 0, 1),
            Err(Error::EmptyBatch)
        ));
        assert!(spider_refresh(&o, &[2], &s, &id, 1, 0, 1).is_err());
    }

    #[test]
    fn domain_is_enforced() {
        let o = scalar_oracle(&[1.0]).with_domain(ProxFunction::ball(1.0, v(&[0.0])).unwrap());
        let id = MetricOperator::identity(1);
        assert!(matches!(
            o.eval_single(0, &v(&[2.0]), &id, 1, 0),
            Err(Error::DomainViolation)
        ));
    }

    #[test]
    fn profile_zero_pattern() {
        let b = BudgetSchedule::constant(10, 10);
        assert!(ErrorProfile::exact().validate_for(Exactness::Exact).is_ok());
        let p = ErrorProfile::new(0.0, 1.0, 0.0, b.clone()).unwrap();
        assert!(p.validate_for(Exactness::UnbiasedRandom).is_ok());
        assert!(p.validate_for(Exactness::Exact).is_err());
        assert!(p.validate_for(Exactness::DeterministicApprox).is_err());
        let q = ErrorProfile::new(1.0, 0.0, 0.0, b.clone()).unwrap();
        assert!(q.validate_for(Exactness::DeterministicApprox).is_ok());
        assert!(q.validate_for(Exactness::UnbiasedRandom).is_err());
        assert!(ErrorProfile::new(-1.0, 0.0, 0.0, b).is_err());
    }

    #[test]
    fn polynomial_budgets_are_nondecreasing() {
        let s = BudgetSchedule::Polynomial {
            refresh: 10,
            inner: 3,
            outer_exponent: 1.0,
            inner_exponent: 0.5,
        };
        for t in 1..5 {
            for k in 1..10 {
                assert!(s.inner(t, k + 1) >= s.inner(t, k));
            }
            assert!(s.refresh(t + 1) >= s.refresh(t));
        }
    }

    #[test]
    fn noisy_replays() {
        let o = NoisyOracle::new(scalar_oracle(&[1.0]), vec![2.0]).unwrap();
        let id = MetricOperator::identity(1);
        let s = v(&[0.5]);
        let a = o.eval_single(0, &s, &id, 4, 77).unwrap();
        assert_eq!(a, o.eval_single(0, &s, &id, 4, 77).unwrap());
        assert_ne!(a, o.eval_single(0, &s, &id, 4, 78).unwrap());
        // same seed on both sides cancels the noise
        let d = o.eval_diff(0, &s, &id, &s, &id, 4, 5, true).unwrap();
        assert_eq!(d[0], 0.0);
    }
}
