//! Stochastic variable-metric forward-backward and 3P-SPIDER drivers.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sampling::sample_batch;
use super::stepsize::{lambda_gate, GateParams, StepSchedule};
use crate::error::{Error, Result};
use crate::metric::{MetricChoice, MetricOperator, Vector};
use crate::oracle::{batch_word, ordered_mean, spider_refresh, BudgetSchedule, ForwardOracle};
use crate::prox::{prox, ProxFunction};
use crate::seed::{derive_seed, rng_from_seed, StreamTag};

/// Number of inner iterations per outer loop.
#[derive(Debug, Clone, PartialEq)]
pub enum KinSchedule {
    Constant(usize),
    /// `K_in(t)` for `t = 1, 2, ...`; the last value repeats.
    Sequence(Vec<usize>),
}

impl KinSchedule {
    /// Pre-draw `kout` geometric lengths with the given mean (at least 1).
    pub fn geometric(mean: f64, kout: usize, seed: u64) -> Result<Self> {
        if !(mean >= 1.0) || kout == 0 {
            return Err(Error::InvalidArgument(
                "geometric inner-loop mean must be >= 1".into(),
            ));
        }
        let p = 1.0 / mean;
        let mut rng = rng_from_seed(seed);
        let seq = (0..kout)
            .map(|_| {
                let mut k = 1;
                while rng.random::<f64>() >= p {
                    k += 1;
                }
                k
            })
            .collect();
        Ok(KinSchedule::Sequence(seq))
    }

    pub fn at(&self, t: usize) -> usize {
        match self {
            KinSchedule::Constant(k) => *k,
            KinSchedule::Sequence(v) => v[(t.max(1) - 1).min(v.len() - 1)],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            KinSchedule::Constant(k) => *k > 0,
            KinSchedule::Sequence(v) => !v.is_empty() && v.iter().all(|&k| k > 0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("inner-loop lengths must be positive".into()))
        }
    }
}

/// Refresh batch sizes `b'_t`.
#[derive(Debug, Clone, PartialEq)]
pub enum RefreshSchedule {
    Constant(usize),
    Sequence(Vec<usize>),
}

impl RefreshSchedule {
    pub fn at(&self, t: usize) -> usize {
        match self {
            RefreshSchedule::Constant(b) => *b,
            RefreshSchedule::Sequence(v) => v[(t.max(1) - 1).min(v.len() - 1)],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            RefreshSchedule::Constant(b) => *b > 0,
            RefreshSchedule::Sequence(v) => !v.is_empty() && v.iter().all(|&b| b > 0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("refresh batch sizes must be positive".into()))
        }
    }
}

pub type ObjectiveFn = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;

/// Parameters of a run.
#[derive(Clone)]
pub struct RunConfig {
    /// Outer loops for 3P-SPIDER, iterations for VMFB.
    pub kout: usize,
    pub kin: KinSchedule,
    pub b: usize,
    pub b_prime: RefreshSchedule,
    pub stepsize: StepSchedule,
    pub with_replacement: bool,
    pub budgets: BudgetSchedule,
    pub master_seed: u64,
    pub metric: MetricChoice,
    pub objective: Option<ObjectiveFn>,
    /// Share seeds between the two terms of each difference.
    pub crn: bool,
    pub gate: Option<GateParams>,
    pub record_iterates: bool,
    pub record_wallclock: bool,
}

impl std::fmt::Debug for RunConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunConfig")
            .field("kout", &self.kout)
            .field("kin", &self.kin)
            .field("b", &self.b)
            .field("b_prime", &self.b_prime)
            .field("stepsize", &self.stepsize)
            .field("with_replacement", &self.with_replacement)
            .field("budgets", &self.budgets)
            .field("master_seed", &self.master_seed)
            .field("crn", &self.crn)
            .finish_non_exhaustive()
    }
}

impl RunConfig {
    /// Single-loop defaults: constant step, constant metric, full refresh.
    pub fn new(n: usize, b: usize, kout: usize, gamma: f64, metric: MetricChoice) -> Self {
        RunConfig {
            kout,
            kin: KinSchedule::Constant(n.div_ceil(b.max(1)).max(1)),
            b,
            b_prime: RefreshSchedule::Constant(n),
            stepsize: StepSchedule::Constant(gamma),
            with_replacement: false,
            budgets: BudgetSchedule::default(),
            master_seed: 0,
            metric,
            objective: None,
            crn: false,
            gate: None,
            record_iterates: false,
            record_wallclock: true,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.kout == 0 || self.b == 0 {
            return Err(Error::InvalidArgument("kout and b must be positive".into()));
        }
        if !self.with_replacement && self.b > n {
            return Err(Error::BatchTooLarge { b: self.b, n });
        }
        self.kin.validate()?;
        self.b_prime.validate()?;
        if !self.with_replacement {
            let t_max = match &self.b_prime {
                RefreshSchedule::Constant(_) => 1,
                RefreshSchedule::Sequence(v) => v.len(),
            };
            if let Some(bp) = (1..=t_max).map(|t| self.b_prime.at(t)).find(|&bp| bp > n) {
                return Err(Error::BatchTooLarge { b: bp, n });
            }
        }
        self.stepsize.validate()?;
        self.budgets.validate()
    }
}

/// One row of a run trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub k: usize,
    pub delta: f64,
    pub iterate_sq_norm: f64,
    pub objective: Option<f64>,
    pub oracle_calls_cum: u64,
    pub prox_calls_cum: u64,
    pub epoch_fraction: f64,
    pub wall_ns: u64,
}

/// State of the 3P-SPIDER recursion.
#[derive(Debug, Clone)]
pub struct SpiderState {
    pub s_cur: Vector,
    pub s_prev: Vector,
    pub estimator: Vector,
    pub b_cur: Arc<MetricOperator>,
    pub t: usize,
    pub k: usize,
    pub oracle_call_count: u64,
    pub prox_call_count: u64,
}

/// Output of a driver.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: Vec<TraceRecord>,
    pub final_iterate: Vector,
    /// Iterates `Ŝ` after each step, when requested.
    pub iterates: Vec<Vector>,
    /// Number of steps where the Λ gate was at least 1/2.
    pub gate_violations: usize,
    pub max_gate: f64,
    /// Sum of the simulation budgets over all single evaluations.
    pub budget_units: u64,
    pub state: Option<SpiderState>,
}

/// `γ^{-2} ‖prox_{γg}^B(s + γ field) - s‖²_B`.
pub fn stationarity_delta(
    g: &ProxFunction,
    gamma: f64,
    b: &MetricOperator,
    s: &Vector,
    field: &Vector,
) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {gamma}")));
    }
    let p = prox(g, gamma, b, &(s + field * gamma))?;
    Ok(b.norm_sq(&(p - s))? / (gamma * gamma))
}

struct Counters {
    oracle_calls: u64,
    prox_calls: u64,
    visited: u64,
    budget_units: u64,
    n: f64,
    start: Instant,
    wallclock: bool,
}

impl Counters {
    fn new(n: usize, wallclock: bool) -> Self {
        Counters {
            oracle_calls: 0,
            prox_calls: 0,
            visited: 0,
            budget_units: 0,
            n: n as f64,
            start: Instant::now(),
            wallclock,
        }
    }

    fn epochs(&self) -> f64 {
        self.visited as f64 / self.n
    }

    fn record(
        &self,
        t: usize,
        k: usize,
        delta: f64,
        s: &Vector,
        objective: &Option<ObjectiveFn>,
    ) -> TraceRecord {
        TraceRecord {
            t,
            k,
            delta,
            iterate_sq_norm: s.norm_squared(),
            objective: objective.as_ref().map(|f| f(s)),
            oracle_calls_cum: self.oracle_calls,
            prox_calls_cum: self.prox_calls,
            epoch_fraction: self.epochs(),
            wall_ns: if self.wallclock {
                self.start.elapsed().as_nanos() as u64
            } else {
                0
            },
        }
    }
}

fn draw_batch(config: &RunConfig, n: usize, size: usize, t: usize, k: usize) -> Result<Vec<usize>> {
    let seed = derive_seed(config.master_seed, t as u64, k as u64, 0, StreamTag::Batch);
    let mut batch = sample_batch(n, size, config.with_replacement, seed)?;
    batch.sort_unstable();
    Ok(batch)
}

struct Gate {
    violations: usize,
    max: f64,
}

impl Gate {
    #[allow(clippy::too_many_arguments)]
    fn check(&mut self, params: &Option<GateParams>, gamma: f64, kin: usize, b: usize, mbar: usize, t: usize, k: usize) {
        if let Some(p) = params {
            let lam = lambda_gate(gamma, &p.profile, kin, b, p.c_vb, mbar as f64);
            self.max = self.max.max(lam);
            if lam >= 0.5 {
                self.violations += 1;
                log::warn!("step size {gamma} gives gate value {lam} >= 1/2 at (t={t}, k={k})");
            }
        }
    }
}

fn check_start(g: &ProxFunction, s: &Vector, dim: usize) -> Result<()> {
    if s.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: s.len(),
        });
    }
    if !g.domain_check(s) {
        return Err(Error::DomainViolation);
    }
    Ok(())
}

/// Stochastic variable-metric forward-backward: `kout` iterations of
/// `Ŝ ← prox_{γg}^{B}(Ŝ + γ b^{-1} Σ_{i∈batch} δ_i)`.
pub fn run_vmfb<O: ForwardOracle + ?Sized>(
    config: &RunConfig,
    oracle: &O,
    g: &ProxFunction,
    s_init: &Vector,
) -> Result<RunResult> {
    let n = oracle.n();
    config.validate(n)?;
    check_start(g, s_init, oracle.dim())?;
    let mut c = Counters::new(n, config.record_wallclock);
    let mut gate = Gate { violations: 0, max: 0.0 };
    let mut s = s_init.clone();
    let mut trace = Vec::with_capacity(config.kout);
    let mut iterates = Vec::new();
    let kin = config.kin.at(1);

    for k in 0..config.kout {
        let batch = draw_batch(config, n, config.b, 1, k + 1)?;
        let b_next = config.metric.at(&s)?;
        let budget = config.budgets.inner(1, k + 1);
        let parts = batch
            .par_iter()
            .enumerate()
            .map(|(j, &i)| {
                let seed = derive_seed(
                    config.master_seed,
                    1,
                    (k + 1) as u64,
                    batch_word(j, i),
                    StreamTag::Current,
                );
                oracle.eval_single(i, &s, &b_next, budget, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        let field = ordered_mean(parts, oracle.dim());
        c.oracle_calls += batch.len() as u64;
        c.budget_units += (batch.len() * budget) as u64;

        let gamma = config.stepsize.gamma(1, k, c.epochs());
        gate.check(&config.gate, gamma, kin, config.b, budget, 1, k);
        let next = prox(g, gamma, &b_next, &(&s + &field * gamma))?;
        c.prox_calls += 1;
        c.visited += batch.len() as u64;
        let delta = b_next.norm_sq(&(&next - &s))? / (gamma * gamma);
        s = next;
        trace.push(c.record(1, k + 1, delta, &s, &config.objective));
        if config.record_iterates {
            iterates.push(s.clone());
        }
    }

    Ok(RunResult {
        trace,
        final_iterate: s,
        iterates,
        gate_violations: gate.violations,
        max_gate: gate.max,
        budget_units: c.budget_units,
        state: None,
    })
}

/// Perturbed proximal preconditioned SPIDER.
pub fn run_3p_spider<O: ForwardOracle + ?Sized>(
    config: &RunConfig,
    oracle: &O,
    g: &ProxFunction,
    s_init: &Vector,
    b_init: &MetricOperator,
) -> Result<RunResult> {
    let n = oracle.n();
    let q = oracle.dim();
    config.validate(n)?;
    check_start(g, s_init, q)?;
    if b_init.dim() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            found: b_init.dim(),
        });
    }
    let mut c = Counters::new(n, config.record_wallclock);
    let mut gate = Gate { violations: 0, max: 0.0 };
    let mut trace = Vec::new();
    let mut iterates = Vec::new();

    // B_{t-1,K_in}, carried into the next refresh.
    let mut b_last: Arc<MetricOperator> = match &config.metric {
        MetricChoice::Constant(b) if **b == *b_init => Arc::clone(b),
        _ => Arc::new(b_init.clone()),
    };
    let mut state = SpiderState {
        s_cur: s_init.clone(),
        s_prev: s_init.clone(),
        estimator: Vector::zeros(q),
        b_cur: Arc::clone(&b_last),
        t: 0,
        k: 0,
        oracle_call_count: 0,
        prox_call_count: 0,
    };

    for t in 1..=config.kout {
        let kin = config.kin.at(t);
        let bp = config.b_prime.at(t);
        state.t = t;
        state.k = 0;
        state.s_prev = state.s_cur.clone();
        state.b_cur = Arc::clone(&b_last);

        let refresh_batch = draw_batch(config, n, bp, t, 0)?;
        let refresh_budget = config.budgets.refresh(t);
        state.estimator = spider_refresh(
            oracle,
            &refresh_batch,
            &state.s_cur,
            &state.b_cur,
            refresh_budget,
            config.master_seed,
            t,
        )?;
        c.oracle_calls += bp as u64;
        c.budget_units += (bp * refresh_budget) as u64;
        c.visited += bp as u64;

        for k in 0..kin {
            let b_next = config.metric.at(&state.s_cur)?;
            let budget = config.budgets.inner(t, k + 1);
            let same_metric = Arc::ptr_eq(&b_next, &state.b_cur) || *b_next == *state.b_cur;
            if !(k == 0 && same_metric) {
                let batch = draw_batch(config, n, config.b, t, k + 1)?;
                let parts = batch
                    .par_iter()
                    .enumerate()
                    .map(|(j, &i)| {
                        let seed = derive_seed(
                            config.master_seed,
                            t as u64,
                            (k + 1) as u64,
                            batch_word(j, i),
                            StreamTag::Current,
                        );
                        oracle.eval_diff(
                            i,
                            &state.s_cur,
                            &b_next,
                            &state.s_prev,
                            &state.b_cur,
                            budget,
                            seed,
                            config.crn,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                state.estimator += ordered_mean(parts, q);
                c.oracle_calls += 2 * batch.len() as u64;
                c.budget_units += (2 * batch.len() * budget) as u64;
            }
            c.visited += config.b as u64;

            let gamma = config.stepsize.gamma(t, k, c.epochs());
            gate.check(&config.gate, gamma, kin, config.b, budget, t, k);
            let half = &state.s_cur + &state.estimator * gamma;
            let next = prox(g, gamma, &b_next, &half)?;
            c.prox_calls += 1;
            let delta = b_next.norm_sq(&(&next - &state.s_cur))? / (gamma * gamma);

            state.s_prev = std::mem::replace(&mut state.s_cur, next);
            state.b_cur = b_next;
            state.k = k + 1;
            trace.push(c.record(t, k + 1, delta, &state.s_cur, &config.objective));
            if config.record_iterates {
                iterates.push(state.s_cur.clone());
            }
        }
        b_last = Arc::clone(&state.b_cur);
    }

    state.oracle_call_count = c.oracle_calls;
    state.prox_call_count = c.prox_calls;
    Ok(RunResult {
        trace,
        final_iterate: state.s_cur.clone(),
        iterates,
        gate_violations: gate.violations,
        max_gate: gate.max,
        budget_units: c.budget_units,
        state: Some(state),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{exact_finite_sum_oracle, ComponentGradient};

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    fn identity_oracle(n: usize) -> crate::oracle::ExactFiniteSumOracle {
        let comps = (0..n)
            .map(|_| Arc::new(|s: &Vector| s.clone()) as ComponentGradient)
            .collect();
        exact_finite_sum_oracle(comps, 1, MetricChoice::identity(1)).unwrap()
    }

    #[test]
    fn geometric_decay() {
        let o = identity_oracle(1);
        let mut cfg = RunConfig::new(1, 1, 5, 0.5, MetricChoice::identity(1));
        cfg.record_iterates = true;
        let r = run_vmfb(&cfg, &o, &ProxFunction::Zero, &v(&[1.0])).unwrap();
        let xs: Vec<f64> = r.iterates.iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![0.5, 0.25, 0.125, 0.0625, 0.03125]);
    }

    #[test]
    fn stationary_start() {
        let o = identity_oracle(3);
        let cfg = RunConfig::new(3, 3, 2, 0.7, MetricChoice::identity(1));
        let r = run_vmfb(&cfg, &o, &ProxFunction::Zero, &v(&[0.0])).unwrap();
        assert!(r.trace[0].delta <= 1e-12);
    }

    #[test]
    fn delta_examples() {
        let id = MetricOperator::identity(2);
        let f = v(&[0.3, -2.0]);
        let d = stationarity_delta(&ProxFunction::Zero, 0.4, &id, &v(&[1.0, 1.0]), &f).unwrap();
        assert!((d - f.norm_squared()).abs() < 1e-12);
        let ball = ProxFunction::ball(1.0, v(&[0.0, 0.0])).unwrap();
        let d = stationarity_delta(&ball, 1.0, &id, &v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap();
        assert!(d.abs() < 1e-20);
        assert!(stationarity_delta(&ball, 0.0, &id, &v(&[0.0, 0.0]), &f).is_err());
    }

    #[test]
    fn counters_match_hand_count() {
        let o = identity_oracle(6);
        let mut cfg = RunConfig::new(6, 2, 3, 0.1, MetricChoice::identity(1));
        cfg.kin = KinSchedule::Constant(4);
        cfg.b_prime = RefreshSchedule::Constant(6);
        let r = run_3p_spider(&cfg, &o, &ProxFunction::Zero, &v(&[1.0]), &MetricOperator::identity(1)).unwrap();
        let last = r.trace.last().unwrap();
        assert_eq!(last.oracle_calls_cum, 3 * 6 + 2 * 2 * 3 * 3);
        assert_eq!(last.prox_calls_cum, 12);
        assert!((last.epoch_fraction - 3.0 * (6.0 + 8.0) / 6.0).abs() < 1e-12);
        assert_eq!(r.trace.len(), 12);
        assert!(r.trace.windows(2).all(|w| w[0].oracle_calls_cum <= w[1].oracle_calls_cum));
    }

    #[test]
    fn single_inner_loop_is_full_gradient() {
        let o = identity_oracle(4);
        let mut sp = RunConfig::new(4, 4, 6, 0.3, MetricChoice::identity(1));
        sp.kin = KinSchedule::Constant(1);
        sp.record_iterates = true;
        let a = run_3p_spider(&sp, &o, &ProxFunction::Zero, &v(&[2.0]), &MetricOperator::identity(1)).unwrap();
        let b = run_vmfb(&sp, &o, &ProxFunction::Zero, &v(&[2.0])).unwrap();
        for (x, y) in a.iterates.iter().zip(&b.iterates) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn rejects_start_outside_domain() {
        let o = identity_oracle(2);
        let cfg = RunConfig::new(2, 1, 2, 0.3, MetricChoice::identity(1));
        let ball = ProxFunction::ball(1.0, v(&[0.0])).unwrap();
        assert!(matches!(
            run_vmfb(&cfg, &o, &ball, &v(&[3.0])),
            Err(Error::DomainViolation)
        ));
    }

    #[test]
    fn geometric_kin_is_predrawn() {
        let a = KinSchedule::geometric(5.0, 20, 1).unwrap();
        assert_eq!(a, KinSchedule::geometric(5.0, 20, 1).unwrap());
        assert!((1..=20).all(|t| a.at(t) >= 1));
    }
}
