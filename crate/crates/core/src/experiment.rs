//! Configured experiments: problem construction, replicated runs, trace and
//! summary files, and side-by-side comparisons.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    max_initial_stepsize, run_3p_spider, run_vmfb, GateParams, KinSchedule, ObjectiveFn,
    RefreshSchedule, RunConfig, RunResult, StepSchedule, TraceRecord,
};
use crate::em::{em_field_oracle, EmEvaluation, GaussianFixture};
use crate::error::{ConfigIssue, Error, Result};
use crate::logreg::{
    build_model, em_statistic_model, ingest_dataset, synthesize_dataset_with, IntegralMethod,
    LogRegEmModel, SyntheticOptions,
};
use crate::metric::{MetricChoice, MetricOperator, Vector};
use crate::oracle::{BudgetSchedule, ForwardOracle};
use crate::problems::QuadraticToy;
use crate::prox::ProxFunction;
use crate::seed::{derive_seed, rng_from_seed, StreamTag};

/// Width of the trailing window used for the summary statistic, in epochs.
pub const LAST_WINDOW_EPOCHS: f64 = 5.0;

fn default_sigma2() -> f64 {
    0.05
}
fn default_tau() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_one() -> f64 {
    1.0
}
fn default_toy_n() -> usize {
    20
}
fn default_toy_q() -> usize {
    5
}
fn default_fixture_n() -> usize {
    100
}
fn default_burn_in() -> usize {
    crate::mcmc::DEFAULT_BURN_IN
}
fn default_replicates() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Synthetic {
        n: usize,
        d: usize,
        /// Drawn from `N(0, I)` with the problem seed when absent.
        #[serde(default)]
        theta_star: Option<Vec<f64>>,
        #[serde(default = "default_sigma2")]
        sigma2: f64,
        #[serde(default = "default_tau")]
        tau: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_true")]
        intercept: bool,
        #[serde(default = "default_one")]
        feature_scale: f64,
    },
    File {
        path: PathBuf,
        #[serde(default = "default_sigma2")]
        sigma2: f64,
        #[serde(default = "default_tau")]
        tau: f64,
    },
    QuadraticToy {
        #[serde(default = "default_toy_n")]
        n: usize,
        #[serde(default = "default_toy_q")]
        q: usize,
        #[serde(default)]
        seed: u64,
    },
    GaussianEmFixture {
        #[serde(default = "default_fixture_n")]
        n: usize,
        #[serde(default = "default_one")]
        theta: f64,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    Em,
    OnlineEm,
    Spider,
    SpiderCorr,
    Vmfb,
}

impl AlgorithmName {
    pub fn as_str(&self) -> &'static str {
        match self {
            AlgorithmName::Em => "em",
            AlgorithmName::OnlineEm => "online_em",
            AlgorithmName::Spider => "spider",
            AlgorithmName::SpiderCorr => "spider_corr",
            AlgorithmName::Vmfb => "vmfb",
        }
    }

    fn is_spider(&self) -> bool {
        matches!(self, AlgorithmName::Spider | AlgorithmName::SpiderCorr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleClass {
    #[default]
    ExactQuadrature,
    Mcmc,
}

/// Step sizes: `"max_initial"` or `[[epoch_from, gamma], ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepsizeSpec {
    Named(String),
    Pieces(Vec<(f64, f64)>),
}

impl Default for StepsizeSpec {
    fn default() -> Self {
        StepsizeSpec::Pieces(vec![(0.0, 0.4), (6.0, 0.1)])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetGrowth {
    pub outer_exponent: f64,
    pub inner_exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub name: AlgorithmName,
    pub epochs: f64,
    #[serde(default)]
    pub stepsize: StepsizeSpec,
    #[serde(default)]
    pub kin: Option<usize>,
    #[serde(default)]
    pub b: Option<usize>,
    #[serde(default)]
    pub b_prime: Option<usize>,
    #[serde(default)]
    pub oracle: OracleClass,
    #[serde(default)]
    pub m0: Option<usize>,
    #[serde(default)]
    pub mt: Option<usize>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub with_replacement: bool,
    #[serde(default)]
    pub budget_growth: Option<BudgetGrowth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Zero the wall-clock columns so that repeated runs are byte-identical.
    #[serde(default = "default_true")]
    pub record_wallclock: bool,
    #[serde(default = "default_true")]
    pub record_objective: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            replicates: 1,
            master_seed: 0,
            record_wallclock: true,
            record_objective: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub run: RunSettings,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let path = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}")
                })
                .unwrap_or_else(|| "<document>".into());
            Error::Config {
                path,
                message: e.message().to_string(),
            }
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            path: "<document>".into(),
            message: e.to_string(),
        })
    }

    /// Every violated constraint, each with its field path.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        let mut push = |path: &str, message: String| {
            issues.push(ConfigIssue {
                path: path.to_string(),
                message,
            })
        };
        let n = match &self.problem {
            ProblemConfig::Synthetic {
                n,
                d,
                theta_star,
                sigma2,
                tau,
                feature_scale,
                ..
            } => {
                if *n == 0 {
                    push("problem.n", "must be at least 1".into());
                }
                if *d == 0 {
                    push("problem.d", "must be at least 1".into());
                }
                if let Some(t) = theta_star {
                    if t.len() != *d {
                        push("problem.theta_star", format!("has {} entries, expected d = {d}", t.len()));
                    }
                    if t.iter().any(|v| !v.is_finite()) {
                        push("problem.theta_star", "entries must be finite".into());
                    }
                }
                if !(*sigma2 > 0.0 && sigma2.is_finite()) {
                    push("problem.sigma2", "must be positive".into());
                }
                if !(*tau > 0.0 && tau.is_finite()) {
                    push("problem.tau", "must be positive".into());
                }
                if !(*feature_scale > 0.0 && feature_scale.is_finite()) {
                    push("problem.feature_scale", "must be positive".into());
                }
                Some(*n)
            }
            ProblemConfig::File { path, sigma2, tau } => {
                if path.as_os_str().is_empty() {
                    push("problem.path", "must not be empty".into());
                }
                if !(*sigma2 > 0.0 && sigma2.is_finite()) {
                    push("problem.sigma2", "must be positive".into());
                }
                if !(*tau > 0.0 && tau.is_finite()) {
                    push("problem.tau", "must be positive".into());
                }
                None
            }
            ProblemConfig::QuadraticToy { n, q, .. } => {
                if *n == 0 {
                    push("problem.n", "must be at least 1".into());
                }
                if *q == 0 {
                    push("problem.q", "must be at least 1".into());
                }
                if self.algorithm.oracle == OracleClass::Mcmc {
                    push("algorithm.oracle", "the quadratic problem only has an exact oracle".into());
                }
                Some(*n)
            }
            ProblemConfig::GaussianEmFixture { n, theta, .. } => {
                if *n == 0 {
                    push("problem.n", "must be at least 1".into());
                }
                if !theta.is_finite() {
                    push("problem.theta", "must be finite".into());
                }
                Some(*n)
            }
        };

        let a = &self.algorithm;
        if !(a.epochs > 0.0 && a.epochs.is_finite()) {
            push("algorithm.epochs", "must be positive".into());
        }
        match &a.stepsize {
            StepsizeSpec::Named(s) if s == "max_initial" => {
                if !matches!(self.problem, ProblemConfig::QuadraticToy { .. }) {
                    push(
                        "algorithm.stepsize",
                        "`max_initial` needs known smoothness constants (quadratic_toy only)".into(),
                    );
                }
            }
            StepsizeSpec::Named(s) => {
                push("algorithm.stepsize", format!("unknown schedule `{s}`"));
            }
            StepsizeSpec::Pieces(p) => {
                if p.is_empty() {
                    push("algorithm.stepsize", "needs at least one [epoch, gamma] pair".into());
                }
                for (j, (e, g)) in p.iter().enumerate() {
                    if !(*e >= 0.0 && e.is_finite()) {
                        push(&format!("algorithm.stepsize[{j}]"), "epoch must be nonnegative".into());
                    }
                    if !(*g > 0.0 && g.is_finite()) {
                        push(&format!("algorithm.stepsize[{j}]"), "step size must be positive".into());
                    }
                }
                for (j, w) in p.windows(2).enumerate() {
                    if w[1].0 < w[0].0 {
                        push(
                            &format!("algorithm.stepsize[{}]", j + 1),
                            "epochs must be nondecreasing".into(),
                        );
                    }
                }
            }
        }
        for (name, v) in [("kin", a.kin), ("b", a.b), ("b_prime", a.b_prime), ("m0", a.m0), ("mt", a.mt)] {
            if v == Some(0) {
                push(&format!("algorithm.{name}"), "must be at least 1".into());
            }
        }
        if let Some(n) = n {
            if !a.with_replacement {
                for (name, v) in [("b", a.b), ("b_prime", a.b_prime)] {
                    if let Some(v) = v {
                        if v > n {
                            push(
                                &format!("algorithm.{name}"),
                                format!("{v} exceeds n = {n} without replacement"),
                            );
                        }
                    }
                }
            }
        }
        if let Some(g) = &a.budget_growth {
            if !(g.outer_exponent >= 0.0 && g.inner_exponent >= 0.0) {
                push("algorithm.budget_growth", "exponents must be nonnegative".into());
            }
        }
        if self.run.replicates == 0 {
            push("run.replicates", "must be at least 1".into());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(issues))
        }
    }
}

/// Instantiated problem shared by all replicates.
#[derive(Clone)]
pub enum Problem {
    LogReg(Arc<LogRegEmModel>),
    Quadratic(Arc<QuadraticToy>),
    Fixture(Arc<GaussianFixture>),
}

impl Problem {
    pub fn build(config: &ProblemConfig, burn_in: usize) -> Result<Self> {
        match config {
            ProblemConfig::Synthetic {
                n,
                d,
                theta_star,
                sigma2,
                tau,
                seed,
                intercept,
                feature_scale,
            } => {
                let theta = match theta_star {
                    Some(t) => t.clone(),
                    None => {
                        let mut rng = rng_from_seed(derive_seed(*seed, 1, 0, 0, StreamTag::Synthetic));
                        (0..*d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
                    }
                };
                let opts = SyntheticOptions {
                    intercept: *intercept,
                    feature_scale: *feature_scale,
                };
                let ds = synthesize_dataset_with(*n, *d, &theta, *sigma2, *seed, opts)?;
                let model = build_model(&ds, *sigma2, *tau)?.with_burn_in(burn_in);
                Ok(Problem::LogReg(Arc::new(em_statistic_model(Arc::new(model))?)))
            }
            ProblemConfig::File { path, sigma2, tau } => {
                let ds = ingest_dataset(path)?;
                let model = build_model(&ds, *sigma2, *tau)?.with_burn_in(burn_in);
                Ok(Problem::LogReg(Arc::new(em_statistic_model(Arc::new(model))?)))
            }
            ProblemConfig::QuadraticToy { n, q, seed } => {
                Ok(Problem::Quadratic(Arc::new(QuadraticToy::generate(*n, *q, *seed)?)))
            }
            ProblemConfig::GaussianEmFixture { n, theta, seed } => {
                Ok(Problem::Fixture(Arc::new(GaussianFixture::synthetic(*n, *theta, *seed)?)))
            }
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Problem::LogReg(m) => m.model().n(),
            Problem::Quadratic(t) => t.n(),
            Problem::Fixture(f) => f.observations().len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Problem::LogReg(m) => m.model().dim(),
            Problem::Quadratic(t) => t.dim(),
            Problem::Fixture(_) => 1,
        }
    }
}

/// Sizes derived from a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSettings {
    pub n: usize,
    pub kin: usize,
    pub b: usize,
    pub b_prime: usize,
    pub m0: usize,
    pub mt: usize,
    pub kout: usize,
}

/// `K_in`, `b`, `b'`, budgets and the number of iterations implied by the epoch budget.
pub fn resolve(config: &AlgorithmConfig, n: usize) -> ResolvedSettings {
    let root = (n as f64).sqrt().ceil() as usize;
    let (kin, b) = match (config.kin, config.b) {
        (Some(k), Some(b)) => (k, b),
        (Some(k), None) => (k, n.div_ceil(k).max(1)),
        (None, Some(b)) => (n.div_ceil(b).max(1), b),
        (None, None) => {
            let k = ((n as f64).sqrt() / 2.0).ceil().max(1.0) as usize;
            (k, n.div_ceil(k).max(1))
        }
    };
    let b_prime = config.b_prime.unwrap_or(n);
    let m0 = config.m0.unwrap_or(2 * root);
    let mt = config.mt.unwrap_or(2 * root);
    let e = config.epochs;
    let (kin, b, kout) = match config.name {
        AlgorithmName::Em => (1, n, e.ceil().max(1.0) as usize),
        AlgorithmName::OnlineEm | AlgorithmName::Vmfb => {
            (kin, b, (e * n as f64 / b as f64).ceil().max(1.0) as usize)
        }
        AlgorithmName::Spider | AlgorithmName::SpiderCorr => {
            let per_outer = (b_prime + kin * b) as f64 / n as f64;
            (kin, b, (e / per_outer).round().max(1.0) as usize)
        }
    };
    ResolvedSettings {
        n,
        kin,
        b,
        b_prime,
        m0,
        mt,
        kout,
    }
}

/// Everything needed to execute one replicate.
pub struct PreparedRun {
    pub algorithm: AlgorithmName,
    pub settings: ResolvedSettings,
    pub run_config: RunConfig,
    pub oracle: Arc<dyn ForwardOracle>,
    pub g: ProxFunction,
    pub s_init: Vector,
    pub b_init: MetricOperator,
    pub monte_carlo: bool,
    pub burn_in: usize,
}

impl PreparedRun {
    pub fn execute(&self) -> Result<RunResult> {
        self.execute_with(self.oracle.as_ref())
    }

    /// Run against a substitute oracle (for instance a recording wrapper).
    pub fn execute_with<O: ForwardOracle + ?Sized>(&self, oracle: &O) -> Result<RunResult> {
        if self.algorithm.is_spider() {
            run_3p_spider(&self.run_config, oracle, &self.g, &self.s_init, &self.b_init)
        } else {
            run_vmfb(&self.run_config, oracle, &self.g, &self.s_init)
        }
    }
}

/// Seed of replicate `r`.
pub fn replicate_seed(master: u64, r: usize) -> u64 {
    derive_seed(master, r as u64, 0, 0, StreamTag::Replicate)
}

pub fn prepare(config: &ExperimentConfig, problem: &Problem, replicate: usize) -> Result<PreparedRun> {
    let a = &config.algorithm;
    let n = problem.n();
    let q = problem.dim();
    let settings = resolve(a, n);
    let monte_carlo = a.oracle == OracleClass::Mcmc;
    let method = if monte_carlo {
        IntegralMethod::Mcmc
    } else {
        IntegralMethod::Quadrature
    };

    let (oracle, g, metric, objective, gate): (
        Arc<dyn ForwardOracle>,
        ProxFunction,
        MetricChoice,
        Option<ObjectiveFn>,
        Option<GateParams>,
    ) = match problem {
        Problem::LogReg(m) => {
            let oracle = Arc::new(m.oracle(method)?);
            let g = m.model().statistic_constraint()?;
            let mm = Arc::clone(m);
            let obj: ObjectiveFn = Arc::new(move |s: &Vector| mm.objective(s).unwrap_or(f64::NAN));
            (oracle, g, m.metric_choice(), Some(obj), None)
        }
        Problem::Quadratic(t) => {
            let gate = GateParams {
                profile: t.smoothness()?,
                c_vb: 0.0,
            };
            (
                Arc::new(t.oracle()?),
                t.constraint(),
                MetricChoice::identity(q),
                Some(t.objective_fn()),
                Some(gate),
            )
        }
        Problem::Fixture(f) => {
            let mode = if monte_carlo {
                EmEvaluation::MonteCarlo
            } else {
                EmEvaluation::Exact
            };
            let oracle = Arc::new(em_field_oracle(Arc::clone(f), mode)?);
            let ff = Arc::clone(f);
            let obj: ObjectiveFn =
                Arc::new(move |s: &Vector| ff.neg_log_likelihood(s[0]) / ff.observations().len() as f64);
            (oracle, ProxFunction::Zero, MetricChoice::identity(1), Some(obj), None)
        }
    };

    let stepsize = match &a.stepsize {
        StepsizeSpec::Pieces(p) => StepSchedule::PiecewiseEpoch(p.clone()),
        StepsizeSpec::Named(_) => {
            let gp = gate.as_ref().ok_or_else(|| {
                Error::Unsupported("automatic step size needs smoothness constants".into())
            })?;
            StepSchedule::Constant(max_initial_stepsize(
                &gp.profile,
                settings.kin,
                settings.b,
                gp.c_vb,
                settings.mt as f64,
            )?)
        }
    };
    let budgets = match &a.budget_growth {
        None => BudgetSchedule::constant(settings.m0, settings.mt),
        Some(gr) => BudgetSchedule::Polynomial {
            refresh: settings.m0,
            inner: settings.mt,
            outer_exponent: gr.outer_exponent,
            inner_exponent: gr.inner_exponent,
        },
    };
    let b_init = metric.at(&Vector::zeros(q))?.as_ref().clone();
    let run_config = RunConfig {
        kout: settings.kout,
        kin: KinSchedule::Constant(settings.kin),
        b: settings.b,
        b_prime: RefreshSchedule::Constant(settings.b_prime),
        stepsize,
        with_replacement: a.with_replacement,
        budgets,
        master_seed: replicate_seed(config.run.master_seed, replicate),
        metric,
        objective: if config.run.record_objective { objective } else { None },
        crn: a.name == AlgorithmName::SpiderCorr,
        gate,
        record_iterates: false,
        record_wallclock: config.run.record_wallclock,
    };
    Ok(PreparedRun {
        algorithm: a.name,
        settings,
        run_config,
        oracle,
        g,
        s_init: Vector::zeros(q),
        b_init,
        monte_carlo,
        burn_in: a.burn_in,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        let k = v.len();
        let median = if k % 2 == 1 {
            v[k / 2]
        } else {
            0.5 * (v[k / 2 - 1] + v[k / 2])
        };
        Some(Stats {
            min: v[0],
            mean: v.iter().sum::<f64>() / k as f64,
            median,
            max: v[k - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub replicate: usize,
    pub seed: u64,
    pub final_delta: f64,
    pub last_window_mean_delta: f64,
    pub epochs: f64,
    pub wall_ns: u64,
    pub oracle_calls: u64,
    pub mc_draws: u64,
    pub gate_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub final_delta: Stats,
    pub last_window_mean_delta: Stats,
}

/// Summary of all replicates of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub algorithm: AlgorithmName,
    pub problem: ProblemConfig,
    pub settings: ResolvedSettings,
    pub replicates: Vec<ReplicateSummary>,
    pub envelope: Envelope,
    pub per_epoch: Vec<EpochStats>,
}

/// Mean Δ over the records in `(e - 1, e]` for each whole epoch `e`.
pub fn per_epoch_means(trace: &[TraceRecord]) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in trace {
        let e = (r.epoch_fraction - 1e-9).ceil().max(1.0) as usize;
        let slot = acc.entry(e).or_insert((0.0, 0));
        slot.0 += r.delta;
        slot.1 += 1;
    }
    acc.into_iter().map(|(e, (s, c))| (e, s / c as f64)).collect()
}

/// Mean Δ over the trailing window of `LAST_WINDOW_EPOCHS` epochs.
pub fn last_window_mean(trace: &[TraceRecord]) -> f64 {
    let Some(last) = trace.last() else {
        return f64::NAN;
    };
    let from = last.epoch_fraction - LAST_WINDOW_EPOCHS;
    let sel: Vec<f64> = trace
        .iter()
        .filter(|r| r.epoch_fraction > from + 1e-9)
        .map(|r| r.delta)
        .collect();
    sel.iter().sum::<f64>() / sel.len() as f64
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    for r in trace {
        w.serialize(r)?;
    }
    if trace.is_empty() {
        w.write_record([
            "t",
            "k",
            "delta",
            "iterate_sq_norm",
            "objective",
            "oracle_calls_cum",
            "prox_calls_cum",
            "epoch_fraction",
            "wall_ns",
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Traces and summary of one configuration.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub traces: Vec<Vec<TraceRecord>>,
    pub summary: SummaryRecord,
}

/// Run every replicate; when `out_dir` is given, write
/// `trace_<algo>_<r>.csv` for each replicate and `summary.json`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentOutput> {
    config.validate()?;
    let problem = Problem::build(&config.problem, config.algorithm.burn_in)?;
    run_on_problem(config, &problem, out_dir)
}

/// As [`run_experiment`] on an already built problem.
pub fn run_on_problem(
    config: &ExperimentConfig,
    problem: &Problem,
    out_dir: Option<&Path>,
) -> Result<ExperimentOutput> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let algo = config.algorithm.name;
    let results = (0..config.run.replicates)
        .into_par_iter()
        .map(|r| -> Result<(Vec<TraceRecord>, ReplicateSummary, ResolvedSettings)> {
            let prepared = prepare(config, problem, r)?;
            let result = prepared.execute()?;
            if let Some(dir) = out_dir {
                write_trace_csv(&dir.join(format!("trace_{}_{r}.csv", algo.as_str())), &result.trace)?;
            }
            let last = result.trace.last().cloned();
            let oracle_calls = last.as_ref().map_or(0, |l| l.oracle_calls_cum);
            let mc_draws = if prepared.monte_carlo {
                result.budget_units + prepared.burn_in as u64 * oracle_calls
            } else {
                0
            };
            let summary = ReplicateSummary {
                replicate: r,
                seed: prepared.run_config.master_seed,
                final_delta: last.as_ref().map_or(f64::NAN, |l| l.delta),
                last_window_mean_delta: last_window_mean(&result.trace),
                epochs: last.as_ref().map_or(0.0, |l| l.epoch_fraction),
                wall_ns: last.as_ref().map_or(0, |l| l.wall_ns),
                oracle_calls,
                mc_draws,
                gate_violations: result.gate_violations,
            };
            Ok((result.trace, summary, prepared.settings))
        })
        .collect::<Result<Vec<_>>>()?;

    let settings = results[0].2.clone();
    let mut traces = Vec::with_capacity(results.len());
    let mut reps = Vec::with_capacity(results.len());
    for (t, s, _) in results {
        traces.push(t);
        reps.push(s);
    }
    let finals: Vec<f64> = reps.iter().map(|r| r.final_delta).collect();
    let windows: Vec<f64> = reps.iter().map(|r| r.last_window_mean_delta).collect();
    let nan = Stats {
        min: f64::NAN,
        mean: f64::NAN,
        median: f64::NAN,
        max: f64::NAN,
    };
    let envelope = Envelope {
        final_delta: Stats::of(&finals).unwrap_or(nan),
        last_window_mean_delta: Stats::of(&windows).unwrap_or(nan),
    };
    let mut by_epoch: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for t in &traces {
        for (e, m) in per_epoch_means(t) {
            by_epoch.entry(e).or_default().push(m);
        }
    }
    let per_epoch = by_epoch
        .into_iter()
        .filter_map(|(epoch, v)| {
            Stats::of(&v).map(|s| EpochStats {
                epoch,
                min: s.min,
                mean: s.mean,
                max: s.max,
            })
        })
        .collect();
    let summary = SummaryRecord {
        algorithm: algo,
        problem: config.problem.clone(),
        settings,
        replicates: reps,
        envelope,
        per_epoch,
    };
    if let Some(dir) = out_dir {
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    Ok(ExperimentOutput { traces, summary })
}

/// Qualitative ordering of the median trailing-window Δ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingVerdict {
    pub spider_corr: f64,
    pub spider: f64,
    pub online_em: f64,
    pub corr_le_plain: bool,
    pub plain_le_online: bool,
    pub corr_lt_online: bool,
    pub holds: bool,
}

impl OrderingVerdict {
    pub fn new(spider_corr: f64, spider: f64, online_em: f64) -> Self {
        let corr_le_plain = spider_corr <= spider;
        let plain_le_online = spider <= online_em;
        let corr_lt_online = spider_corr < online_em;
        OrderingVerdict {
            spider_corr,
            spider,
            online_em,
            corr_le_plain,
            plain_le_online,
            corr_lt_online,
            holds: corr_le_plain && plain_le_online && corr_lt_online,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareEntry {
    pub label: String,
    pub summary: SummaryRecord,
}

/// Merged view of several configurations on a common problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub problem: ProblemConfig,
    pub entries: Vec<CompareEntry>,
    pub epochs: Vec<usize>,
    /// Mean per-epoch Δ for each entry, aligned on `epochs`.
    pub columns: BTreeMap<String, Vec<Option<f64>>>,
    pub ordering: Option<OrderingVerdict>,
}

/// Run each configuration on the shared problem and align their summaries.
pub fn compare(configs: &[ExperimentConfig], out_dir: Option<&Path>) -> Result<CompareReport> {
    let first = configs
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to compare".into()))?;
    for (j, c) in configs.iter().enumerate() {
        c.validate()?;
        if c.problem != first.problem {
            return Err(Error::InvalidArgument(format!(
                "misaligned problems: configuration {j} differs from configuration 0"
            )));
        }
    }
    let burn_ins: Vec<usize> = configs.iter().map(|c| c.algorithm.burn_in).collect();
    let mut entries = Vec::with_capacity(configs.len());
    let mut used: BTreeMap<String, usize> = BTreeMap::new();
    let mut shared: Option<(usize, Problem)> = None;
    for c in configs {
        let problem = match &shared {
            Some((bi, p)) if *bi == c.algorithm.burn_in => p.clone(),
            _ => {
                let p = Problem::build(&c.problem, c.algorithm.burn_in)?;
                shared = Some((c.algorithm.burn_in, p.clone()));
                p
            }
        };
        let base = c.algorithm.name.as_str().to_string();
        let count = used.entry(base.clone()).or_insert(0);
        let label = if *count == 0 { base.clone() } else { format!("{base}_{count}") };
        *count += 1;
        let dir: Option<PathBuf> = out_dir.map(|d| d.join(&label));
        let out = run_on_problem(c, &problem, dir.as_deref())?;
        entries.push(CompareEntry {
            label,
            summary: out.summary,
        });
    }
    let _ = burn_ins;

    let mut epochs: Vec<usize> = entries
        .iter()
        .flat_map(|e| e.summary.per_epoch.iter().map(|p| p.epoch))
        .collect();
    epochs.sort_unstable();
    epochs.dedup();
    let columns = entries
        .iter()
        .map(|e| {
            let col = epochs
                .iter()
                .map(|ep| e.summary.per_epoch.iter().find(|p| p.epoch == *ep).map(|p| p.mean))
                .collect();
            (e.label.clone(), col)
        })
        .collect();

    let median_of = |name: AlgorithmName| {
        entries
            .iter()
            .find(|e| e.summary.algorithm == name)
            .map(|e| e.summary.envelope.last_window_mean_delta.median)
    };
    let ordering = match (
        median_of(AlgorithmName::SpiderCorr),
        median_of(AlgorithmName::Spider),
        median_of(AlgorithmName::OnlineEm),
    ) {
        (Some(c), Some(p), Some(o)) => Some(OrderingVerdict::new(c, p, o)),
        _ => None,
    };
    let report = CompareReport {
        problem: first.problem.clone(),
        entries,
        epochs,
        columns,
        ordering,
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("compare.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(report)
}
