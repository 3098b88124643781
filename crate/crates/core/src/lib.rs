//! Variance-reduced stochastic variable-metric proximal gradient methods for
//! finite-sum composite problems, with an expectation-maximization adapter and
//! a random-effects logistic regression application.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod em;
pub mod error;
pub mod experiment;
pub mod logreg;
pub mod mcmc;
pub mod metric;
pub mod oracle;
pub mod problems;
pub mod prox;
pub mod seed;

pub use algorithms::{RunConfig, RunResult, SpiderState, TraceRecord};
pub use error::{ConfigIssue, Error, Result};
pub use metric::{Matrix, MetricChoice, MetricOperator, SmoothnessProfile, Vector};
pub use oracle::{BudgetSchedule, ErrorProfile, Exactness, ForwardOracle};
pub use prox::ProxFunction;
