//! Drivers, mini-batch sampling and step-size rules.

pub mod driver;
pub mod sampling;
pub mod stepsize;

pub use driver::{
    run_3p_spider, run_vmfb, stationarity_delta, KinSchedule, ObjectiveFn, RefreshSchedule,
    RunConfig, RunResult, SpiderState, TraceRecord,
};
pub use sampling::{batch_mean_properties, sample_batch, BatchMoments};
pub use stepsize::{
    decreasing_stepsize_schedule, lambda_gate, max_initial_stepsize, DecreasingSchedule,
    GateParams, StepSchedule,
};
