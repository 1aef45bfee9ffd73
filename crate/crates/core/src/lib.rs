//! Stochastic nested variance reduction (One-epoch-SNVRG+) and the
//! negative-curvature-escape drivers built on it.
//!
//! The crate is organized bottom-up:
//!
//! - [`problems`]: objective oracles, gradient accounting and synthetic test problems.
//! - [`schedule`]: the nested loop/batch schedule and its cost bookkeeping.
//! - [`epoch`]: one geometric-length epoch of nested variance-reduced descent.
//! - [`ncfinder`]: first-order negative-curvature search with self-certification.
//! - [`driver`]: the outer loops that alternate epochs and curvature escapes.
//! - [`harness`]: configuration, orchestration, trace persistence and the verification suite.

pub mod driver;
pub mod epoch;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod ncfinder;
pub mod problems;
pub mod rng;
pub mod schedule;
pub mod trace;

pub use driver::{
    boost, classify_point, config_finite_2nd, config_finite_3rd, config_online_2nd,
    config_online_3rd, configure, nc_descent_step, run, run_finite, run_online, DriverConfig,
    DriverOutcome, Mode, OutcomeStatus, Overrides, PointClass,
};
pub use epoch::{run_epoch, EpochResult, EpochState};
pub use error::{Error, Result};
pub use ncfinder::{hvp_estimate, neon_finite, neon_online, rayleigh, NcProbe, NcQuery, NcResult};
pub use problems::{
    make_regularized_problem, make_saddle_problem, minibatch_gradient,
    sample_indices_without_replacement, FiniteSumProblem, GradCounter, Problem, ProblemRef,
    SmoothnessSpec, StreamingProblem,
};
pub use schedule::{
    c_series, check_series_inequalities, clamp_schedule, derive_schedule, expected_epoch_cost,
    CSeries, NestedSchedule,
};
pub use trace::{EventKind, RunTrace, TraceEvent, TrialSummary};
