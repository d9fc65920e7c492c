//! Cache, compute and service-route planning for a multicast edge download
//! link.
//!
//! An edge server holds the inputs and outputs of a fixed task catalog and
//! serves `K` devices over a shared multicast downlink. Each device may cache
//! a task's input or output and may compute tasks locally under a deadline,
//! a cache budget and an average energy budget. Every request is served one
//! of four ways: from the local output cache, by computing a locally cached
//! input, by downloading the input and computing, or by downloading the
//! output. The planning problem is to pick one route per (device, task) so
//! the demand-averaged downlink bandwidth is minimal.
//!
//! The crate provides:
//! - [`instance`] / [`policy`]: problem data, route tensors, feasibility;
//! - [`bandwidth`]: per-request and averaged bandwidth accounting;
//! - [`sampling`]: reproducible request-sample generation;
//! - [`oracle`]: exact enumeration and the single-device knapsack;
//! - [`heuristics`]: baseline constructors and the output-cache greedy;
//! - [`solver`]: the relaxation solver for catalogs whose outputs are larger
//!   than their inputs (penalized difference-of-convex objective, majorize-
//!   minimize outer loop, consensus splitting inner loop);
//! - [`symmetric`]: closed forms for the fully symmetric system;
//! - [`config`] / [`experiment`]: instance files, experiment plans, CSV
//!   reports.

pub mod bandwidth;
pub mod config;
pub mod error;
pub mod experiment;
pub mod heuristics;
pub mod instance;
pub mod oracle;
pub mod policy;
pub mod sampling;
pub mod solver;
pub mod symmetric;
pub mod testutil;

pub use bandwidth::{
    exact_average_bandwidth, route_rate, saa_objective, sample_bandwidth, unicast_bandwidth,
    BandwidthBreakdown, RequestSample,
};
pub use error::{Error, Result};
pub use heuristics::{
    alpha_le1_greedy, greedy_caching_computing_policy, greedy_caching_policy,
    mec_computing_policy, submodularity_check,
};
pub use instance::{
    validate_instance, DeviceSpec, Instance, InstanceViolation, Rates, SystemParams, TaskCatalog,
    TaskSpec,
};
pub use oracle::{
    enumerate_optimal, single_user_knapsack_items, solve_single_user, KnapsackItem,
    OracleObjective, OracleResult,
};
pub use policy::{
    feasibility, is_feasible, policy_to_decision, CachingComputingDecision, FeasibilityReport,
    PolicyMode, Route, ServicePolicy,
};
pub use sampling::{draw_samples, zipf_popularity, PopularityKind, PopularityProfile};
pub use solver::{solve_cccp_admm, SolverConfig, SolverOutcome};
pub use symmetric::{
    closed_form_bandwidth, gain_vs_mec, gain_vs_unicast, optimal_counts, symmetric_lp,
    RouteCounts, SymmetricAnalysis, SymmetricInstance,
};
