//! Service policies: the per-(device, task) route decision tensor, its
//! mapping to caching/computing bits, and feasibility checking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;

/// The four ways a request can be served.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Route {
    /// Serve from the locally cached output. No transmission, cache cost is
    /// the output size.
    CachedOutput,
    /// Compute locally from the locally cached input. No transmission, cache
    /// cost is the input size, plus computing energy.
    CachedInputCompute,
    /// Download the input, then compute locally before the deadline.
    FetchInputCompute,
    /// Download the precomputed output.
    FetchOutput,
}

impl Route {
    pub const ALL: [Route; 4] = [
        Route::CachedOutput,
        Route::CachedInputCompute,
        Route::FetchInputCompute,
        Route::FetchOutput,
    ];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Route::CachedOutput => 0,
            Route::CachedInputCompute => 1,
            Route::FetchInputCompute => 2,
            Route::FetchOutput => 3,
        }
    }

    pub fn from_index(j: usize) -> Option<Route> {
        Route::ALL.get(j).copied()
    }

    /// One-based route number used in CSV exports and policy encodings.
    pub fn number(self) -> usize {
        self.index() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyMode {
    Binary,
    Relaxed,
}

/// Route-weight tensor over (device, task, route).
///
/// Every (device, task) row sums to one. In `Binary` mode each row is a unit
/// vector; in `Relaxed` mode entries lie in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServicePolicy {
    num_devices: usize,
    num_tasks: usize,
    pub mode: PolicyMode,
    x: Vec<f64>,
}

impl ServicePolicy {
    /// Binary policy sending every (device, task) through `route`.
    pub fn all_route(num_devices: usize, num_tasks: usize, route: Route) -> Self {
        let mut p = Self {
            num_devices,
            num_tasks,
            mode: PolicyMode::Binary,
            x: vec![0.0; num_devices * num_tasks * 4],
        };
        for k in 0..num_devices {
            for f in 0..num_tasks {
                let i = p.idx(k, f, route.index());
                p.x[i] = 1.0;
            }
        }
        p
    }

    /// The always-feasible default: download every output from the server.
    pub fn mec(num_devices: usize, num_tasks: usize) -> Self {
        Self::all_route(num_devices, num_tasks, Route::FetchOutput)
    }

    /// Binary policy from one route per (device, task); `routes[k][f]`.
    pub fn from_routes(routes: &[Vec<Route>]) -> Self {
        let num_devices = routes.len();
        let num_tasks = routes.first().map(Vec::len).unwrap_or(0);
        let mut p = Self {
            num_devices,
            num_tasks,
            mode: PolicyMode::Binary,
            x: vec![0.0; num_devices * num_tasks * 4],
        };
        for (k, row) in routes.iter().enumerate() {
            assert_eq!(row.len(), num_tasks, "ragged route table");
            for (f, r) in row.iter().enumerate() {
                let i = p.idx(k, f, r.index());
                p.x[i] = 1.0;
            }
        }
        p
    }

    /// Relaxed policy with uniform weight 1/4 on every route.
    pub fn uniform_relaxed(num_devices: usize, num_tasks: usize) -> Self {
        Self {
            num_devices,
            num_tasks,
            mode: PolicyMode::Relaxed,
            x: vec![0.25; num_devices * num_tasks * 4],
        }
    }

    /// Relaxed policy from a raw weight tensor laid out (device, task, route).
    pub fn from_weights(num_devices: usize, num_tasks: usize, x: Vec<f64>) -> Result<Self> {
        if x.len() != num_devices * num_tasks * 4 {
            return Err(Error::DimensionMismatch(format!(
                "weight tensor has {} entries, expected {}",
                x.len(),
                num_devices * num_tasks * 4
            )));
        }
        Ok(Self { num_devices, num_tasks, mode: PolicyMode::Relaxed, x })
    }

    #[inline]
    fn idx(&self, k: usize, f: usize, j: usize) -> usize {
        (k * self.num_tasks + f) * 4 + j
    }

    pub fn num_devices(&self) -> usize {
        self.num_devices
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    #[inline]
    pub fn weight(&self, k: usize, f: usize, route: Route) -> f64 {
        self.x[self.idx(k, f, route.index())]
    }

    #[inline]
    pub fn row(&self, k: usize, f: usize) -> [f64; 4] {
        let i = self.idx(k, f, 0);
        [self.x[i], self.x[i + 1], self.x[i + 2], self.x[i + 3]]
    }

    /// Overwrites a row with a unit vector on `route`.
    pub fn set_route(&mut self, k: usize, f: usize, route: Route) {
        let i = self.idx(k, f, 0);
        self.x[i..i + 4].fill(0.0);
        self.x[i + route.index()] = 1.0;
    }

    /// Overwrites a row with arbitrary weights; switches the policy to
    /// relaxed mode.
    pub fn set_weights(&mut self, k: usize, f: usize, w: [f64; 4]) {
        let i = self.idx(k, f, 0);
        self.x[i..i + 4].copy_from_slice(&w);
        self.mode = PolicyMode::Relaxed;
    }

    pub fn weights(&self) -> &[f64] {
        &self.x
    }

    /// The route of a binary row, or `None` if the row is not a unit vector.
    pub fn route_of(&self, k: usize, f: usize) -> Option<Route> {
        let row = self.row(k, f);
        let mut found = None;
        for (j, &v) in row.iter().enumerate() {
            if v == 1.0 {
                if found.is_some() {
                    return None;
                }
                found = Route::from_index(j);
            } else if v != 0.0 {
                return None;
            }
        }
        found
    }

    /// True when every row is a 0/1 unit vector.
    pub fn is_binary(&self) -> bool {
        (0..self.num_devices)
            .all(|k| (0..self.num_tasks).all(|f| self.route_of(k, f).is_some()))
    }

    /// Largest distance of any entry from {0, 1}.
    pub fn binary_gap(&self) -> f64 {
        self.x
            .iter()
            .map(|&v| v.min(1.0 - v).abs())
            .fold(0.0, f64::max)
    }

    /// Rounds each row to its heaviest route (ties to the lowest route index)
    /// and returns the binary policy.
    pub fn rounded(&self) -> ServicePolicy {
        let mut routes = vec![vec![Route::FetchOutput; self.num_tasks]; self.num_devices];
        for (k, row_k) in routes.iter_mut().enumerate() {
            for (f, slot) in row_k.iter_mut().enumerate() {
                let row = self.row(k, f);
                let mut best = 0;
                for j in 1..4 {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                *slot = Route::from_index(best).unwrap();
            }
        }
        ServicePolicy::from_routes(&routes)
    }

    /// Compact route-number string, device-major: e.g. "14|23" for two
    /// devices and two tasks.
    pub fn encode(&self) -> String {
        let mut s = String::new();
        for k in 0..self.num_devices {
            if k > 0 {
                s.push('|');
            }
            for f in 0..self.num_tasks {
                match self.route_of(k, f) {
                    Some(r) => s.push(char::from_digit(r.number() as u32, 10).unwrap()),
                    None => s.push('?'),
                }
            }
        }
        s
    }
}

/// Caching and computing bits per (device, task), equivalent to a binary
/// service policy.
#[derive(Debug, Clone, PartialEq)]
pub struct CachingComputingDecision {
    pub num_devices: usize,
    pub num_tasks: usize,
    /// Input data cached locally.
    pub cache_input: Vec<bool>,
    /// Output data cached locally.
    pub cache_output: Vec<bool>,
    /// Task computed locally.
    pub compute_local: Vec<bool>,
}

impl CachingComputingDecision {
    #[inline]
    fn idx(&self, k: usize, f: usize) -> usize {
        k * self.num_tasks + f
    }

    pub fn cache_input(&self, k: usize, f: usize) -> bool {
        self.cache_input[self.idx(k, f)]
    }

    pub fn cache_output(&self, k: usize, f: usize) -> bool {
        self.cache_output[self.idx(k, f)]
    }

    pub fn compute_local(&self, k: usize, f: usize) -> bool {
        self.compute_local[self.idx(k, f)]
    }

    /// Recovers the binary policy: cached output, else cached input plus
    /// local compute, else local compute, else output download.
    pub fn to_policy(&self) -> ServicePolicy {
        let mut routes = vec![vec![Route::FetchOutput; self.num_tasks]; self.num_devices];
        for k in 0..self.num_devices {
            for f in 0..self.num_tasks {
                let i = self.idx(k, f);
                routes[k][f] = match (self.cache_output[i], self.cache_input[i], self.compute_local[i]) {
                    (true, _, _) => Route::CachedOutput,
                    (false, true, true) => Route::CachedInputCompute,
                    (false, false, true) => Route::FetchInputCompute,
                    _ => Route::FetchOutput,
                };
            }
        }
        ServicePolicy::from_routes(&routes)
    }
}

/// Expands a binary policy into caching/computing bits.
///
/// Cached output ⇒ no input cache, no local compute; cached input ⇒ local
/// compute; fetched input ⇒ local compute only; fetched output ⇒ all clear.
pub fn policy_to_decision(policy: &ServicePolicy) -> Result<CachingComputingDecision> {
    let (kn, fn_) = (policy.num_devices(), policy.num_tasks());
    let mut d = CachingComputingDecision {
        num_devices: kn,
        num_tasks: fn_,
        cache_input: vec![false; kn * fn_],
        cache_output: vec![false; kn * fn_],
        compute_local: vec![false; kn * fn_],
    };
    for k in 0..kn {
        for f in 0..fn_ {
            let route = policy
                .route_of(k, f)
                .ok_or(Error::NonBinaryPolicy { device: k, task: f })?;
            let i = k * fn_ + f;
            match route {
                Route::CachedOutput => d.cache_output[i] = true,
                Route::CachedInputCompute => {
                    d.cache_input[i] = true;
                    d.compute_local[i] = true;
                }
                Route::FetchInputCompute => d.compute_local[i] = true,
                Route::FetchOutput => {}
            }
        }
    }
    Ok(d)
}

/// Relative slack applied to budget and row-sum comparisons so that policies
/// produced by floating-point projections are not flagged for roundoff.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// One violated policy constraint, with its slack (negative = violated).
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyViolation {
    RowSum { device: usize, task: usize, sum: f64 },
    OutOfRange { device: usize, task: usize, value: f64 },
    NotBinary { device: usize, task: usize },
    Cache { device: usize, used: f64, limit: f64, slack: f64 },
    Energy { device: usize, used: f64, limit: f64, slack: f64 },
}

impl std::fmt::Display for PolicyViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        use PolicyViolation::*;
        match self {
            RowSum { device, task, sum } => {
                write!(f, "device {device}, task {task}: route weights sum to {sum}")
            }
            OutOfRange { device, task, value } => {
                write!(f, "device {device}, task {task}: weight {value} outside [0, 1]")
            }
            NotBinary { device, task } => {
                write!(f, "device {device}, task {task}: row is not a 0/1 unit vector")
            }
            Cache { device, used, limit, slack } => write!(
                f,
                "device {device}: cache use {used} bits exceeds {limit} (slack {slack})"
            ),
            Energy { device, used, limit, slack } => write!(
                f,
                "device {device}: average energy {used} J exceeds {limit} (slack {slack})"
            ),
        }
    }
}

/// All feasibility violations of a policy against an instance, with slacks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeasibilityReport {
    pub violations: Vec<PolicyViolation>,
}

impl FeasibilityReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks route-weight structure plus the per-device cache and average-energy
/// budgets, reporting every violation with its slack.
pub fn feasibility(instance: &Instance, policy: &ServicePolicy) -> FeasibilityReport {
    let mut report = FeasibilityReport::default();
    let (kn, fn_) = (instance.num_devices(), instance.num_tasks());
    assert_eq!(policy.num_devices(), kn, "policy/instance device mismatch");
    assert_eq!(policy.num_tasks(), fn_, "policy/instance task mismatch");

    for k in 0..kn {
        for f in 0..fn_ {
            let row = policy.row(k, f);
            for &v in &row {
                if !(-FEASIBILITY_TOL..=1.0 + FEASIBILITY_TOL).contains(&v) {
                    report
                        .violations
                        .push(PolicyViolation::OutOfRange { device: k, task: f, value: v });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > FEASIBILITY_TOL {
                report
                    .violations
                    .push(PolicyViolation::RowSum { device: k, task: f, sum });
            }
            if policy.mode == PolicyMode::Binary && policy.route_of(k, f).is_none() {
                report
                    .violations
                    .push(PolicyViolation::NotBinary { device: k, task: f });
            }
        }
    }

    for k in 0..kn {
        let dev = &instance.devices[k];
        let mut cache = 0.0;
        let mut energy = 0.0;
        for f in 0..fn_ {
            let t = &instance.catalog.tasks[f];
            let row = policy.row(k, f);
            cache += t.output_bits * row[Route::CachedOutput.index()]
                + t.input_bits * row[Route::CachedInputCompute.index()];
            energy += instance.compute_energy(k, f)
                * (row[Route::CachedInputCompute.index()] + row[Route::FetchInputCompute.index()]);
        }
        let cache_tol = FEASIBILITY_TOL * dev.cache_bits.max(1.0);
        if cache > dev.cache_bits + cache_tol {
            report.violations.push(PolicyViolation::Cache {
                device: k,
                used: cache,
                limit: dev.cache_bits,
                slack: dev.cache_bits - cache,
            });
        }
        let energy_tol = FEASIBILITY_TOL * dev.avg_energy.max(1.0);
        if energy > dev.avg_energy + energy_tol {
            report.violations.push(PolicyViolation::Energy {
                device: k,
                used: energy,
                limit: dev.avg_energy,
                slack: dev.avg_energy - energy,
            });
        }
    }
    report
}

/// True when `feasibility` finds no violations.
pub fn is_feasible(instance: &Instance, policy: &ServicePolicy) -> bool {
    feasibility(instance, policy).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{small_instance, tiny_rng_policy};
    use proptest::prelude::*;

    #[test]
    fn table_rows_map_to_bits() {
        let mut p = ServicePolicy::mec(1, 4);
        p.set_route(0, 0, Route::CachedOutput);
        p.set_route(0, 1, Route::CachedInputCompute);
        p.set_route(0, 2, Route::FetchInputCompute);
        let d = policy_to_decision(&p).unwrap();
        assert!(d.cache_output(0, 0) && !d.cache_input(0, 0) && !d.compute_local(0, 0));
        assert!(!d.cache_output(0, 1) && d.cache_input(0, 1) && d.compute_local(0, 1));
        assert!(!d.cache_output(0, 2) && !d.cache_input(0, 2) && d.compute_local(0, 2));
        assert!(!d.cache_output(0, 3) && !d.cache_input(0, 3) && !d.compute_local(0, 3));
    }

    #[test]
    fn non_binary_rejected() {
        let mut p = ServicePolicy::mec(1, 1);
        p.set_weights(0, 0, [0.5, 0.0, 0.0, 0.5]);
        assert!(matches!(
            policy_to_decision(&p),
            Err(Error::NonBinaryPolicy { device: 0, task: 0 })
        ));
    }

    #[test]
    fn all_fetch_output_is_feasible() {
        let inst = small_instance();
        let p = ServicePolicy::mec(inst.num_devices(), inst.num_tasks());
        assert!(is_feasible(&inst, &p));
    }

    #[test]
    fn cache_overflow_slack_reported() {
        // One device, cache 5 bits, two outputs of 4 bits each cached.
        let mut inst = crate::testutil::single_device_instance(
            vec![(4.0, 1.0, 4.0), (4.0, 1.0, 4.0)],
            1.0,
            1e-3,
            100.0,
            0.1,
        );
        inst.devices[0].cache_bits = 5.0;
        let p = ServicePolicy::all_route(1, 2, Route::CachedOutput);
        let report = feasibility(&inst, &p);
        assert_eq!(report.violations.len(), 1);
        match &report.violations[0] {
            PolicyViolation::Cache { slack, .. } => assert!((slack + 3.0).abs() < 1e-12),
            v => panic!("unexpected violation {v}"),
        }
    }

    proptest! {
        // Round trip through caching/computing bits is the identity.
        #[test]
        fn decision_round_trip(seed in 0u64..500) {
            let p = tiny_rng_policy(3, 4, seed);
            let d = policy_to_decision(&p).unwrap();
            prop_assert_eq!(d.to_policy(), p);
        }

        // Growing budgets never turns a feasible policy infeasible.
        #[test]
        fn feasibility_monotone_in_budgets(seed in 0u64..200, grow in 1.0f64..10.0) {
            let mut inst = small_instance();
            let p = tiny_rng_policy(inst.num_devices(), inst.num_tasks(), seed);
            let ok_before = is_feasible(&inst, &p);
            for d in &mut inst.devices {
                d.cache_bits *= grow;
                d.avg_energy *= grow;
            }
            if ok_before {
                prop_assert!(is_feasible(&inst, &p));
            }
        }
    }
}
