//! Route-tensor solver for catalogs whose outputs are larger than their
//! inputs: relax the binary tensor, penalize fractional weights, majorize the
//! concave parts at the previous iterate, and solve each convex majorizer
//! with the consensus splitting of [`admm`]. The relaxed solution is then
//! rounded row-wise and repaired to a feasible binary policy.

mod admm;
mod dc;

pub use admm::{
    admm_update_duals, admm_update_global_x, admm_update_locals, AdmmState, SolverContext,
};
pub(crate) use admm::penalty_coef;
pub use dc::{cccp_subproblem_objective, dc_objective, penalized_objective, DcAnchor, DcState};

use crate::bandwidth::{saa_objective, RequestSample};
use crate::error::Result;
use crate::instance::{Instance, Rates};
use crate::policy::{PolicyMode, Route, ServicePolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Outer stop: quit a penalty phase when the majorizer value drops by
    /// less than `delta_rel * max(1, |first phase value|)`.
    pub delta_rel: f64,
    /// Inner stop: largest local/global gap.
    pub admm_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Initial binarization penalty weight, Hz.
    pub rho_init_hz: f64,
    /// Penalty growth factor applied while the relaxed solution stays
    /// fractional.
    pub rho_mult: f64,
    /// Penalty ceiling, Hz.
    pub rho_cap_hz: f64,
    /// Consensus coupling weight, internal units.
    pub gamma: f64,
    /// Largest tolerated distance from {0,1} before the penalty grows.
    pub rounding_threshold: f64,
    /// Outer iterations allowed per penalty phase before the schedule
    /// advances anyway; guards against vanishing-decrement creep.
    pub max_phase_outers: usize,
    /// Recorded in diagnostics; the solve itself is deterministic.
    pub seed: u64,
    /// Also emit one diagnostics row per inner sweep.
    pub diag_inner: bool,
    /// Carry local copies and multipliers between outer iterations instead
    /// of re-broadcasting the global tensor.
    pub warm_start: bool,
    /// Finish every rounded candidate with the deterministic binary descent
    /// of [`binary_descent`].
    pub polish: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            delta_rel: 1e-7,
            admm_tol: 1e-6,
            max_outer: 60,
            max_inner: 2000,
            rho_init_hz: 1e4,
            rho_mult: 2.0,
            rho_cap_hz: 1e8,
            gamma: 1.0,
            rounding_threshold: 0.1,
            max_phase_outers: 12,
            seed: 0,
            diag_inner: false,
            warm_start: true,
            polish: true,
        }
    }
}

/// One diagnostics row; written per outer iteration, and per inner sweep when
/// `diag_inner` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagRow {
    pub outer_iter: usize,
    pub inner_iter: usize,
    pub surrogate_hz: f64,
    pub penalized_hz: f64,
    pub consensus_residual: f64,
    pub binary_gap: f64,
    pub rho_hz: f64,
}

/// One repair step of the rounding: a row moved to a cheaper route.
#[derive(Debug, Clone, PartialEq)]
pub struct Demotion {
    pub device: usize,
    pub task: usize,
    pub from: Route,
    pub to: Route,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundingReport {
    pub demotions: Vec<Demotion>,
}

#[derive(Debug, Clone, Default)]
pub struct SolverDiagnostics {
    pub rows: Vec<DiagRow>,
    pub rounding: RoundingReport,
    pub warning: Option<String>,
    /// Blocks whose stationarity search fell back to the least-violation
    /// candidate.
    pub kkt_fallbacks: usize,
    pub outer_iters: usize,
    pub total_inner_iters: usize,
    pub final_rho_hz: f64,
    pub final_residual: f64,
}

impl SolverDiagnostics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "# edgecast-csv v1 solver_diagnostics\nouter_iter,inner_iter,surrogate_value,penalized_value,consensus_residual,binary_gap\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.outer_iter,
                r.inner_iter,
                r.surrogate_hz,
                r.penalized_hz,
                r.consensus_residual,
                r.binary_gap
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "outer={} inner={} rho={:.3e} residual={:.3e} fallbacks={} warn={}",
            self.outer_iters,
            self.total_inner_iters,
            self.final_rho_hz,
            self.final_residual,
            self.kkt_fallbacks,
            self.warning.as_deref().unwrap_or("none")
        )
    }
}

#[derive(Debug, Clone)]
pub struct SolverOutcome {
    /// Feasible binary policy, never worse than fetching every output.
    pub policy: ServicePolicy,
    /// Final relaxed tensor.
    pub relaxed: ServicePolicy,
    /// Sampled objective of `policy`, Hz.
    pub objective_hz: f64,
    /// Sampled objective of the fetch-everything baseline, Hz.
    pub mec_objective_hz: f64,
    pub diagnostics: SolverDiagnostics,
}

/// Majorizer value at the current iterate: the convex part evaluated at the
/// new auxiliaries minus the tangent terms anchored at the previous iterate.
/// This is the quantity whose per-phase decrements drive the outer stop.
fn stop_value(ctx: &SolverContext, state: &AdmmState) -> f64 {
    let n = ctx.num_samples as f64;
    let mut convex = 0.0;
    let mut tangent = 0.0;
    for cell in 0..ctx.num_samples * ctx.num_tasks {
        let f = cell % ctx.num_tasks;
        convex += (state.a_in[cell] + state.b_in[cell]).powi(2) / 4.0
            + ctx.rate4[f] * state.a_out[cell];
        tangent += (state.anchor_a[cell] - state.anchor_b[cell]) / 2.0
            * (state.a_in[cell] - state.b_in[cell]);
    }
    let bl = ctx.block_len();
    let mut penalty_tangent = 0.0;
    for cell in 0..ctx.num_samples * ctx.num_tasks {
        let f = cell % ctx.num_tasks;
        let off = cell * bl;
        for k in 0..ctx.num_devices {
            for j in 0..4 {
                penalty_tangent += penalty_coef(state.anchor_x[(k * ctx.num_tasks + f) * 4 + j], j)
                    * state.locals[off + k * 4 + j];
            }
        }
    }
    (convex - tangent) / n - state.rho * penalty_tangent / n
}

/// Incremental per-task stream costs of a binary route table.
struct TaskCosts<'a> {
    instance: &'a Instance,
    rates: &'a Rates,
    samples: &'a [RequestSample],
    samples_of_task: Vec<Vec<usize>>,
}

impl<'a> TaskCosts<'a> {
    fn new(instance: &'a Instance, rates: &'a Rates, samples: &'a [RequestSample]) -> Self {
        let fn_ = instance.num_tasks();
        let mut samples_of_task: Vec<Vec<usize>> = vec![Vec::new(); fn_];
        for (n, s) in samples.iter().enumerate() {
            let mut seen = vec![false; fn_];
            for &f in &s.tasks {
                if !seen[f] {
                    seen[f] = true;
                    samples_of_task[f].push(n);
                }
            }
        }
        Self { instance, rates, samples, samples_of_task }
    }

    /// Unnormalized stream cost of task `f` summed over its samples.
    fn task_cost(&self, routes: &[Vec<Route>], f: usize) -> f64 {
        let mut total = 0.0;
        for &n in &self.samples_of_task[f] {
            let mut in_chan = 0.0f64;
            let mut in_rate = 0.0f64;
            let mut out_chan = 0.0f64;
            for (k, &a) in self.samples[n].tasks.iter().enumerate() {
                if a != f {
                    continue;
                }
                match routes[k][f] {
                    Route::FetchInputCompute => {
                        in_chan = in_chan.max(self.instance.devices[k].inv_spectral_eff);
                        in_rate = in_rate.max(self.rates.fetch_compute(k, f));
                    }
                    Route::FetchOutput => {
                        out_chan = out_chan.max(self.instance.devices[k].inv_spectral_eff);
                    }
                    _ => {}
                }
            }
            total += in_chan * in_rate + self.rates.fetch_output(f) * out_chan;
        }
        total
    }

    /// Objective change of switching row (k, f) to `target`.
    fn move_delta(&self, routes: &mut [Vec<Route>], k: usize, f: usize, target: Route) -> f64 {
        let old = routes[k][f];
        let before = self.task_cost(routes, f);
        routes[k][f] = target;
        let after = self.task_cost(routes, f);
        routes[k][f] = old;
        after - before
    }

    /// Budget footprint of one row choice.
    fn weights(&self, k: usize, f: usize, route: Route) -> (f64, f64) {
        match route {
            Route::CachedOutput => (self.instance.catalog.tasks[f].output_bits, 0.0),
            Route::CachedInputCompute => {
                (self.instance.catalog.tasks[f].input_bits, self.rates.energy(k, f))
            }
            Route::FetchInputCompute => (0.0, self.rates.energy(k, f)),
            Route::FetchOutput => (0.0, 0.0),
        }
    }
}

/// Rounds each row to its heaviest route (ties to the lowest route index) and
/// repairs budget violations: any route change that strictly shrinks a
/// violated budget without creating a new violation is a candidate, picked by
/// smallest objective increase per unit of violated budget relieved, ties to
/// the lower task index then route index. Fetching the output is always a
/// legal target, so repair always terminates.
pub fn round_and_repair(
    instance: &Instance,
    rates: &Rates,
    samples: &[RequestSample],
    relaxed: &ServicePolicy,
) -> (ServicePolicy, RoundingReport) {
    let kn = instance.num_devices();
    let fn_ = instance.num_tasks();
    let mut routes: Vec<Vec<Route>> = (0..kn)
        .map(|k| {
            (0..fn_)
                .map(|f| {
                    let row = relaxed.row(k, f);
                    let mut best = 0;
                    for j in 1..4 {
                        if row[j] > row[best] {
                            best = j;
                        }
                    }
                    Route::from_index(best).unwrap()
                })
                .collect()
        })
        .collect();

    let costs = TaskCosts::new(instance, rates, samples);
    let task_cost = |routes: &[Vec<Route>], f: usize| costs.task_cost(routes, f);
    let weights = |k: usize, f: usize, route: Route| costs.weights(k, f, route);

    let mut report = RoundingReport::default();
    for k in 0..kn {
        loop {
            let mut cache = 0.0;
            let mut energy = 0.0;
            for f in 0..fn_ {
                let (cw, ew) = weights(k, f, routes[k][f]);
                cache += cw;
                energy += ew;
            }
            let dev = &instance.devices[k];
            let cache_excess = cache - dev.cache_bits;
            let energy_excess = energy - dev.avg_energy;
            let cache_bad = cache_excess > 1e-9 * dev.cache_bits.max(1.0);
            let energy_bad = energy_excess > 1e-9 * dev.avg_energy.max(1.0);
            if !cache_bad && !energy_bad {
                break;
            }
            // Candidate moves: any route change that strictly shrinks a
            // violated budget and creates no new violation. Fetching the
            // output is always among them.
            let mut best: Option<(f64, usize, Route)> = None;
            for f in 0..fn_ {
                let route = routes[k][f];
                let (cw, ew) = weights(k, f, route);
                for target in Route::ALL {
                    if target == route {
                        continue;
                    }
                    if target == Route::FetchInputCompute
                        && !rates.fetch_compute(k, f).is_finite()
                    {
                        continue;
                    }
                    let (tc, te) = weights(k, f, target);
                    let cache_after = cache - cw + tc;
                    let energy_after = energy - ew + te;
                    let mut relief = 0.0;
                    if cache_bad && tc < cw {
                        relief += (cw - tc) / cache_excess;
                    }
                    if energy_bad && te < ew {
                        relief += (ew - te) / energy_excess;
                    }
                    if relief <= 0.0 {
                        continue;
                    }
                    // The untouched budget must stay within its limit.
                    if !cache_bad && cache_after > dev.cache_bits + 1e-9 * dev.cache_bits.max(1.0)
                    {
                        continue;
                    }
                    if !energy_bad
                        && energy_after > dev.avg_energy + 1e-9 * dev.avg_energy.max(1.0)
                    {
                        continue;
                    }
                    if (cache_bad && cache_after > cache)
                        || (energy_bad && energy_after > energy)
                    {
                        continue;
                    }
                    let before = task_cost(&routes, f);
                    routes[k][f] = target;
                    let after = task_cost(&routes, f);
                    routes[k][f] = route;
                    let score = (after - before) / relief;
                    let better = match best {
                        None => true,
                        Some((s, bf, bt)) => {
                            score < s
                                || (score == s && (f, target.index()) < (bf, bt.index()))
                        }
                    };
                    if better {
                        best = Some((score, f, target));
                    }
                }
            }
            let (_, f, target) = best.expect("a violated budget always has a paying row");
            report.demotions.push(Demotion {
                device: k,
                task: f,
                from: routes[k][f],
                to: target,
            });
            routes[k][f] = target;
        }
    }
    (ServicePolicy::from_routes(&routes), report)
}

/// Deterministic descent over binary policies: all single-row route changes
/// plus same-device row pairs (budget coupling is per device, so pairs across
/// devices decompose into singles). Applies the best strict improvement until
/// none remains. This finishes the rounded policy: penalty linearization is
/// blind to coordinated moves such as trading a cached input for a cheaper
/// cached output plus a local compute, which sit behind a budget wall.
pub fn binary_descent(
    instance: &Instance,
    rates: &Rates,
    samples: &[RequestSample],
    policy: &ServicePolicy,
    max_moves: usize,
    pairs: bool,
) -> ServicePolicy {
    let kn = instance.num_devices();
    let fn_ = instance.num_tasks();
    let mut routes: Vec<Vec<Route>> = (0..kn)
        .map(|k| (0..fn_).map(|f| policy.route_of(k, f).expect("binary policy")).collect())
        .collect();
    let costs = TaskCosts::new(instance, rates, samples);

    for _ in 0..max_moves {
        // Current budget use per device.
        let mut cache = vec![0.0; kn];
        let mut energy = vec![0.0; kn];
        for k in 0..kn {
            for f in 0..fn_ {
                let (cw, ew) = costs.weights(k, f, routes[k][f]);
                cache[k] += cw;
                energy[k] += ew;
            }
        }
        let total: f64 = (0..fn_).map(|f| costs.task_cost(&routes, f)).sum();
        let improvement = -1e-12 * total.max(1.0);
        // Single moves per device: (f, target, delta_obj, delta_cache,
        // delta_energy), with route changes to unusable compute routes
        // excluded.
        let mut best: Option<(f64, usize, Vec<(usize, Route)>)> = None;
        for k in 0..kn {
            let dev = &instance.devices[k];
            let cache_cap = dev.cache_bits * (1.0 + 1e-12) + 1e-9;
            let energy_cap = dev.avg_energy * (1.0 + 1e-12) + 1e-9;
            let mut moves: Vec<(usize, Route, f64, f64, f64)> = Vec::new();
            for f in 0..fn_ {
                let from = routes[k][f];
                let (cw, ew) = costs.weights(k, f, from);
                for target in Route::ALL {
                    if target == from {
                        continue;
                    }
                    if target == Route::FetchInputCompute
                        && !rates.fetch_compute(k, f).is_finite()
                    {
                        continue;
                    }
                    let (tc, te) = costs.weights(k, f, target);
                    let delta = costs.move_delta(&mut routes, k, f, target);
                    moves.push((f, target, delta, tc - cw, te - ew));
                }
            }
            for (i, &(f1, t1, d1, dc1, de1)) in moves.iter().enumerate() {
                if d1 < improvement
                    && cache[k] + dc1 <= cache_cap
                    && energy[k] + de1 <= energy_cap
                {
                    let better = best.as_ref().map_or(true, |(b, _, _)| d1 < *b);
                    if better {
                        best = Some((d1, k, vec![(f1, t1)]));
                    }
                }
                for &(f2, t2, d2, dc2, de2) in moves.iter().skip(i + 1) {
                    if !pairs || f2 == f1 {
                        continue;
                    }
                    let d = d1 + d2;
                    if d < improvement
                        && cache[k] + dc1 + dc2 <= cache_cap
                        && energy[k] + de1 + de2 <= energy_cap
                    {
                        let better = best.as_ref().map_or(true, |(b, _, _)| d < *b);
                        if better {
                            best = Some((d, k, vec![(f1, t1), (f2, t2)]));
                        }
                    }
                }
            }
        }
        match best {
            None => break,
            Some((_, k, changes)) => {
                for (f, target) in changes {
                    routes[k][f] = target;
                }
            }
        }
    }
    ServicePolicy::from_routes(&routes)
}

fn median_abs(values: &[f64]) -> f64 {
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).filter(|&v| v > 0.0).collect();
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    mags[mags.len() / 2]
}

/// Full solve: relax, penalize, majorize-minimize with consensus splitting,
/// then round and repair. Starts from the always-feasible fetch-everything
/// tensor; the returned binary policy is never worse than that baseline on
/// the given samples. Deterministic given (instance, samples, config).
pub fn solve_cccp_admm(
    instance: &Instance,
    samples: &[RequestSample],
    config: &SolverConfig,
) -> Result<SolverOutcome> {
    let ctx = SolverContext::new(instance, samples)?;
    let rates = Rates::new(instance);
    let rho_cap_int = config.rho_cap_hz / ctx.scale_hz;
    let mut state = AdmmState::init(&ctx, config.gamma, config.rho_init_hz / ctx.scale_hz);

    let mec_policy = ServicePolicy::mec(ctx.num_devices, ctx.num_tasks);
    let mec_value = saa_objective(instance, &mec_policy, samples)?;
    let descent_cap = 2 * ctx.num_devices * ctx.num_tasks + 8;
    let mut best_policy = mec_policy.clone();
    let mut best_value = mec_value;
    let mut best_rounding = RoundingReport::default();
    if config.polish {
        let polished = binary_descent(instance, &rates, samples, &mec_policy, descent_cap, true);
        let polished_value = saa_objective(instance, &polished, samples)?;
        if polished_value < best_value {
            best_value = polished_value;
            best_policy = polished;
        }
    }

    let mut diagnostics = SolverDiagnostics::default();
    let mut phase_first: Option<f64> = None;
    let mut prev_value: Option<f64> = None;
    let mut phase_outers = 0usize;

    let penalized_hz = |st: &AdmmState| -> Result<f64> {
        let relaxed =
            ServicePolicy::from_weights(ctx.num_devices, ctx.num_tasks, st.global.clone())?;
        let dc_state = DcState::from_policy(instance, samples, relaxed);
        penalized_objective(instance, &dc_state, st.rho * ctx.scale_hz)
    };

    'outer: for outer in 1..=config.max_outer {
        state.outer_iter = outer;
        state.gamma = config.gamma;
        if outer == 1 || !config.warm_start {
            state.reset_inner(&ctx);
        } else {
            state.inner_iter = 0;
        }

        let mut residual = f64::INFINITY;
        let mut residual_history: Vec<f64> = Vec::new();
        let mut gamma_bumps = 0;
        for q in 1..=config.max_inner {
            admm_update_locals(&ctx, &mut state)?;
            admm_update_global_x(&ctx, &mut state)?;
            admm_update_duals(&ctx, &mut state);
            residual = state.consensus_residual(&ctx);
            residual_history.push(residual);
            if config.diag_inner {
                diagnostics.rows.push(DiagRow {
                    outer_iter: outer,
                    inner_iter: q,
                    surrogate_hz: stop_value(&ctx, &state) * ctx.scale_hz,
                    penalized_hz: penalized_hz(&state)?,
                    consensus_residual: residual,
                    binary_gap: state.binary_gap(),
                    rho_hz: state.rho * ctx.scale_hz,
                });
            }
            if residual <= config.admm_tol {
                break;
            }
            // Residual-driven coupling adjustment: grow the consensus weight
            // when fifty sweeps fail to halve the gap.
            if q >= 100 && q % 50 == 0 && gamma_bumps < 5 {
                let old = residual_history[q - 51];
                if residual > 0.5 * old {
                    let bumped = (2.0 * state.gamma).max(median_abs(&state.duals));
                    state.gamma = bumped.min(1e8);
                    gamma_bumps += 1;
                }
            }
            if q == config.max_inner {
                diagnostics.warning = Some(format!(
                    "inner sweep cap {} hit at outer {} (residual {:.3e})",
                    config.max_inner, outer, residual
                ));
            }
        }
        diagnostics.total_inner_iters += state.inner_iter;

        let value = stop_value(&ctx, &state);
        state.anchor_a.copy_from_slice(&state.a_in);
        state.anchor_b.copy_from_slice(&state.b_in);
        state.anchor_x.copy_from_slice(&state.global);

        let gap = state.binary_gap();
        diagnostics.rows.push(DiagRow {
            outer_iter: outer,
            inner_iter: state.inner_iter,
            surrogate_hz: value * ctx.scale_hz,
            penalized_hz: penalized_hz(&state)?,
            consensus_residual: residual,
            binary_gap: gap,
            rho_hz: state.rho * ctx.scale_hz,
        });
        diagnostics.outer_iters = outer;
        diagnostics.final_residual = residual;

        let relaxed_now =
            ServicePolicy::from_weights(ctx.num_devices, ctx.num_tasks, state.global.clone())?;
        let (candidate, rounding) = round_and_repair(instance, &rates, samples, &relaxed_now);
        let candidate = if config.polish {
            binary_descent(instance, &rates, samples, &candidate, descent_cap, true)
        } else {
            candidate
        };
        let candidate_value = saa_objective(instance, &candidate, samples)?;
        if candidate_value < best_value {
            best_value = candidate_value;
            best_policy = candidate;
            best_rounding = rounding;
        }

        let reference = *phase_first.get_or_insert(value);
        let delta = config.delta_rel * reference.abs().max(1.0);
        phase_outers += 1;
        let converged = prev_value.map_or(false, |pv| pv - value <= delta)
            || phase_outers >= config.max_phase_outers;
        prev_value = Some(value);
        if converged {
            if gap <= config.rounding_threshold {
                break 'outer;
            }
            if state.rho < rho_cap_int {
                state.rho = (state.rho * config.rho_mult).min(rho_cap_int);
                phase_first = None;
                prev_value = None;
                phase_outers = 0;
            } else {
                diagnostics.warning =
                    Some(format!("binary gap {gap:.3e} above threshold at the penalty cap"));
                break 'outer;
            }
        } else if outer == config.max_outer {
            diagnostics.warning = Some(format!("outer iteration cap {} hit", config.max_outer));
        }
    }

    diagnostics.kkt_fallbacks = state.kkt_fallbacks;
    diagnostics.final_rho_hz = state.rho * ctx.scale_hz;
    diagnostics.rounding = best_rounding;

    let mut relaxed =
        ServicePolicy::from_weights(ctx.num_devices, ctx.num_tasks, state.global.clone())?;
    relaxed.mode = PolicyMode::Relaxed;
    Ok(SolverOutcome {
        policy: best_policy,
        relaxed,
        objective_hz: best_value,
        mec_objective_hz: mec_value,
        diagnostics,
    })
}
