//! Exact solvers for desk-scale instances: full policy enumeration with
//! per-device feasibility pruning, and the single-device two-budget
//! multiple-choice knapsack. Ground truth for every heuristic and iterative
//! solver in the crate.

use crate::bandwidth::{RequestSample, ENUMERATION_CAP};
use crate::error::{Error, Result};
use crate::instance::{Instance, Rates};
use crate::policy::{Route, ServicePolicy, FEASIBILITY_TOL};

/// Objective the enumeration minimizes.
#[derive(Debug, Clone, Copy)]
pub enum OracleObjective<'a> {
    /// Demand-weighted average over the full request space.
    Exact,
    /// Sampled average over the given batch.
    Saa(&'a [RequestSample]),
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub best_policy: ServicePolicy,
    /// Minimal average bandwidth in Hz for [`enumerate_optimal`]; maximal
    /// bandwidth saving vs downloading every output for
    /// [`solve_single_user`].
    pub best_value: f64,
    pub policies_examined: u64,
}

/// Default cap on the number of complete policies the search may visit.
pub const SEARCH_CAP: u128 = 1 << 26;

/// Per-device route assignment, one route index per task.
type Assignment = Vec<u8>;

/// Enumerates the route assignments of one device that satisfy its cache and
/// energy budgets, in lexicographic order (task 0 most significant). Route
/// assignments that would fetch-and-compute with no transmission slack are
/// dropped.
fn feasible_assignments(instance: &Instance, rates: &Rates, k: usize) -> Result<Vec<Assignment>> {
    let fn_ = instance.num_tasks();
    let per_device = (4u128).checked_pow(fn_ as u32).unwrap_or(u128::MAX);
    if per_device > SEARCH_CAP {
        return Err(Error::SearchCapExceeded { policies: per_device, cap: SEARCH_CAP });
    }
    let dev = &instance.devices[k];
    let cache_cap = dev.cache_bits + FEASIBILITY_TOL * dev.cache_bits.max(1.0);
    let energy_cap = dev.avg_energy + FEASIBILITY_TOL * dev.avg_energy.max(1.0);
    let mut out = Vec::new();
    let mut digits: Assignment = vec![0; fn_];
    loop {
        let mut cache = 0.0;
        let mut energy = 0.0;
        let mut usable = true;
        for f in 0..fn_ {
            let t = &instance.catalog.tasks[f];
            match digits[f] {
                0 => cache += t.output_bits,
                1 => {
                    cache += t.input_bits;
                    energy += rates.energy(k, f);
                }
                2 => {
                    energy += rates.energy(k, f);
                    if !rates.fetch_compute(k, f).is_finite() {
                        usable = false;
                    }
                }
                _ => {}
            }
        }
        if usable && cache <= cache_cap && energy <= energy_cap {
            out.push(digits.clone());
        }
        let mut pos = fn_;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < 4 {
                break;
            }
            digits[pos] = 0;
        }
    }
}

/// One request state with its weight in the averaged objective.
struct WeightedState {
    weight: f64,
    tasks: Vec<usize>,
}

fn objective_states(
    instance: &Instance,
    objective: OracleObjective<'_>,
) -> Result<Vec<WeightedState>> {
    match objective {
        OracleObjective::Saa(samples) => {
            if samples.is_empty() {
                return Err(Error::EmptySampleSet);
            }
            let w = 1.0 / samples.len() as f64;
            Ok(samples
                .iter()
                .map(|s| WeightedState { weight: w, tasks: s.tasks.clone() })
                .collect())
        }
        OracleObjective::Exact => {
            let kn = instance.num_devices();
            let fn_ = instance.num_tasks();
            let count = (fn_ as u128).checked_pow(kn as u32).unwrap_or(u128::MAX);
            if count > ENUMERATION_CAP {
                return Err(Error::EnumerationCapExceeded { states: count, cap: ENUMERATION_CAP });
            }
            let mut states = Vec::new();
            let mut tasks = vec![0usize; kn];
            loop {
                let mut weight = 1.0;
                for k in 0..kn {
                    weight *= instance.demand(k, tasks[k]);
                }
                if weight > 0.0 {
                    states.push(WeightedState { weight, tasks: tasks.clone() });
                }
                let mut pos = kn;
                loop {
                    if pos == 0 {
                        return Ok(states);
                    }
                    pos -= 1;
                    tasks[pos] += 1;
                    if tasks[pos] < fn_ {
                        break;
                    }
                    tasks[pos] = 0;
                }
            }
        }
    }
}

/// Search state: running per-(state, task-of-state) stream maxima and the
/// running objective, updated incrementally as devices are assigned.
struct Search<'a> {
    instance: &'a Instance,
    rates: Rates,
    states: Vec<WeightedState>,
    /// Distinct requested tasks per state.
    state_tasks: Vec<Vec<usize>>,
    assignments: Vec<Vec<Assignment>>,
    /// max over assigned requesters of inv_spectral_eff on the input stream.
    in_chan: Vec<f64>,
    /// max over assigned requesters of the input-stream rate demand.
    in_rate: Vec<f64>,
    /// max over assigned requesters of inv_spectral_eff on the output stream.
    out_chan: Vec<f64>,
    /// current bandwidth cell per (state, requested task slot).
    cell: Vec<f64>,
    chosen: Vec<usize>,
    best_value: f64,
    best_choice: Vec<usize>,
    examined: u64,
}

/// Undo record for one device layer.
struct UndoEntry {
    idx: usize,
    in_chan: f64,
    in_rate: f64,
    out_chan: f64,
    cell: f64,
}

impl<'a> Search<'a> {
    fn apply_device(&mut self, k: usize, assignment: &Assignment, undo: &mut Vec<UndoEntry>) {
        undo.clear();
        let fn_ = self.instance.num_tasks();
        let s_k = self.instance.devices[k].inv_spectral_eff;
        for si in 0..self.states.len() {
            let f = self.states[si].tasks[k];
            let route = assignment[f];
            if route != 2 && route != 3 {
                continue;
            }
            let idx = si * fn_ + f;
            let e = UndoEntry {
                idx,
                in_chan: self.in_chan[idx],
                in_rate: self.in_rate[idx],
                out_chan: self.out_chan[idx],
                cell: self.cell[idx],
            };
            if route == 2 {
                if s_k > self.in_chan[idx] {
                    self.in_chan[idx] = s_k;
                }
                let r = self.rates.fetch_compute(k, f);
                if r > self.in_rate[idx] {
                    self.in_rate[idx] = r;
                }
            } else if s_k > self.out_chan[idx] {
                self.out_chan[idx] = s_k;
            }
            self.cell[idx] = self.in_chan[idx] * self.in_rate[idx]
                + self.rates.fetch_output(f) * self.out_chan[idx];
            undo.push(e);
        }
    }

    fn unapply(&mut self, undo: &[UndoEntry]) {
        for e in undo.iter().rev() {
            self.in_chan[e.idx] = e.in_chan;
            self.in_rate[e.idx] = e.in_rate;
            self.out_chan[e.idx] = e.out_chan;
            self.cell[e.idx] = e.cell;
        }
    }

    /// Weighted objective of the current full assignment. Summed fresh from
    /// the per-stream cells in fixed order, so equal policies always produce
    /// bit-identical values.
    fn current_total(&self) -> f64 {
        let fn_ = self.instance.num_tasks();
        let mut total = 0.0;
        for (si, state) in self.states.iter().enumerate() {
            let mut per_state = 0.0;
            for &f in &self.state_tasks[si] {
                per_state += self.cell[si * fn_ + f];
            }
            total += state.weight * per_state;
        }
        total
    }

    fn dfs(&mut self, k: usize, undo_stack: &mut Vec<Vec<UndoEntry>>) {
        if k == self.instance.num_devices() {
            self.examined += 1;
            // Strict improvement keeps the lexicographically first optimum.
            let total = self.current_total();
            if total < self.best_value {
                self.best_value = total;
                self.best_choice = self.chosen.clone();
            }
            return;
        }
        let n_assign = self.assignments[k].len();
        for a in 0..n_assign {
            let assignment = std::mem::take(&mut self.assignments[k][a]);
            let mut undo = undo_stack.pop().unwrap_or_default();
            self.apply_device(k, &assignment, &mut undo);
            self.chosen[k] = a;
            self.assignments[k][a] = assignment;
            self.dfs(k + 1, undo_stack);
            self.unapply(&undo);
            undo_stack.push(undo);
        }
    }
}

/// Globally minimal feasible binary policy under the chosen objective.
///
/// The per-device budget constraints let the search enumerate feasible route
/// assignments device by device; only the objective couples devices, and it
/// is maintained incrementally through running per-stream maxima. Ties are
/// broken toward the lexicographically smallest policy (device-major, then
/// task, route indices ascending).
pub fn enumerate_optimal(
    instance: &Instance,
    objective: OracleObjective<'_>,
) -> Result<OracleResult> {
    let rates = Rates::new(instance);
    let kn = instance.num_devices();
    let mut assignments = Vec::with_capacity(kn);
    let mut product: u128 = 1;
    for k in 0..kn {
        let a = feasible_assignments(instance, &rates, k)?;
        product = product.saturating_mul(a.len() as u128);
        assignments.push(a);
    }
    if product > SEARCH_CAP {
        return Err(Error::SearchCapExceeded { policies: product, cap: SEARCH_CAP });
    }
    let states = objective_states(instance, objective)?;
    let state_tasks: Vec<Vec<usize>> = states
        .iter()
        .map(|s| {
            let mut tasks = s.tasks.clone();
            tasks.sort_unstable();
            tasks.dedup();
            tasks
        })
        .collect();
    let cells = states.len() * instance.num_tasks();
    let mut search = Search {
        instance,
        rates,
        states,
        state_tasks,
        assignments,
        in_chan: vec![0.0; cells],
        in_rate: vec![0.0; cells],
        out_chan: vec![0.0; cells],
        cell: vec![0.0; cells],
        chosen: vec![0; kn],
        best_value: f64::INFINITY,
        best_choice: Vec::new(),
        examined: 0,
    };
    let mut undo_stack = Vec::new();
    search.dfs(0, &mut undo_stack);

    let routes: Vec<Vec<Route>> = (0..kn)
        .map(|k| {
            search.assignments[k][search.best_choice[k]]
                .iter()
                .map(|&j| Route::from_index(j as usize).unwrap())
                .collect()
        })
        .collect();
    Ok(OracleResult {
        best_policy: ServicePolicy::from_routes(&routes),
        best_value: search.best_value,
        policies_examined: search.examined,
    })
}

/// One route choice for one task in the single-device problem: bandwidth
/// saved versus fetching the output, and its cache/energy price.
#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackItem {
    pub task: usize,
    pub route: Route,
    /// Demand-weighted bandwidth saving in Hz; nonpositive when the route
    /// cannot beat fetching the output.
    pub value: f64,
    pub cache_weight: f64,
    pub energy_weight: f64,
}

/// Builds the per-route items of device `k` considered in isolation: cached
/// routes save the whole output stream, fetch-and-compute saves the rate
/// difference, fetching the output saves nothing.
pub fn single_user_knapsack_items(instance: &Instance, k: usize) -> Vec<KnapsackItem> {
    let rates = Rates::new(instance);
    let s = instance.devices[k].inv_spectral_eff;
    let mut items = Vec::with_capacity(instance.num_tasks() * 4);
    for f in 0..instance.num_tasks() {
        let t = &instance.catalog.tasks[f];
        let p = instance.demand(k, f);
        let full = p * rates.fetch_output(f) * s;
        let r3 = rates.fetch_compute(k, f);
        let compute_saving = if r3.is_finite() {
            p * (rates.fetch_output(f) - r3) * s
        } else {
            f64::NEG_INFINITY
        };
        let energy = rates.energy(k, f);
        items.push(KnapsackItem {
            task: f,
            route: Route::CachedOutput,
            value: full,
            cache_weight: t.output_bits,
            energy_weight: 0.0,
        });
        items.push(KnapsackItem {
            task: f,
            route: Route::CachedInputCompute,
            value: full,
            cache_weight: t.input_bits,
            energy_weight: energy,
        });
        items.push(KnapsackItem {
            task: f,
            route: Route::FetchInputCompute,
            value: compute_saving,
            cache_weight: 0.0,
            energy_weight: energy,
        });
        items.push(KnapsackItem {
            task: f,
            route: Route::FetchOutput,
            value: 0.0,
            cache_weight: 0.0,
            energy_weight: 0.0,
        });
    }
    items
}

#[derive(Clone)]
struct DpState {
    cache: f64,
    energy: f64,
    value: f64,
    routes: Vec<Route>,
}

/// Exact single-device solve: one route per task maximizing total saving
/// under the cache and energy budgets.
///
/// Dynamic program over the reachable (cache, energy) sums with dominance
/// pruning; exact because the weights form a finite set. The resulting
/// maximum equals (bandwidth of fetching every output) minus (minimum
/// bandwidth) for that device.
pub fn solve_single_user(items: &[KnapsackItem], cache: f64, energy: f64) -> Result<OracleResult> {
    if cache < 0.0 {
        return Err(Error::NegativeBudget(format!("cache {cache}")));
    }
    if energy < 0.0 {
        return Err(Error::NegativeBudget(format!("energy {energy}")));
    }
    let num_tasks = items.iter().map(|i| i.task + 1).max().unwrap_or(0);
    let mut per_task: Vec<Vec<&KnapsackItem>> = vec![Vec::new(); num_tasks];
    for item in items {
        per_task[item.task].push(item);
    }
    for row in &mut per_task {
        row.sort_by_key(|i| i.route.index());
    }
    let cache_cap = cache + FEASIBILITY_TOL * cache.max(1.0);
    let energy_cap = energy + FEASIBILITY_TOL * energy.max(1.0);

    let mut frontier = vec![DpState { cache: 0.0, energy: 0.0, value: 0.0, routes: Vec::new() }];
    let mut examined: u64 = 1;
    for row in &per_task {
        let mut next: Vec<DpState> = Vec::with_capacity(frontier.len() * row.len());
        for state in &frontier {
            for item in row {
                if !item.value.is_finite() {
                    continue;
                }
                let c = state.cache + item.cache_weight;
                let e = state.energy + item.energy_weight;
                if c > cache_cap || e > energy_cap {
                    continue;
                }
                let mut routes = state.routes.clone();
                routes.push(item.route);
                next.push(DpState { cache: c, energy: e, value: state.value + item.value, routes });
                examined += 1;
            }
        }
        // Deterministic order: best value first, then cheapest, then the
        // lexicographically smallest route prefix.
        next.sort_by(|a, b| {
            b.value
                .partial_cmp(&a.value)
                .unwrap()
                .then(a.cache.partial_cmp(&b.cache).unwrap())
                .then(a.energy.partial_cmp(&b.energy).unwrap())
                .then_with(|| {
                    a.routes
                        .iter()
                        .map(|r| r.index())
                        .cmp(b.routes.iter().map(|r| r.index()))
                })
        });
        let mut kept: Vec<DpState> = Vec::new();
        'cand: for cand in next {
            for k in &kept {
                if k.cache <= cand.cache && k.energy <= cand.energy && k.value >= cand.value {
                    continue 'cand;
                }
            }
            kept.push(cand);
        }
        frontier = kept;
    }
    let best = frontier.first().expect("frontier never empties: fetching outputs is always in it");
    Ok(OracleResult {
        best_policy: ServicePolicy::from_routes(&[best.routes.clone()]),
        best_value: best.value,
        policies_examined: examined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandwidth::{exact_average_bandwidth, saa_objective};
    use crate::instance::{DeviceSpec, Instance, SystemParams, TaskCatalog, TaskSpec};
    use crate::policy::is_feasible;
    use crate::testutil::{random_instance, single_device_instance};

    fn zero_budget(mut inst: Instance) -> Instance {
        for d in &mut inst.devices {
            d.cache_bits = 0.0;
            d.avg_energy = 0.0;
        }
        inst
    }

    #[test]
    fn zero_budgets_force_output_fetch() {
        let inst = zero_budget(random_instance(2, 2, 3.0, 11));
        let res = enumerate_optimal(&inst, OracleObjective::Exact).unwrap();
        let mec = ServicePolicy::mec(2, 2);
        assert_eq!(res.best_policy, mec);
        let mec_value = exact_average_bandwidth(&inst, &mec).unwrap();
        assert!((res.best_value - mec_value).abs() <= 1e-12 * mec_value);
    }

    #[test]
    fn unbounded_cache_caches_everything() {
        let mut inst = random_instance(2, 2, 3.0, 13);
        let total_output: f64 = inst.catalog.tasks.iter().map(|t| t.output_bits).sum();
        for d in &mut inst.devices {
            d.cache_bits = total_output;
        }
        let res = enumerate_optimal(&inst, OracleObjective::Exact).unwrap();
        assert_eq!(
            res.best_policy,
            ServicePolicy::all_route(2, 2, Route::CachedOutput)
        );
        assert_eq!(res.best_value, 0.0);
    }

    /// Naive reference: evaluate every route table directly, no incremental
    /// bookkeeping.
    fn brute_force(inst: &Instance, samples: Option<&[crate::RequestSample]>) -> (f64, String) {
        let kn = inst.num_devices();
        let fn_ = inst.num_tasks();
        let mut best = f64::INFINITY;
        let mut best_enc = String::new();
        let total = 4usize.pow((kn * fn_) as u32);
        for code in 0..total {
            let mut c = code;
            let mut routes = vec![vec![Route::FetchOutput; fn_]; kn];
            // Build so that earlier (k, f) positions vary slowest.
            for k in (0..kn).rev() {
                for f in (0..fn_).rev() {
                    routes[k][f] = Route::from_index(c % 4).unwrap();
                    c /= 4;
                }
            }
            let p = ServicePolicy::from_routes(&routes);
            if !is_feasible(inst, &p) {
                continue;
            }
            let v = match samples {
                None => exact_average_bandwidth(inst, &p).unwrap(),
                Some(s) => saa_objective(inst, &p, s).unwrap(),
            };
            if v < best {
                best = v;
                best_enc = p.encode();
            }
        }
        (best, best_enc)
    }

    #[test]
    fn matches_naive_brute_force() {
        for seed in [3u64, 17, 91] {
            let inst = random_instance(2, 2, 3.0, seed);
            let res = enumerate_optimal(&inst, OracleObjective::Exact).unwrap();
            let (naive, naive_enc) = brute_force(&inst, None);
            assert!(
                (res.best_value - naive).abs() <= 1e-9 * naive.max(1.0),
                "seed {seed}: {} vs naive {naive}",
                res.best_value
            );
            assert_eq!(res.best_policy.encode(), naive_enc, "seed {seed}");
            assert!(is_feasible(&inst, &res.best_policy));
        }
    }

    #[test]
    fn saa_objective_agrees_with_direct_eval() {
        let inst = random_instance(2, 2, 3.0, 5);
        let samples = crate::sampling::draw_samples(&inst, 8, 3);
        let res = enumerate_optimal(&inst, OracleObjective::Saa(&samples)).unwrap();
        let direct = saa_objective(&inst, &res.best_policy, &samples).unwrap();
        assert!((res.best_value - direct).abs() <= 1e-9 * direct.max(1.0));
        let (naive, _) = brute_force(&inst, Some(&samples));
        assert!((res.best_value - naive).abs() <= 1e-9 * naive.max(1.0));
    }

    #[test]
    fn budget_growth_never_hurts() {
        for seed in 0..10u64 {
            let mut inst = random_instance(2, 2, 2.0, 100 + seed);
            let before = enumerate_optimal(&inst, OracleObjective::Exact).unwrap().best_value;
            for d in &mut inst.devices {
                d.cache_bits *= 2.0;
                d.avg_energy *= 2.0;
            }
            let after = enumerate_optimal(&inst, OracleObjective::Exact).unwrap().best_value;
            assert!(after <= before * (1.0 + 1e-12));
        }
    }

    #[test]
    fn oversized_search_is_rejected() {
        let inst = random_instance(8, 4, 2.0, 1);
        assert!(matches!(
            enumerate_optimal(&inst, OracleObjective::Exact),
            Err(Error::SearchCapExceeded { .. })
        ));
    }

    #[test]
    fn item_values_match_hand_evaluation() {
        let inst = single_device_instance(vec![(1e7, 10.0, 3e7)], 0.02, 1e-27, 1.1e11, 0.1);
        let mut inst = inst;
        inst.devices[0].demand = vec![1.0];
        let items = single_user_knapsack_items(&inst, 0);
        // P = 1 here; scale to P = 0.5 by halving.
        let v3 = items
            .iter()
            .find(|i| i.route == Route::FetchInputCompute)
            .unwrap()
            .value
            * 0.5;
        assert!((v3 - 4.880952380952381e7).abs() / v3.abs() < 1e-9);
        let v4 = items.iter().find(|i| i.route == Route::FetchOutput).unwrap();
        assert_eq!(v4.value, 0.0);
        assert_eq!(v4.cache_weight, 0.0);
        assert_eq!(v4.energy_weight, 0.0);
    }

    #[test]
    fn small_ratio_makes_compute_route_worthless() {
        for seed in 0..20u64 {
            let inst = random_instance(1, 3, 0.7, 200 + seed);
            for item in single_user_knapsack_items(&inst, 0) {
                if item.route == Route::FetchInputCompute {
                    assert!(item.value <= 0.0);
                }
            }
        }
    }

    #[test]
    fn toy_knapsack_caches_the_popular_output() {
        let tasks = vec![
            TaskSpec { input_bits: 4.0, compute_load: 1.0, output_bits: 4.0 },
            TaskSpec { input_bits: 4.0, compute_load: 1.0, output_bits: 4.0 },
        ];
        let inst = Instance {
            catalog: TaskCatalog::new(tasks),
            devices: vec![DeviceSpec {
                cache_bits: 4.0,
                avg_energy: 0.0,
                cpu_freq: 10.0,
                inv_spectral_eff: 1.0,
                demand: vec![0.8, 0.2],
            }],
            params: SystemParams { deadline: 1.0, energy_coeff: 0.01 },
        };
        let items = single_user_knapsack_items(&inst, 0);
        let res = solve_single_user(&items, 4.0, 0.0).unwrap();
        assert_eq!(res.best_policy.route_of(0, 0), Some(Route::CachedOutput));
        assert_eq!(res.best_policy.route_of(0, 1), Some(Route::FetchOutput));
        assert!((res.best_value - 3.2).abs() < 1e-12);
    }

    #[test]
    fn zero_budgets_save_nothing() {
        let inst = random_instance(1, 3, 2.0, 7);
        let items = single_user_knapsack_items(&inst, 0);
        let res = solve_single_user(&items, 0.0, 0.0).unwrap();
        assert_eq!(res.best_value, 0.0);
        assert_eq!(res.best_policy, ServicePolicy::mec(1, 3));
    }

    #[test]
    fn negative_budgets_are_errors() {
        let inst = random_instance(1, 2, 2.0, 7);
        let items = single_user_knapsack_items(&inst, 0);
        assert!(matches!(
            solve_single_user(&items, -1.0, 0.0),
            Err(Error::NegativeBudget(_))
        ));
    }

    #[test]
    fn knapsack_agrees_with_enumeration_for_one_device() {
        for seed in 0..15u64 {
            let inst = random_instance(1, 3, 3.0, 300 + seed);
            let exact = enumerate_optimal(&inst, OracleObjective::Exact).unwrap();
            let items = single_user_knapsack_items(&inst, 0);
            let dev = &inst.devices[0];
            let profit = solve_single_user(&items, dev.cache_bits, dev.avg_energy).unwrap();
            let mec = exact_average_bandwidth(&inst, &ServicePolicy::mec(1, 3)).unwrap();
            let via_profit = mec - profit.best_value;
            assert!(
                (exact.best_value - via_profit).abs() <= 1e-9 * mec.max(1.0),
                "seed {seed}: {} vs {}",
                exact.best_value,
                via_profit
            );
        }
    }
}
