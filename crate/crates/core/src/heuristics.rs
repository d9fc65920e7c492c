//! Baseline policy constructors and the output-caching greedy used when
//! outputs are no larger than inputs, plus a randomized check of the
//! diminishing-returns structure that justifies the greedy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bandwidth::RequestSample;
use crate::error::{Error, Result};
use crate::instance::{Instance, Rates};
use crate::policy::{Route, ServicePolicy};

/// One greedy step: what was assigned where, at what score, and the budget
/// totals after the step. Cumulative columns never exceed the budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub device: usize,
    pub task: usize,
    pub route: Route,
    pub score: f64,
    pub cache_used: f64,
    pub energy_used: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GreedyTrace {
    pub steps: Vec<TraceStep>,
}

impl GreedyTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "# edgecast-csv v1 greedy_trace\nstep,device_id,task_id,route,score,cache_used_bits,energy_used_j\n",
        );
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{},{},{},{},{}\n",
                s.device,
                s.task,
                s.route.number(),
                s.score,
                s.cache_used,
                s.energy_used
            ));
        }
        out
    }
}

/// Everything is downloaded as outputs: always feasible, zero cache and
/// energy use.
pub fn mec_computing_policy(instance: &Instance) -> ServicePolicy {
    ServicePolicy::mec(instance.num_devices(), instance.num_tasks())
}

/// Sorts tasks per device by demand-weighted output rate per cached bit and
/// output-caches the longest prefix that fits the cache. Ties go to the lower
/// task index. Remaining tasks fetch their outputs.
pub fn greedy_caching_policy(instance: &Instance) -> (ServicePolicy, GreedyTrace) {
    let rates = Rates::new(instance);
    let kn = instance.num_devices();
    let fn_ = instance.num_tasks();
    let mut policy = ServicePolicy::mec(kn, fn_);
    let mut trace = GreedyTrace::default();
    for k in 0..kn {
        let s = instance.devices[k].inv_spectral_eff;
        let _ = s;
        let mut order: Vec<usize> = (0..fn_).collect();
        let score =
            |f: usize| instance.demand(k, f) * rates.fetch_output(f) / instance.catalog.tasks[f].output_bits;
        order.sort_by(|&a, &b| score(b).partial_cmp(&score(a)).unwrap().then(a.cmp(&b)));
        let mut cache = 0.0;
        for &f in &order {
            let need = instance.catalog.tasks[f].output_bits;
            if cache + need > instance.devices[k].cache_bits {
                break;
            }
            cache += need;
            policy.set_route(k, f, Route::CachedOutput);
            trace.steps.push(TraceStep {
                device: k,
                task: f,
                route: Route::CachedOutput,
                score: score(f),
                cache_used: cache,
                energy_used: 0.0,
            });
        }
    }
    (policy, trace)
}

/// Joint caching-and-computing greedy.
///
/// Per device: (i) cache-and-compute inputs in order of demand-weighted
/// output rate per combined cache-plus-energy price, stopping at the first
/// task that would break either budget; (ii) if cache is left, output-cache
/// remaining tasks by the output-caching score; (iii) otherwise, if energy is
/// left, assign fetch-and-compute by saving per joule, skipping tasks whose
/// saving is not positive; (iv) everything else fetches its output.
pub fn greedy_caching_computing_policy(instance: &Instance) -> (ServicePolicy, GreedyTrace) {
    let rates = Rates::new(instance);
    let kn = instance.num_devices();
    let fn_ = instance.num_tasks();
    let mut policy = ServicePolicy::mec(kn, fn_);
    let mut trace = GreedyTrace::default();
    for k in 0..kn {
        let dev = &instance.devices[k];
        let combined_score = |f: usize| {
            let t = &instance.catalog.tasks[f];
            instance.demand(k, f) * rates.fetch_output(f) / (t.output_bits + rates.energy(k, f))
        };
        let mut order: Vec<usize> = (0..fn_).collect();
        order.sort_by(|&a, &b| {
            combined_score(b)
                .partial_cmp(&combined_score(a))
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut cache = 0.0;
        let mut energy = 0.0;
        let mut assigned = vec![false; fn_];
        for &f in &order {
            let need_cache = instance.catalog.tasks[f].input_bits;
            let need_energy = rates.energy(k, f);
            if cache + need_cache > dev.cache_bits || energy + need_energy > dev.avg_energy {
                break;
            }
            cache += need_cache;
            energy += need_energy;
            assigned[f] = true;
            policy.set_route(k, f, Route::CachedInputCompute);
            trace.steps.push(TraceStep {
                device: k,
                task: f,
                route: Route::CachedInputCompute,
                score: combined_score(f),
                cache_used: cache,
                energy_used: energy,
            });
        }
        if cache < dev.cache_bits {
            let cache_score = |f: usize| {
                instance.demand(k, f) * rates.fetch_output(f)
                    / instance.catalog.tasks[f].output_bits
            };
            let mut rest: Vec<usize> = (0..fn_).filter(|&f| !assigned[f]).collect();
            rest.sort_by(|&a, &b| {
                cache_score(b).partial_cmp(&cache_score(a)).unwrap().then(a.cmp(&b))
            });
            for &f in &rest {
                let need = instance.catalog.tasks[f].output_bits;
                if cache + need > dev.cache_bits {
                    break;
                }
                cache += need;
                assigned[f] = true;
                policy.set_route(k, f, Route::CachedOutput);
                trace.steps.push(TraceStep {
                    device: k,
                    task: f,
                    route: Route::CachedOutput,
                    score: cache_score(f),
                    cache_used: cache,
                    energy_used: energy,
                });
            }
        } else if energy < dev.avg_energy {
            let compute_score = |f: usize| {
                let saving = instance.demand(k, f)
                    * (rates.fetch_output(f) - rates.fetch_compute(k, f));
                saving / rates.energy(k, f)
            };
            let mut rest: Vec<usize> = (0..fn_)
                .filter(|&f| !assigned[f] && rates.fetch_compute(k, f).is_finite())
                .collect();
            rest.sort_by(|&a, &b| {
                compute_score(b).partial_cmp(&compute_score(a)).unwrap().then(a.cmp(&b))
            });
            for &f in &rest {
                if compute_score(f) <= 0.0 {
                    break;
                }
                let need = rates.energy(k, f);
                if energy + need > dev.avg_energy {
                    break;
                }
                energy += need;
                policy.set_route(k, f, Route::FetchInputCompute);
                trace.steps.push(TraceStep {
                    device: k,
                    task: f,
                    route: Route::FetchInputCompute,
                    score: compute_score(f),
                    cache_used: cache,
                    energy_used: energy,
                });
            }
        }
    }
    (policy, trace)
}

/// Sampled objective over output-cache bit sets: only output caching and
/// output fetching are in play, so a request state costs, per requested task,
/// the output rate times the worst channel among requesters whose bit is off.
struct OutputCacheObjective<'a> {
    instance: &'a Instance,
    rates: Rates,
    samples: &'a [RequestSample],
}

impl<'a> OutputCacheObjective<'a> {
    fn new(instance: &'a Instance, samples: &'a [RequestSample]) -> Self {
        Self { instance, rates: Rates::new(instance), samples }
    }

    /// `cached[k * F + f]` is the output-cache bit of (device, task).
    fn value(&self, cached: &[bool]) -> f64 {
        let fn_ = self.instance.num_tasks();
        let mut total = 0.0;
        for sample in self.samples {
            // Devices requesting the same task share one stream; scan
            // requesters per distinct task in the sample.
            for (k, &f) in sample.tasks.iter().enumerate() {
                if sample.tasks[..k].contains(&f) {
                    continue;
                }
                let mut worst = 0.0f64;
                for (k2, &f2) in sample.tasks.iter().enumerate() {
                    if f2 == f && !cached[k2 * fn_ + f] {
                        worst = worst.max(self.instance.devices[k2].inv_spectral_eff);
                    }
                }
                total += self.rates.fetch_output(f) * worst;
            }
        }
        total / self.samples.len() as f64
    }
}

/// Output-caching greedy for catalogs whose outputs are no larger than their
/// inputs. Starting from all-fetch, repeatedly sets the output-cache bit with
/// the largest sampled-objective decrease per cached bit, subject to each
/// device's cache budget, until nothing helps or fits. Only output caching
/// and output fetching are used.
pub fn alpha_le1_greedy(
    instance: &Instance,
    samples: &[RequestSample],
) -> Result<(ServicePolicy, GreedyTrace)> {
    if instance.catalog.alpha > 1.0 {
        return Err(Error::AlphaAboveOne { alpha: instance.catalog.alpha });
    }
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let kn = instance.num_devices();
    let fn_ = instance.num_tasks();
    let objective = OutputCacheObjective::new(instance, samples);
    let mut cached = vec![false; kn * fn_];
    let mut cache_used = vec![0.0; kn];
    let mut current = objective.value(&cached);
    let mut trace = GreedyTrace::default();
    loop {
        let mut best: Option<(f64, usize, usize, f64)> = None; // (score, k, f, new_value)
        for k in 0..kn {
            for f in 0..fn_ {
                if cached[k * fn_ + f] {
                    continue;
                }
                let need = instance.catalog.tasks[f].output_bits;
                if cache_used[k] + need > instance.devices[k].cache_bits {
                    continue;
                }
                cached[k * fn_ + f] = true;
                let value = objective.value(&cached);
                cached[k * fn_ + f] = false;
                let score = (current - value) / need;
                if score > 0.0 {
                    let better = match best {
                        None => true,
                        // Ties by task index then device index.
                        Some((s, bk, bf, _)) => {
                            score > s || (score == s && (f, k) < (bf, bk))
                        }
                    };
                    if better {
                        best = Some((score, k, f, value));
                    }
                }
            }
        }
        match best {
            None => break,
            Some((score, k, f, value)) => {
                cached[k * fn_ + f] = true;
                cache_used[k] += instance.catalog.tasks[f].output_bits;
                current = value;
                trace.steps.push(TraceStep {
                    device: k,
                    task: f,
                    route: Route::CachedOutput,
                    score,
                    cache_used: cache_used[k],
                    energy_used: 0.0,
                });
            }
        }
    }
    let mut policy = ServicePolicy::mec(kn, fn_);
    for k in 0..kn {
        for f in 0..fn_ {
            if cached[k * fn_ + f] {
                policy.set_route(k, f, Route::CachedOutput);
            }
        }
    }
    Ok((policy, trace))
}

/// One structure failure found by [`submodularity_check`].
#[derive(Debug, Clone, PartialEq)]
pub enum StructureFailure {
    /// Adding an element to the superset increased the objective.
    Monotonicity { trial: usize, gain: f64 },
    /// The marginal value grew with the set: adding the element changed the
    /// objective less at the subset than at the superset.
    DiminishingReturns {
        trial: usize,
        subset_change: f64,
        superset_change: f64,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StructureReport {
    pub trials: usize,
    pub failures: Vec<StructureFailure>,
}

impl StructureReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Randomized check that the sampled output-cache objective is monotone
/// nonincreasing and submodular over the ground set of (device, task)
/// output-cache bits: draws nested bit sets S ⊆ T and an element outside T,
/// and verifies that the marginal value of the element never grows with the
/// set (the objective drop at T is at least the drop at S).
pub fn submodularity_check(
    instance: &Instance,
    samples: &[RequestSample],
    trials: usize,
    seed: u64,
) -> Result<StructureReport> {
    if instance.catalog.alpha > 1.0 {
        return Err(Error::AlphaAboveOne { alpha: instance.catalog.alpha });
    }
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let kn = instance.num_devices();
    let fn_ = instance.num_tasks();
    let ground = kn * fn_;
    let objective = OutputCacheObjective::new(instance, samples);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = StructureReport { trials, ..Default::default() };
    let scale = objective.value(&vec![false; ground]).max(1.0);
    let tol = 1e-9 * scale;
    for trial in 0..trials {
        let large: Vec<bool> = (0..ground).map(|_| rng.gen_bool(0.5)).collect();
        let outside: Vec<usize> = (0..ground).filter(|&i| !large[i]).collect();
        if outside.is_empty() {
            continue;
        }
        let e = outside[rng.gen_range(0..outside.len())];
        let small: Vec<bool> = large.iter().map(|&b| b && rng.gen_bool(0.5)).collect();

        let f_large = objective.value(&large);
        let mut large_plus = large.clone();
        large_plus[e] = true;
        let f_large_plus = objective.value(&large_plus);
        if f_large_plus > f_large + tol {
            report.failures.push(StructureFailure::Monotonicity {
                trial,
                gain: f_large_plus - f_large,
            });
        }
        let f_small = objective.value(&small);
        let mut small_plus = small.clone();
        small_plus[e] = true;
        let f_small_plus = objective.value(&small_plus);
        let subset_change = f_small_plus - f_small;
        let superset_change = f_large_plus - f_large;
        if subset_change < superset_change - tol {
            report.failures.push(StructureFailure::DiminishingReturns {
                trial,
                subset_change,
                superset_change,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandwidth::saa_objective;
    use crate::instance::{DeviceSpec, Instance, SystemParams, TaskCatalog, TaskSpec};
    use crate::oracle::{enumerate_optimal, OracleObjective};
    use crate::policy::is_feasible;
    use crate::sampling::draw_samples;
    use crate::testutil::random_instance;

    #[test]
    fn mec_policy_shape() {
        let inst = random_instance(2, 3, 2.0, 1);
        let p = mec_computing_policy(&inst);
        for k in 0..2 {
            for f in 0..3 {
                assert_eq!(p.route_of(k, f), Some(Route::FetchOutput));
            }
        }
        assert!(is_feasible(&inst, &p));
    }

    fn single_user_toy() -> Instance {
        let tasks = vec![
            TaskSpec { input_bits: 4.0, compute_load: 1.0, output_bits: 4.0 },
            TaskSpec { input_bits: 4.0, compute_load: 1.0, output_bits: 4.0 },
        ];
        Instance {
            catalog: TaskCatalog::new(tasks),
            devices: vec![DeviceSpec {
                cache_bits: 4.0,
                avg_energy: 0.0,
                cpu_freq: 10.0,
                inv_spectral_eff: 1.0,
                demand: vec![0.8, 0.2],
            }],
            params: SystemParams { deadline: 1.0, energy_coeff: 0.01 },
        }
    }

    #[test]
    fn caching_greedy_prefers_popular_output() {
        let inst = single_user_toy();
        let (p, trace) = greedy_caching_policy(&inst);
        assert_eq!(p.route_of(0, 0), Some(Route::CachedOutput));
        assert_eq!(p.route_of(0, 1), Some(Route::FetchOutput));
        assert_eq!(trace.steps.len(), 1);
    }

    #[test]
    fn caching_greedy_degenerates_with_budgets() {
        let mut inst = random_instance(2, 3, 2.0, 2);
        for d in &mut inst.devices {
            d.cache_bits = 0.0;
        }
        assert_eq!(greedy_caching_policy(&inst).0, mec_computing_policy(&inst));
        let total_out: f64 = inst.catalog.tasks.iter().map(|t| t.output_bits).sum();
        for d in &mut inst.devices {
            d.cache_bits = total_out;
        }
        let (p, _) = greedy_caching_policy(&inst);
        assert_eq!(
            p,
            ServicePolicy::all_route(2, 3, Route::CachedOutput)
        );
    }

    #[test]
    fn joint_greedy_without_energy_is_output_caching() {
        let mut inst = random_instance(2, 3, 3.0, 3);
        for d in &mut inst.devices {
            d.avg_energy = 0.0;
        }
        let (p, _) = greedy_caching_computing_policy(&inst);
        assert_eq!(p, greedy_caching_policy(&inst).0);
    }

    #[test]
    fn joint_greedy_skips_worthless_compute_routes() {
        // Small output/input ratio: fetch-and-compute can never beat
        // fetching the output, so no such assignment may appear.
        for seed in 0..10u64 {
            let inst = random_instance(2, 3, 0.8, 400 + seed);
            let (p, _) = greedy_caching_computing_policy(&inst);
            for k in 0..2 {
                for f in 0..3 {
                    assert_ne!(p.route_of(k, f), Some(Route::FetchInputCompute));
                }
            }
        }
    }

    #[test]
    fn all_constructors_feasible_and_weaker_than_oracle() {
        for seed in 0..8u64 {
            let inst = random_instance(2, 2, 3.0, 500 + seed);
            let samples = draw_samples(&inst, 16, seed);
            let oracle = enumerate_optimal(&inst, OracleObjective::Saa(&samples)).unwrap();
            for policy in [
                mec_computing_policy(&inst),
                greedy_caching_policy(&inst).0,
                greedy_caching_computing_policy(&inst).0,
            ] {
                assert!(is_feasible(&inst, &policy), "seed {seed}");
                let v = saa_objective(&inst, &policy, &samples).unwrap();
                assert!(
                    oracle.best_value <= v * (1.0 + 1e-12) + 1e-12,
                    "seed {seed}: oracle {} above heuristic {v}",
                    oracle.best_value
                );
            }
        }
    }

    #[test]
    fn trace_budget_columns_monotone_and_bounded() {
        for seed in 0..6u64 {
            let inst = random_instance(3, 4, 3.0, 600 + seed);
            let (_, trace) = greedy_caching_computing_policy(&inst);
            let mut last: Vec<(f64, f64)> = vec![(0.0, 0.0); inst.num_devices()];
            for s in &trace.steps {
                let (c, e) = last[s.device];
                assert!(s.cache_used >= c && s.energy_used >= e);
                assert!(s.cache_used <= inst.devices[s.device].cache_bits * (1.0 + 1e-12));
                assert!(s.energy_used <= inst.devices[s.device].avg_energy * (1.0 + 1e-12));
                last[s.device] = (s.cache_used, s.energy_used);
            }
        }
    }

    #[test]
    fn output_greedy_requires_small_ratio() {
        let inst = random_instance(2, 2, 2.0, 9);
        let samples = draw_samples(&inst, 4, 1);
        assert!(matches!(
            alpha_le1_greedy(&inst, &samples),
            Err(Error::AlphaAboveOne { .. })
        ));
    }

    #[test]
    fn output_greedy_zero_cache_stays_mec() {
        let mut inst = random_instance(2, 2, 0.9, 10);
        for d in &mut inst.devices {
            d.cache_bits = 0.0;
        }
        let samples = draw_samples(&inst, 8, 2);
        let (p, trace) = alpha_le1_greedy(&inst, &samples).unwrap();
        assert_eq!(p, mec_computing_policy(&inst));
        assert!(trace.steps.is_empty());
    }

    #[test]
    fn output_greedy_uses_only_cache_or_fetch_routes() {
        for seed in 0..6u64 {
            let inst = random_instance(2, 3, 0.8, 700 + seed);
            let samples = draw_samples(&inst, 12, seed);
            let (p, _) = alpha_le1_greedy(&inst, &samples).unwrap();
            assert!(is_feasible(&inst, &p));
            for k in 0..2 {
                for f in 0..3 {
                    let r = p.route_of(k, f).unwrap();
                    assert!(r == Route::CachedOutput || r == Route::FetchOutput);
                }
            }
            // Greedy never beats the exhaustive optimum on the same samples.
            let oracle = enumerate_optimal(&inst, OracleObjective::Saa(&samples)).unwrap();
            let v = saa_objective(&inst, &p, &samples).unwrap();
            assert!(v >= oracle.best_value * (1.0 - 1e-12) - 1e-9);
        }
    }

    #[test]
    fn structure_check_passes_and_full_set_is_free() {
        let inst = random_instance(2, 3, 0.9, 77);
        let samples = draw_samples(&inst, 20, 5);
        let report = submodularity_check(&inst, &samples, 500, 42).unwrap();
        assert!(report.passed(), "failures: {:?}", report.failures);
        let objective = OutputCacheObjective::new(&inst, &samples);
        assert_eq!(objective.value(&vec![true; 6]), 0.0);
        assert!(objective.value(&vec![false; 6]) > 0.0);
    }
}
