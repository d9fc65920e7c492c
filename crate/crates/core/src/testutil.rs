//! Deterministic fixture builders and slow reference solvers shared by unit,
//! property and acceptance tests. Not part of the stable API.
#![doc(hidden)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::instance::{DeviceSpec, Instance, SystemParams, TaskCatalog, TaskSpec};
use crate::policy::{Route, ServicePolicy};
use crate::sampling::zipf_popularity;
use crate::solver::{AdmmState, SolverContext};

/// A halfspace `w · z <= b`.
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub bound: f64,
}

/// Dykstra's alternating projections onto an intersection of halfspaces.
/// Exact in the limit; `cycles` controls the accuracy.
pub fn dykstra(z: &mut [f64], halfspaces: &[Halfspace], cycles: usize) {
    let dim = z.len();
    let mut corrections = vec![vec![0.0; dim]; halfspaces.len()];
    for _ in 0..cycles {
        for (h, corr) in halfspaces.iter().zip(corrections.iter_mut()) {
            let mut y = vec![0.0; dim];
            for i in 0..dim {
                y[i] = z[i] + corr[i];
            }
            let lhs: f64 = y.iter().zip(&h.normal).map(|(a, b)| a * b).sum();
            if lhs > h.bound {
                let nrm: f64 = h.normal.iter().map(|v| v * v).sum();
                let shift = (lhs - h.bound) / nrm;
                for i in 0..dim {
                    y[i] -= shift * h.normal[i];
                }
            }
            for i in 0..dim {
                corr[i] = z[i] + corr[i] - y[i];
                z[i] = y[i];
            }
        }
    }
}

/// Dense projected-gradient reference for one (sample, task) block of the
/// local-update subproblem. Variables are `[a_in, b_in, a_out, x_{k,j}...]`.
/// Independent of the closed-form path: plain gradient steps plus Dykstra
/// projections onto the stream halfspaces.
pub fn pg_block_reference(
    ctx: &SolverContext,
    st: &AdmmState,
    n: usize,
    f: usize,
    steps: usize,
    cycles: usize,
) -> (f64, f64, f64, Vec<f64>) {
    let kn = ctx.num_devices;
    let fn_ = ctx.num_tasks;
    let cell = n * fn_ + f;
    let bl = ctx.block_len();
    let reqs = &ctx.requesters[cell];
    let dt = st.anchor_a[cell] - st.anchor_b[cell];
    let dual = &st.duals[cell * bl..(cell + 1) * bl];
    let base: Vec<f64> = (0..kn * 4)
        .map(|i| {
            let (k, j) = (i / 4, i % 4);
            let gi = (k * fn_ + f) * 4 + j;
            st.global[gi] + (st.rho * crate::solver::penalty_coef(st.anchor_x[gi], j) - dual[i]) / st.gamma
        })
        .collect();
    let dim = 3 + kn * 4;
    let mut halfspaces = Vec::new();
    let mut hs = |entries: Vec<(usize, f64)>| {
        let mut normal = vec![0.0; dim];
        for (i, v) in entries {
            normal[i] = v;
        }
        halfspaces.push(Halfspace { normal, bound: 0.0 });
    };
    for &k in reqs {
        if ctx.route3_ok[k * fn_ + f] {
            hs(vec![(0, -1.0), (3 + k * 4 + 2, ctx.chan[k])]);
            hs(vec![(1, -1.0), (3 + k * 4 + 2, ctx.rate3[k * fn_ + f])]);
        }
        hs(vec![(2, -1.0), (3 + k * 4 + 3, ctx.chan[k])]);
    }
    let pinned: Vec<usize> = (0..kn)
        .filter(|&k| !ctx.route3_ok[k * fn_ + f])
        .map(|k| 3 + k * 4 + 2)
        .collect();
    if reqs.len() < kn
        || reqs.iter().any(|&k| !ctx.route3_ok[k * fn_ + f]) {
        for aux in 0..3 {
            hs(vec![(aux, -1.0)]);
        }
    }
    let mut z = vec![0.0; dim];
    for i in 0..kn * 4 {
        z[3 + i] = base[i];
    }
    for &p in &pinned {
        z[p] = 0.0;
    }
    let step = 0.9 / (1.0 + st.gamma);
    for _ in 0..steps {
        let mut g = vec![0.0; dim];
        g[0] = (z[0] + z[1]) / 2.0 - dt / 2.0;
        g[1] = (z[0] + z[1]) / 2.0 + dt / 2.0;
        g[2] = ctx.rate4[f];
        for i in 0..kn * 4 {
            g[3 + i] = st.gamma * (z[3 + i] - base[i]);
        }
        for i in 0..dim {
            z[i] -= step * g[i];
        }
        for &p in &pinned {
            z[p] = 0.0;
        }
        dykstra(&mut z, &halfspaces, cycles);
        for &p in &pinned {
            z[p] = 0.0;
        }
    }
    (z[0], z[1], z[2], z[3..].to_vec())
}

/// Dense reference for the global-update step of one device: Euclidean
/// projection of the dual-averaged targets onto the budget polytope via
/// Dykstra over the unit box, the row-sum hyperplanes and the two budget
/// halfspaces.
pub fn pg_device_reference(
    ctx: &SolverContext,
    st: &AdmmState,
    k: usize,
    cycles: usize,
) -> Vec<f64> {
    let fn_ = ctx.num_tasks;
    let bl = ctx.block_len();
    let dim = fn_ * 4;
    let mut target = vec![0.0; dim];
    for n in 0..ctx.num_samples {
        for f in 0..fn_ {
            let off = (n * fn_ + f) * bl + k * 4;
            for j in 0..4 {
                target[f * 4 + j] += st.locals[off + j] + st.duals[off + j] / st.gamma;
            }
        }
    }
    for t in &mut target {
        *t /= ctx.num_samples as f64;
    }
    let pinned: Vec<bool> = (0..dim)
        .map(|i| {
            let (f, j) = (i / 4, i % 4);
            (j == 2 && !ctx.route3_ok[k * fn_ + f])
                || (ctx.cache_limit[k] == 0.0 && ctx.cache_w[i] > 0.0)
                || (ctx.energy_limit[k] == 0.0 && ctx.energy_w[k * dim + i] > 0.0)
        })
        .collect();
    let mut z = target.clone();
    for (i, &p) in pinned.iter().enumerate() {
        if p {
            z[i] = 0.0;
        }
    }
    // Dykstra over: per-row simplex-with-box sets, cache halfspace, energy
    // halfspace. Rows are exact sub-projections.
    let sets = fn_ + 2;
    let mut corrections = vec![vec![0.0; dim]; sets];
    for _ in 0..cycles {
        for s in 0..sets {
            let mut y: Vec<f64> = z.iter().zip(&corrections[s]).map(|(a, b)| a + b).collect();
            if s < fn_ {
                let f = s;
                let mut v = [0.0; 4];
                v.copy_from_slice(&y[f * 4..f * 4 + 4]);
                let mut allowed = [true; 4];
                for j in 0..4 {
                    if pinned[f * 4 + j] {
                        allowed[j] = false;
                        v[j] = 0.0;
                    }
                }
                let row = exact_row_projection(&v, &allowed);
                y[f * 4..f * 4 + 4].copy_from_slice(&row);
            } else {
                let (w, limit): (Vec<f64>, f64) = if s == fn_ {
                    ((0..dim).map(|i| ctx.cache_w[i]).collect(), ctx.cache_limit[k])
                } else {
                    ((0..dim).map(|i| ctx.energy_w[k * dim + i]).collect(), ctx.energy_limit[k])
                };
                let lhs: f64 = y.iter().zip(&w).map(|(a, b)| a * b).sum();
                if lhs > limit {
                    let nrm: f64 = w.iter().map(|v| v * v).sum();
                    if nrm > 0.0 {
                        let shift = (lhs - limit) / nrm;
                        for (v, &wi) in y.iter_mut().zip(&w) {
                            *v -= shift * wi;
                        }
                    }
                }
            }
            for i in 0..dim {
                corrections[s][i] = z[i] + corrections[s][i] - y[i];
                z[i] = y[i];
            }
        }
    }
    z
}

/// Exact Euclidean projection of a row onto the simplex-with-box set
/// `{x in [0,1]^allowed : sum x = 1}` by bisection on the shift.
fn exact_row_projection(v: &[f64; 4], allowed: &[bool; 4]) -> [f64; 4] {
    let phi = |nu: f64| -> f64 {
        (0..4)
            .filter(|&j| allowed[j])
            .map(|j| (v[j] - nu).clamp(0.0, 1.0))
            .sum()
    };
    let mut lo = -5.0f64;
    let mut hi = 5.0f64;
    for j in 0..4 {
        if allowed[j] {
            lo = lo.min(v[j] - 2.0);
            hi = hi.max(v[j] + 1.0);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = 0.5 * (lo + hi);
    let mut out = [0.0; 4];
    for j in 0..4 {
        if allowed[j] {
            out[j] = (v[j] - nu).clamp(0.0, 1.0);
        }
    }
    out
}

/// Single device, uniform demand, explicit `(input, load, output)` tasks.
pub fn single_device_instance(
    tasks: Vec<(f64, f64, f64)>,
    deadline: f64,
    energy_coeff: f64,
    cpu_freq: f64,
    inv_spectral_eff: f64,
) -> Instance {
    let fn_ = tasks.len();
    let tasks: Vec<TaskSpec> = tasks
        .into_iter()
        .map(|(i, w, o)| TaskSpec { input_bits: i, compute_load: w, output_bits: o })
        .collect();
    Instance {
        catalog: TaskCatalog::new(tasks),
        devices: vec![DeviceSpec {
            cache_bits: 0.0,
            avg_energy: 0.0,
            cpu_freq,
            inv_spectral_eff,
            demand: vec![1.0 / fn_ as f64; fn_],
        }],
        params: SystemParams { deadline, energy_coeff },
    }
}

/// K=2, F=2 instance with ample budgets; alpha = 3.
pub fn small_instance() -> Instance {
    let tasks = vec![
        TaskSpec { input_bits: 1e6, compute_load: 10.0, output_bits: 3e6 },
        TaskSpec { input_bits: 2e6, compute_load: 10.0, output_bits: 6e6 },
    ];
    Instance {
        catalog: TaskCatalog::new(tasks),
        devices: vec![
            DeviceSpec {
                cache_bits: 1e7,
                avg_energy: 50.0,
                cpu_freq: 1e10,
                inv_spectral_eff: 0.1,
                demand: vec![0.6, 0.4],
            },
            DeviceSpec {
                cache_bits: 5e6,
                avg_energy: 20.0,
                cpu_freq: 2e10,
                inv_spectral_eff: 0.2,
                demand: vec![0.3, 0.7],
            },
        ],
        params: SystemParams { deadline: 0.01, energy_coeff: 1e-27 },
    }
}

/// K=2, F=2, alpha=1, uniform demand, s=(0.1, 0.2); outputs 1e6 and 2e6 bits
/// with a 0.1 s deadline, so the fetch-output rates are 1e7 and 2e7 bits/s.
pub fn breakdown_fixture() -> Instance {
    let tasks = vec![
        TaskSpec { input_bits: 1e6, compute_load: 1.0, output_bits: 1e6 },
        TaskSpec { input_bits: 2e6, compute_load: 1.0, output_bits: 2e6 },
    ];
    let device = |s: f64| DeviceSpec {
        cache_bits: 0.0,
        avg_energy: 0.0,
        cpu_freq: 1e11,
        inv_spectral_eff: s,
        demand: vec![0.5, 0.5],
    };
    Instance {
        catalog: TaskCatalog::new(tasks),
        devices: vec![device(0.1), device(0.2)],
        params: SystemParams { deadline: 0.1, energy_coeff: 1e-27 },
    }
}

/// Random binary policy, uniform over routes.
pub fn tiny_rng_policy(num_devices: usize, num_tasks: usize, seed: u64) -> ServicePolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let routes: Vec<Vec<Route>> = (0..num_devices)
        .map(|_| {
            (0..num_tasks)
                .map(|_| Route::ALL[rng.gen_range(0..4)])
                .collect()
        })
        .collect();
    ServicePolicy::from_routes(&routes)
}

/// Random binary policy made feasible by demoting rows to output download
/// until both budgets hold.
pub fn random_feasible_policy(instance: &Instance, seed: u64) -> ServicePolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut routes: Vec<Vec<Route>> = (0..instance.num_devices())
        .map(|_| {
            (0..instance.num_tasks())
                .map(|_| Route::ALL[rng.gen_range(0..4)])
                .collect()
        })
        .collect();
    for k in 0..instance.num_devices() {
        loop {
            let mut cache = 0.0;
            let mut energy = 0.0;
            for f in 0..instance.num_tasks() {
                let t = &instance.catalog.tasks[f];
                match routes[k][f] {
                    Route::CachedOutput => cache += t.output_bits,
                    Route::CachedInputCompute => {
                        cache += t.input_bits;
                        energy += instance.compute_energy(k, f);
                    }
                    Route::FetchInputCompute => energy += instance.compute_energy(k, f),
                    Route::FetchOutput => {}
                }
            }
            let dev = &instance.devices[k];
            if cache <= dev.cache_bits && energy <= dev.avg_energy {
                break;
            }
            let costly: Vec<usize> = (0..instance.num_tasks())
                .filter(|&f| routes[k][f] != Route::FetchOutput)
                .collect();
            let f = costly[rng.gen_range(0..costly.len())];
            routes[k][f] = Route::FetchOutput;
        }
    }
    ServicePolicy::from_routes(&routes)
}

/// Random valid instance with the given shape and output/input ratio.
/// Budgets land anywhere from empty to generous.
pub fn random_instance(num_devices: usize, num_tasks: usize, alpha: f64, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tasks: Vec<TaskSpec> = (0..num_tasks)
        .map(|_| {
            let input = rng.gen_range(1e6..3e6);
            TaskSpec { input_bits: input, compute_load: 10.0, output_bits: alpha * input }
        })
        .collect();
    let catalog = TaskCatalog::new(tasks);
    let energy_coeff = 1e-27;
    let deadline_floor = catalog
        .tasks
        .iter()
        .map(|t| t.input_bits * t.compute_load / 1e10)
        .fold(0.0, f64::max);
    let deadline = deadline_floor * rng.gen_range(1.5..4.0);
    let total_output: f64 = catalog.tasks.iter().map(|t| t.output_bits).sum();
    let devices = (0..num_devices)
        .map(|_| {
            let cpu_freq = rng.gen_range(1e10..3e10);
            let mut demand: Vec<f64> = (0..num_tasks).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = demand.iter().sum();
            demand.iter_mut().for_each(|p| *p /= total);
            let full_energy: f64 = (0..num_tasks)
                .map(|f| {
                    demand[f]
                        * energy_coeff
                        * cpu_freq
                        * cpu_freq
                        * catalog.tasks[f].input_bits
                        * catalog.tasks[f].compute_load
                })
                .sum();
            DeviceSpec {
                cache_bits: rng.gen_range(0.0..total_output),
                avg_energy: rng.gen_range(0.0..1.2 * full_energy),
                cpu_freq,
                inv_spectral_eff: rng.gen_range(0.1..0.5),
                demand,
            }
        })
        .collect();
    let inst = Instance { catalog, devices, params: SystemParams { deadline, energy_coeff } };
    debug_assert!(inst.validate().is_ok());
    inst
}

/// Instance shaped like the cache-sweep experiment: zipf(1) demand shared by
/// all devices, inverse spectral efficiency 0.1·(k+1), common CPU frequency,
/// cache set to `cache_fraction` of the total input bits.
pub fn fig2_like_instance(
    num_devices: usize,
    num_tasks: usize,
    cache_fraction: f64,
    deadline: f64,
    seed: u64,
) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tasks: Vec<TaskSpec> = (0..num_tasks)
        .map(|_| {
            let input = rng.gen_range(10e6..15e6);
            TaskSpec { input_bits: input, compute_load: 10.0, output_bits: 3.0 * input }
        })
        .collect();
    let catalog = TaskCatalog::new(tasks);
    let total_input: f64 = catalog.tasks.iter().map(|t| t.input_bits).sum();
    let demand = zipf_popularity(num_tasks, 1.0);
    let devices = (0..num_devices)
        .map(|k| DeviceSpec {
            cache_bits: cache_fraction * total_input,
            avg_energy: 1.7e3,
            cpu_freq: 1.1e11,
            inv_spectral_eff: 0.1 * (k + 1) as f64,
            demand: demand.clone(),
        })
        .collect();
    Instance {
        catalog,
        devices,
        params: SystemParams { deadline, energy_coeff: 1e-27 },
    }
}

/// Tiny solver benchmark fixture: random instance with budgets drawn as
/// moderate fractions of the totals, plus its sample batch.
pub fn solver_fixture(
    num_devices: usize,
    num_tasks: usize,
    alpha: f64,
    n_samples: usize,
    seed: u64,
) -> (Instance, Vec<crate::bandwidth::RequestSample>) {
    let mut inst = random_instance(num_devices, num_tasks, alpha, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let total_output: f64 = inst.catalog.tasks.iter().map(|t| t.output_bits).sum();
    for k in 0..inst.num_devices() {
        let full_energy: f64 = (0..inst.num_tasks())
            .map(|f| inst.compute_energy(k, f))
            .sum();
        inst.devices[k].cache_bits = rng.gen_range(0.2..0.8) * total_output;
        inst.devices[k].avg_energy = rng.gen_range(0.2..0.8) * full_energy;
    }
    let samples = crate::sampling::draw_samples(&inst, n_samples, seed);
    (inst, samples)
}
