//! Consensus splitting for one convex majorizer: per-sample local copies of
//! the route tensor tied to a global copy by multipliers.
//!
//! Each sweep runs three steps. Step one solves, for every (sample, task)
//! block, the small convex problem in the block's auxiliaries and local route
//! weights; the solutions are closed forms built from the unconstrained
//! minimizers plus corrections supported on the devices attaining the stream
//! maxima. Step two projects the dual-averaged locals onto each device's
//! budget polytope. Step three is the standard multiplier ascent.
//!
//! Everything runs on internally rescaled rates (largest channel weight and
//! largest rate become one) so the quadratic coupling is well conditioned;
//! the caller owns the conversion back to hertz.

use rayon::prelude::*;

use crate::bandwidth::RequestSample;
use crate::error::{Error, Result};
use crate::instance::{Instance, Rates};
use crate::policy::Route;

/// Immutable solve tables: normalized rates, requester lists, budget weights.
#[derive(Debug, Clone)]
pub struct SolverContext {
    pub num_devices: usize,
    pub num_tasks: usize,
    pub num_samples: usize,
    /// Hz per internal bandwidth unit.
    pub scale_hz: f64,
    /// Normalized inverse spectral efficiency per device.
    pub chan: Vec<f64>,
    /// Normalized fetch-and-compute rate, (device, task); infinite entries
    /// mark unusable routes.
    pub rate3: Vec<f64>,
    /// Normalized fetch-output rate per task.
    pub rate4: Vec<f64>,
    /// Whether fetch-and-compute is usable, (device, task).
    pub route3_ok: Vec<bool>,
    /// Devices requesting task f in sample n, flattened `n * F + f`.
    pub requesters: Vec<Vec<usize>>,
    /// Cache bits consumed per unit weight, (task, route).
    pub cache_w: Vec<f64>,
    /// Average energy consumed per unit weight, (device, task, route).
    pub energy_w: Vec<f64>,
    pub cache_limit: Vec<f64>,
    pub energy_limit: Vec<f64>,
}

impl SolverContext {
    pub fn new(instance: &Instance, samples: &[RequestSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        let kn = instance.num_devices();
        let fn_ = instance.num_tasks();
        let rates = Rates::new(instance);
        let s_max = instance
            .devices
            .iter()
            .map(|d| d.inv_spectral_eff)
            .fold(0.0f64, f64::max);
        let mut r_max = rates.fetch_output.iter().fold(0.0f64, |m, &v| m.max(v));
        for &r in &rates.fetch_compute {
            if r.is_finite() {
                r_max = r_max.max(r);
            }
        }
        let r_max = r_max.max(1e-300);
        let chan = instance
            .devices
            .iter()
            .map(|d| d.inv_spectral_eff / s_max)
            .collect();
        let rate3: Vec<f64> = rates.fetch_compute.iter().map(|&r| r / r_max).collect();
        let route3_ok = rate3.iter().map(|r| r.is_finite()).collect();
        let rate4 = rates.fetch_output.iter().map(|&r| r / r_max).collect();
        let mut requesters = vec![Vec::new(); samples.len() * fn_];
        for (n, sample) in samples.iter().enumerate() {
            debug_assert_eq!(sample.tasks.len(), kn);
            for (k, &f) in sample.tasks.iter().enumerate() {
                requesters[n * fn_ + f].push(k);
            }
        }
        let mut cache_w = vec![0.0; fn_ * 4];
        for (f, t) in instance.catalog.tasks.iter().enumerate() {
            cache_w[f * 4 + Route::CachedOutput.index()] = t.output_bits;
            cache_w[f * 4 + Route::CachedInputCompute.index()] = t.input_bits;
        }
        let mut energy_w = vec![0.0; kn * fn_ * 4];
        for k in 0..kn {
            for f in 0..fn_ {
                let e = rates.energy(k, f);
                energy_w[(k * fn_ + f) * 4 + Route::CachedInputCompute.index()] = e;
                energy_w[(k * fn_ + f) * 4 + Route::FetchInputCompute.index()] = e;
            }
        }
        Ok(Self {
            num_devices: kn,
            num_tasks: fn_,
            num_samples: samples.len(),
            scale_hz: s_max * r_max,
            chan,
            rate3,
            rate4,
            route3_ok,
            requesters,
            cache_w,
            energy_w,
            cache_limit: instance.devices.iter().map(|d| d.cache_bits).collect(),
            energy_limit: instance.devices.iter().map(|d| d.avg_energy).collect(),
        })
    }

    #[inline]
    pub fn global_idx(&self, k: usize, f: usize, j: usize) -> usize {
        (k * self.num_tasks + f) * 4 + j
    }

    /// Length of one (sample, task) block in the local tensors.
    #[inline]
    pub fn block_len(&self) -> usize {
        self.num_devices * 4
    }

    /// Auxiliary maxima of a global route tensor, normalized units.
    pub fn max_definitions(&self, global: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let cells = self.num_samples * self.num_tasks;
        let mut a_in = vec![0.0f64; cells];
        let mut b_in = vec![0.0f64; cells];
        let mut a_out = vec![0.0f64; cells];
        for (cell, reqs) in self.requesters.iter().enumerate() {
            let f = cell % self.num_tasks;
            for &k in reqs {
                let w3 = global[self.global_idx(k, f, Route::FetchInputCompute.index())];
                if w3 > 0.0 && self.route3_ok[k * self.num_tasks + f] {
                    a_in[cell] = a_in[cell].max(self.chan[k] * w3);
                    b_in[cell] = b_in[cell].max(self.rate3[k * self.num_tasks + f] * w3);
                }
                let w4 = global[self.global_idx(k, f, Route::FetchOutput.index())];
                if w4 > 0.0 {
                    a_out[cell] = a_out[cell].max(self.chan[k] * w4);
                }
            }
        }
        (a_in, b_in, a_out)
    }
}

/// Mutable solve state: local copies laid out `(sample, task, device, route)`
/// contiguously per (sample, task) block, multipliers alongside, the global
/// tensor `(device, task, route)`, block auxiliaries, and the anchor of the
/// surrounding majorize-minimize iteration.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub locals: Vec<f64>,
    pub duals: Vec<f64>,
    pub global: Vec<f64>,
    pub a_in: Vec<f64>,
    pub b_in: Vec<f64>,
    pub a_out: Vec<f64>,
    pub gamma: f64,
    /// Binarization penalty weight, internal units.
    pub rho: f64,
    pub anchor_a: Vec<f64>,
    pub anchor_b: Vec<f64>,
    pub anchor_x: Vec<f64>,
    pub outer_iter: usize,
    pub inner_iter: usize,
    /// Blocks solved through the least-violation fallback so far.
    pub kkt_fallbacks: usize,
}

impl AdmmState {
    /// Fresh state anchored at the fetch-everything tensor, which is feasible
    /// for every instance.
    pub fn init(ctx: &SolverContext, gamma: f64, rho: f64) -> Self {
        let mut global = vec![0.0; ctx.num_devices * ctx.num_tasks * 4];
        for k in 0..ctx.num_devices {
            for f in 0..ctx.num_tasks {
                global[ctx.global_idx(k, f, Route::FetchOutput.index())] = 1.0;
            }
        }
        let (anchor_a, anchor_b, _) = ctx.max_definitions(&global);
        let cells = ctx.num_samples * ctx.num_tasks;
        let mut state = Self {
            locals: vec![0.0; ctx.num_samples * ctx.num_tasks * ctx.block_len()],
            duals: vec![0.0; ctx.num_samples * ctx.num_tasks * ctx.block_len()],
            global,
            a_in: vec![0.0; cells],
            b_in: vec![0.0; cells],
            a_out: vec![0.0; cells],
            gamma,
            rho,
            anchor_a,
            anchor_b,
            anchor_x: Vec::new(),
            outer_iter: 0,
            inner_iter: 0,
            kkt_fallbacks: 0,
        };
        state.anchor_x = state.global.clone();
        state.reset_inner(ctx);
        state
    }

    /// Broadcasts the global tensor into every local copy and clears the
    /// multipliers; run before each inner solve.
    pub fn reset_inner(&mut self, ctx: &SolverContext) {
        let bl = ctx.block_len();
        for n in 0..ctx.num_samples {
            for f in 0..ctx.num_tasks {
                let off = (n * ctx.num_tasks + f) * bl;
                for k in 0..ctx.num_devices {
                    for j in 0..4 {
                        self.locals[off + k * 4 + j] = self.global[ctx.global_idx(k, f, j)];
                    }
                }
            }
        }
        self.duals.iter_mut().for_each(|d| *d = 0.0);
        self.inner_iter = 0;
    }

    /// Largest gap between any local copy and the global tensor.
    pub fn consensus_residual(&self, ctx: &SolverContext) -> f64 {
        let bl = ctx.block_len();
        let mut worst = 0.0f64;
        for n in 0..ctx.num_samples {
            for f in 0..ctx.num_tasks {
                let off = (n * ctx.num_tasks + f) * bl;
                for k in 0..ctx.num_devices {
                    for j in 0..4 {
                        let gap =
                            (self.locals[off + k * 4 + j] - self.global[ctx.global_idx(k, f, j)]).abs();
                        worst = worst.max(gap);
                    }
                }
            }
        }
        worst
    }

    /// Every entry's distance from {0, 1}, worst case over the global tensor.
    pub fn binary_gap(&self) -> f64 {
        self.global
            .iter()
            .map(|&v| v.min(1.0 - v).abs())
            .fold(0.0, f64::max)
    }
}

/// Route-dependent perturbation of the penalty anchor. The binarization
/// penalty's tangent is flat at one half, so exactly tied fractional rows
/// (zero-rate routes split evenly) are stationary for every penalty weight;
/// a vanishing bias ordered by route index breaks such ties
/// deterministically, favoring cached routes, which the bandwidth terms
/// themselves cannot reward directly.
pub(crate) const PENALTY_TIEBREAK: f64 = 1e-6;

#[inline]
pub(crate) fn penalty_coef(anchor: f64, route: usize) -> f64 {
    2.0 * anchor - 1.0 + PENALTY_TIEBREAK * (4.0 - route as f64)
}

/// One constrained device in the fetch-and-compute part of a block.
#[derive(Debug, Clone, Copy)]
struct InEntry {
    chan: f64,
    rate: f64,
    base: f64,
}

/// Exact minimizer of the fetch-and-compute part of one block:
/// `(A+B)^2/4 - (dt/2)(A-B) + sum_k (gamma/2)(x_k - base_k)^2`
/// subject to `A >= chan_k x_k`, `B >= rate_k x_k` and, when some device
/// contributes a zero right-hand side, `A, B >= 0`.
///
/// For fixed `A` the inner problem in `B` is convex piecewise quadratic with
/// breakpoints at `rate_k * min(base_k, A/chan_k)`; its derivative is solved
/// exactly by a breakpoint walk. The outer envelope in `A` is convex with a
/// nondecreasing derivative, bracketed and bisected to machine precision.
/// Every device attaining a stream maximum shows up as a clamp
/// `x_k = min(base_k, A/chan_k, B/rate_k)`, which is the correction form of
/// the stationarity conditions and is immune to ties in the maxima.
fn solve_in_block(
    entries: &[InEntry],
    dt: f64,
    gamma: f64,
    zero_bound: bool,
) -> (f64, f64, Vec<f64>) {
    if entries.is_empty() {
        // No constrained weight: the auxiliaries decouple and settle on the
        // tangent slope (an empty entry list implies the zero bounds).
        return (dt.max(0.0), (-dt).max(0.0), Vec::new());
    }

    // Inner exact solve over B at fixed A: derivative
    // (A + dt)/2 + B/2 + sum over clamped devices of
    // gamma (B - rate*base) / rate^2, clamped while B < rate*min(base, A/chan).
    // When the A-side cap is tighter than the target, the clamp term does not
    // vanish at its activation threshold, so the derivative jumps upward
    // there and the minimum may sit exactly on a threshold.
    let inner = |a: f64| -> f64 {
        let mut cuts: Vec<(f64, f64, f64)> = entries
            .iter()
            .map(|e| {
                let ceiling = e.base.min(a / e.chan);
                (e.rate * ceiling, gamma / (e.rate * e.rate), e.rate * e.base)
            })
            .collect();
        cuts.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
        let c0 = (a + dt) / 2.0;
        let c1 = 0.5;
        // Segment above every breakpoint.
        let mut b = -c0 / c1;
        if b < cuts[0].0 {
            let mut s1 = c1;
            let mut s0 = -c0;
            for i in 0..cuts.len() {
                let (upper, slope, anchor) = cuts[i];
                s1 += slope;
                s0 += slope * anchor;
                let candidate = s0 / s1;
                if candidate > upper {
                    // Derivative negative below the threshold, nonnegative
                    // above: the jump point is the minimizer.
                    b = upper;
                    break;
                }
                let lower = if i + 1 < cuts.len() { cuts[i + 1].0 } else { f64::NEG_INFINITY };
                if candidate >= lower {
                    b = candidate;
                    break;
                }
                b = lower;
            }
        }
        if zero_bound && b < 0.0 {
            b = 0.0;
        }
        b
    };

    // Envelope value at the inner optimum; convex in A.
    let envelope = |a: f64| -> f64 {
        let b = inner(a);
        let mut v = (a + b).powi(2) / 4.0 - dt / 2.0 * (a - b);
        for e in entries {
            let x = e.base.min(a / e.chan).min(b / e.rate);
            v += gamma / 2.0 * (x - e.base).powi(2);
        }
        v
    };

    // Derivative-free outer search: the envelope has kinks wherever the
    // binding cap of a device switches sides, so bracket and golden-section.
    let golden = |lo: f64, hi: f64| -> f64 {
        let ratio = (3.0 - 5.0f64.sqrt()) / 2.0;
        let mut lo = lo;
        let mut hi = hi;
        let mut a1 = lo + ratio * (hi - lo);
        let mut a2 = hi - ratio * (hi - lo);
        let mut f1 = envelope(a1);
        let mut f2 = envelope(a2);
        for _ in 0..80 {
            if f1 <= f2 {
                hi = a2;
                a2 = a1;
                f2 = f1;
                a1 = lo + ratio * (hi - lo);
                f1 = envelope(a1);
            } else {
                lo = a1;
                a1 = a2;
                f1 = f2;
                a2 = hi - ratio * (hi - lo);
                f2 = envelope(a2);
            }
        }
        0.5 * (lo + hi)
    };

    let span = 1.0
        + dt.abs()
        + entries
            .iter()
            .map(|e| (e.chan * e.base).abs())
            .fold(0.0f64, f64::max);
    let mut lo = if zero_bound { 0.0 } else { -span };
    let mut hi = span;
    let mut a = golden(lo, hi);
    for _ in 0..40 {
        let width = hi - lo;
        if !zero_bound && a <= lo + 1e-9 * width {
            lo -= 3.0 * width;
        } else if a >= hi - 1e-9 * width {
            hi += 3.0 * width;
        } else {
            break;
        }
        a = golden(lo, hi);
    }
    let b = inner(a);
    let x = entries
        .iter()
        .map(|e| e.base.min(a / e.chan).min(b / e.rate))
        .collect();
    (a, b, x)
}

/// Exact minimizer of the fetch-output part of one block:
/// `r4 * aO + sum_k (gamma/2)(x_k - base_k)^2` subject to `aO >= c_k x_k`
/// (and `aO >= 0` when a zero right-hand side exists). One-dimensional
/// convex piecewise-quadratic problem solved by a breakpoint walk; ties in
/// the maximum need no special casing.
fn solve_out_block(
    r4: f64,
    gamma: f64,
    zero_bound: bool,
    entries: &[(f64, f64)], // (chan, base) per requester
) -> f64 {
    if entries.is_empty() {
        return 0.0;
    }
    let mut breaks: Vec<(f64, f64)> = entries
        .iter()
        .map(|&(c, base)| (c * base, c))
        .collect();
    breaks.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
    let mut s1 = 0.0; // sum gamma / c^2 over active devices
    let mut s0 = 0.0; // sum gamma * break / c^2 over active devices
    let mut a = breaks[0].0;
    for i in 0..breaks.len() {
        let (bp, c) = breaks[i];
        s1 += gamma / (c * c);
        s0 += gamma * bp / (c * c);
        let candidate = (s0 - r4) / s1;
        let lower = if i + 1 < breaks.len() { breaks[i + 1].0 } else { f64::NEG_INFINITY };
        if candidate >= lower {
            a = candidate;
            break;
        }
        a = lower;
    }
    if zero_bound && a < 0.0 {
        a = 0.0;
    }
    a
}

/// Step one: per-(sample, task) exact block solves for the auxiliaries and
/// local route weights given the current global tensor and multipliers.
/// Cached routes have no stream constraints, so their locals are the
/// unconstrained targets. Blocks are independent and run in parallel; every
/// write lands in the block's own slice, so the result is identical at any
/// thread count.
pub fn admm_update_locals(ctx: &SolverContext, state: &mut AdmmState) -> Result<()> {
    let bl = ctx.block_len();
    let fn_ = ctx.num_tasks;
    let gamma = state.gamma;
    let rho = state.rho;
    let global = &state.global;
    let anchor_a = &state.anchor_a;
    let anchor_b = &state.anchor_b;
    let anchor_x = &state.anchor_x;
    let duals = &state.duals;

    let fallbacks: usize = state
        .locals
        .par_chunks_mut(bl)
        .zip(state.a_in.par_iter_mut())
        .zip(state.b_in.par_iter_mut())
        .zip(state.a_out.par_iter_mut())
        .enumerate()
        .map(|(cell, (((block, a_in), b_in), a_out))| -> Result<usize> {
            let n = cell / fn_;
            let f = cell % fn_;
            let dual_block = &duals[cell * bl..(cell + 1) * bl];
            let base = |k: usize, j: usize| -> f64 {
                let gi = (k * fn_ + f) * 4 + j;
                global[gi] + (rho * penalty_coef(anchor_x[gi], j) - dual_block[k * 4 + j]) / gamma
            };
            // Cached routes: unconstrained targets.
            for k in 0..ctx.num_devices {
                block[k * 4 + Route::CachedOutput.index()] =
                    base(k, Route::CachedOutput.index());
                block[k * 4 + Route::CachedInputCompute.index()] =
                    base(k, Route::CachedInputCompute.index());
            }

            let reqs = &ctx.requesters[cell];

            // Fetch-output side.
            let j4 = Route::FetchOutput.index();
            for k in 0..ctx.num_devices {
                block[k * 4 + j4] = base(k, j4);
            }
            let out_entries: Vec<(f64, f64)> =
                reqs.iter().map(|&k| (ctx.chan[k], base(k, j4))).collect();
            let zero_bound_out = reqs.len() < ctx.num_devices;
            let a = solve_out_block(ctx.rate4[f], gamma, zero_bound_out, &out_entries);
            for &k in reqs {
                let cap = a / ctx.chan[k];
                let slot = &mut block[k * 4 + j4];
                if *slot > cap {
                    *slot = cap;
                }
            }
            *a_out = a;

            // Fetch-and-compute side.
            let j3 = Route::FetchInputCompute.index();
            for k in 0..ctx.num_devices {
                block[k * 4 + j3] = if ctx.route3_ok[k * fn_ + f] { base(k, j3) } else { 0.0 };
            }
            let active: Vec<usize> = reqs
                .iter()
                .copied()
                .filter(|&k| ctx.route3_ok[k * fn_ + f])
                .collect();
            let zero_bound_in = active.len() < ctx.num_devices;
            let dt = anchor_a[cell] - anchor_b[cell];
            let in_entries: Vec<InEntry> = active
                .iter()
                .map(|&k| InEntry {
                    chan: ctx.chan[k],
                    rate: ctx.rate3[k * fn_ + f],
                    base: base(k, j3),
                })
                .collect();
            let (a_v, b_v, x3) = solve_in_block(&in_entries, dt, gamma, zero_bound_in);
            if !(a_v.is_finite() && b_v.is_finite()) {
                return Err(Error::KktSearchFailed {
                    sample: n,
                    task: f,
                    residual: f64::INFINITY,
                });
            }
            for (i, &k) in active.iter().enumerate() {
                block[k * 4 + j3] = x3[i];
            }
            *a_in = a_v;
            *b_in = b_v;
            Ok(0usize)
        })
        .try_reduce(|| 0, |x, y| Ok(x + y))?;
    state.kkt_fallbacks += fallbacks;
    Ok(())
}

/// Exact solution of `sum_allowed clamp(v_j - nu, 0, 1) = 1` over a row.
fn project_row(v: &[f64; 4], allowed: &[bool; 4]) -> [f64; 4] {
    let phi = |nu: f64| -> f64 {
        let mut s = 0.0;
        for j in 0..4 {
            if allowed[j] {
                s += (v[j] - nu).clamp(0.0, 1.0);
            }
        }
        s
    };
    let mut breaks: Vec<f64> = Vec::with_capacity(8);
    for j in 0..4 {
        if allowed[j] {
            breaks.push(v[j]);
            breaks.push(v[j] - 1.0);
        }
    }
    breaks.sort_by(|a, b| b.partial_cmp(a).unwrap());
    // Walk down until the row mass reaches one; interpolate in the segment.
    let mut nu = breaks[0];
    let mut prev = breaks[0];
    let mut found = false;
    for &bp in &breaks {
        if phi(bp) >= 1.0 {
            let active = (0..4)
                .filter(|&j| {
                    let mid = if prev > bp { (prev + bp) / 2.0 } else { bp };
                    allowed[j] && v[j] - mid > 0.0 && v[j] - mid < 1.0
                })
                .count();
            nu = if phi(bp) == 1.0 || active == 0 {
                bp
            } else {
                bp + (phi(bp) - 1.0) / active as f64
            };
            found = true;
            break;
        }
        prev = bp;
    }
    if !found {
        // Mass short of one even with every weight saturated; put the row at
        // its lowest feasible point.
        nu = breaks[breaks.len() - 1];
    }
    let mut out = [0.0; 4];
    for j in 0..4 {
        if allowed[j] {
            out[j] = (v[j] - nu).clamp(0.0, 1.0);
        }
    }
    out
}

const MULTIPLIER_ROUNDS: usize = 200;

/// Exact projection onto one device's polytope by alternating projections
/// with correction terms over the rows and the two budget halfspaces.
/// Unconditionally convergent; used when the multiplier alternation stalls.
fn dykstra_device_projection(
    target: &[f64],
    allowed: &[[bool; 4]],
    cache_w: &[f64],
    energy_w: &[f64],
    cache_limit: f64,
    energy_limit: f64,
) -> Vec<f64> {
    let fn_ = allowed.len();
    let dim = fn_ * 4;
    let mut z: Vec<f64> = target.to_vec();
    for (i, v) in z.iter_mut().enumerate() {
        if !allowed[i / 4][i % 4] {
            *v = 0.0;
        }
    }
    let sets = fn_ + 2;
    let mut corrections = vec![vec![0.0; dim]; sets];
    let mut last_change = f64::INFINITY;
    for _cycle in 0..50_000 {
        let before = z.clone();
        for s in 0..sets {
            let mut y: Vec<f64> = z.iter().zip(&corrections[s]).map(|(a, b)| a + b).collect();
            if s < fn_ {
                let f = s;
                let mut v = [0.0; 4];
                v.copy_from_slice(&y[f * 4..f * 4 + 4]);
                let row = project_row(&v, &allowed[f]);
                y[f * 4..f * 4 + 4].copy_from_slice(&row);
            } else {
                let (w, limit) = if s == fn_ {
                    (cache_w, cache_limit)
                } else {
                    (energy_w, energy_limit)
                };
                let lhs: f64 = y.iter().zip(w).map(|(a, b)| a * b).sum();
                if lhs > limit {
                    let nrm: f64 = w.iter().map(|v| v * v).sum();
                    if nrm > 0.0 {
                        let shift = (lhs - limit) / nrm;
                        for (v, &wi) in y.iter_mut().zip(w) {
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
        last_change = z
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if last_change <= 1e-13 {
            break;
        }
    }
    let _ = last_change;
    z
}

/// Step two: per-device Euclidean projection of the dual-averaged locals
/// onto the budget polytope (row sums one, cache and energy halfspaces, unit
/// box). Budget multipliers are found by bisection with complementary
/// slackness, row multipliers exactly; routes priced against an empty budget
/// are pinned to zero.
pub fn admm_update_global_x(ctx: &SolverContext, state: &mut AdmmState) -> Result<()> {
    let bl = ctx.block_len();
    let fn_ = ctx.num_tasks;
    let n_samples = ctx.num_samples;
    let gamma = state.gamma;
    let locals = &state.locals;
    let duals = &state.duals;

    let fallbacks: usize = state
        .global
        .par_chunks_mut(fn_ * 4)
        .enumerate()
        .map(|(k, device_x)| -> Result<usize> {
            // Dual-averaged targets.
            let mut target = vec![0.0; fn_ * 4];
            for n in 0..n_samples {
                for f in 0..fn_ {
                    let off = (n * fn_ + f) * bl + k * 4;
                    for j in 0..4 {
                        target[f * 4 + j] += locals[off + j] + duals[off + j] / gamma;
                    }
                }
            }
            for t in &mut target {
                *t /= n_samples as f64;
            }

            let cache_limit = ctx.cache_limit[k];
            let energy_limit = ctx.energy_limit[k];
            let mut allowed = vec![[true; 4]; fn_];
            for f in 0..fn_ {
                if !ctx.route3_ok[k * fn_ + f] {
                    allowed[f][Route::FetchInputCompute.index()] = false;
                }
                for j in 0..4 {
                    let needs_cache = ctx.cache_w[f * 4 + j] > 0.0;
                    let needs_energy = ctx.energy_w[(k * fn_ + f) * 4 + j] > 0.0;
                    if (cache_limit == 0.0 && needs_cache)
                        || (energy_limit == 0.0 && needs_energy)
                    {
                        allowed[f][j] = false;
                    }
                }
            }

            let eval = |theta_c: f64, theta_e: f64, x: &mut [f64]| -> (f64, f64) {
                let mut cache = 0.0;
                let mut energy = 0.0;
                for f in 0..fn_ {
                    let mut v = [0.0; 4];
                    for j in 0..4 {
                        v[j] = target[f * 4 + j]
                            - theta_c * ctx.cache_w[f * 4 + j]
                            - theta_e * ctx.energy_w[(k * fn_ + f) * 4 + j];
                    }
                    let row = project_row(&v, &allowed[f]);
                    for j in 0..4 {
                        x[f * 4 + j] = row[j];
                        cache += ctx.cache_w[f * 4 + j] * row[j];
                        energy += ctx.energy_w[(k * fn_ + f) * 4 + j] * row[j];
                    }
                }
                (cache, energy)
            };

            let mut x = vec![0.0; fn_ * 4];
            let tol = |limit: f64| 1e-9 * limit.max(1.0);
            let solve_multiplier = |other_fixed: f64,
                                    is_cache: bool,
                                    x: &mut [f64]|
             -> Result<f64> {
                let usage = |theta: f64, x: &mut [f64]| -> f64 {
                    let (c, e) = if is_cache {
                        eval(theta, other_fixed, x)
                    } else {
                        eval(other_fixed, theta, x)
                    };
                    if is_cache {
                        c
                    } else {
                        e
                    }
                };
                let limit = if is_cache { cache_limit } else { energy_limit };
                if usage(0.0, x) <= limit + tol(limit) {
                    return Ok(0.0);
                }
                let mut hi = 1.0;
                let mut grow = 0;
                while usage(hi, x) > limit + tol(limit) {
                    hi *= 4.0;
                    grow += 1;
                    if grow > 300 {
                        return Err(Error::BisectionDiverged { device: k, iterations: grow });
                    }
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if usage(mid, x) > limit {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-15 * hi.max(1.0) {
                        break;
                    }
                }
                // Land on the feasible side.
                usage(hi, x);
                Ok(hi)
            };

            let mut theta_c = 0.0;
            let mut theta_e = 0.0;
            for round in 0..MULTIPLIER_ROUNDS {
                let prev = (theta_c, theta_e);
                theta_c = solve_multiplier(theta_e, true, &mut x)?;
                theta_e = solve_multiplier(theta_c, false, &mut x)?;
                let (cache, energy) = eval(theta_c, theta_e, &mut x);
                let ok = cache <= cache_limit + tol(cache_limit)
                    && energy <= energy_limit + tol(energy_limit);
                let stable = (theta_c - prev.0).abs() <= 1e-12 * theta_c.max(1.0)
                    && (theta_e - prev.1).abs() <= 1e-12 * theta_e.max(1.0);
                if ok && (stable || round > 0 && theta_c == 0.0 && theta_e == 0.0) {
                    break;
                }
                if round + 1 == MULTIPLIER_ROUNDS {
                    // The alternation stalled; hand the device to the
                    // always-convergent projection.
                    let near = cache <= cache_limit + 1e-6 * cache_limit.max(1.0)
                        && energy <= energy_limit + 1e-6 * energy_limit.max(1.0);
                    if !near {
                        let ew: Vec<f64> =
                            (0..fn_ * 4).map(|i| ctx.energy_w[k * fn_ * 4 + i]).collect();
                        x = dykstra_device_projection(
                            &target,
                            &allowed,
                            &ctx.cache_w,
                            &ew,
                            cache_limit,
                            energy_limit,
                        );
                        device_x.copy_from_slice(&x);
                        return Ok(1);
                    }
                }
            }
            device_x.copy_from_slice(&x);
            Ok(0)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    state.kkt_fallbacks += fallbacks;
    Ok(())
}

/// Step three: multiplier ascent on every consensus constraint.
pub fn admm_update_duals(ctx: &SolverContext, state: &mut AdmmState) {
    let bl = ctx.block_len();
    let fn_ = ctx.num_tasks;
    let gamma = state.gamma;
    let global = &state.global;
    state
        .duals
        .par_chunks_mut(bl)
        .zip(state.locals.par_chunks(bl))
        .enumerate()
        .for_each(|(cell, (dual_block, local_block))| {
            let f = cell % fn_;
            for k in 0..ctx.num_devices {
                for j in 0..4 {
                    dual_block[k * 4 + j] +=
                        gamma * (local_block[k * 4 + j] - global[(k * fn_ + f) * 4 + j]);
                }
            }
        });
    state.inner_iter += 1;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::draw_samples;
    use crate::testutil::random_instance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn context(seed: u64) -> (crate::Instance, Vec<RequestSample>, SolverContext) {
        let inst = random_instance(2, 2, 3.0, seed);
        let samples = draw_samples(&inst, 3, seed);
        let ctx = SolverContext::new(&inst, &samples).unwrap();
        (inst, samples, ctx)
    }

    fn randomized_state(ctx: &SolverContext, seed: u64) -> AdmmState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = AdmmState::init(ctx, 1.0, 1e-3);
        for v in st.global.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        for v in st.anchor_x.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        for v in st.anchor_a.iter_mut() {
            *v = rng.gen_range(0.0..0.5);
        }
        for v in st.anchor_b.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        st.reset_inner(ctx);
        for v in st.duals.iter_mut() {
            *v = rng.gen_range(-0.05..0.05);
        }
        st
    }

    #[test]
    fn locals_step_matches_projected_gradient() {
        for seed in 0..2u64 {
            let (_inst, _samples, ctx) = context(2000 + seed);
            let mut st = randomized_state(&ctx, seed);
            admm_update_locals(&ctx, &mut st).unwrap();
            for n in 0..ctx.num_samples {
                for f in 0..ctx.num_tasks {
                    let cell = n * ctx.num_tasks + f;
                    let (a, b, ao, x) =
                        crate::testutil::pg_block_reference(&ctx, &st, n, f, 20_000, 40);
                    assert!(
                        (st.a_in[cell] - a).abs() < 1e-4,
                        "seed {seed} block ({n},{f}): aI {} vs pg {a}",
                        st.a_in[cell]
                    );
                    assert!((st.b_in[cell] - b).abs() < 1e-4);
                    assert!((st.a_out[cell] - ao).abs() < 1e-4);
                    let off = cell * ctx.block_len();
                    for i in 0..ctx.block_len() {
                        assert!(
                            (st.locals[off + i] - x[i]).abs() < 1e-4,
                            "seed {seed} block ({n},{f}) slot {i}: {} vs {}",
                            st.locals[off + i],
                            x[i]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn unrequested_blocks_use_plain_targets() {
        let (_inst, samples, ctx) = context(77);
        let mut st = randomized_state(&ctx, 8);
        admm_update_locals(&ctx, &mut st).unwrap();
        for (n, s) in samples.iter().enumerate() {
            for f in 0..ctx.num_tasks {
                if s.tasks.contains(&f) {
                    continue;
                }
                let cell = n * ctx.num_tasks + f;
                let off = cell * ctx.block_len();
                for k in 0..ctx.num_devices {
                    for j in 0..4 {
                        let gi = (k * ctx.num_tasks + f) * 4 + j;
                        let expected = if j == 2 && !ctx.route3_ok[k * ctx.num_tasks + f] {
                            0.0
                        } else {
                            st.global[gi]
                                + (st.rho * penalty_coef(st.anchor_x[gi], j)
                                    - st.duals[off + k * 4 + j])
                                    / st.gamma
                        };
                        assert!((st.locals[off + k * 4 + j] - expected).abs() < 1e-12);
                    }
                }
                assert_eq!(st.a_out[cell], 0.0);
            }
        }
    }

    #[test]
    fn global_step_matches_alternating_projections() {
        for seed in 0..4u64 {
            let (_inst, _samples, ctx) = context(3000 + seed);
            let mut st = randomized_state(&ctx, 40 + seed);
            admm_update_locals(&ctx, &mut st).unwrap();
            admm_update_global_x(&ctx, &mut st).unwrap();
            let fn_ = ctx.num_tasks;
            for k in 0..ctx.num_devices {
                let reference = crate::testutil::pg_device_reference(&ctx, &st, k, 20_000);
                for i in 0..fn_ * 4 {
                    let got = st.global[(k * fn_) * 4 + i];
                    assert!(
                        (got - reference[i]).abs() < 1e-5,
                        "seed {seed} device {k} slot {i}: {got} vs {}",
                        reference[i]
                    );
                }
            }
        }
    }

    #[test]
    fn duals_fixed_at_consensus() {
        let (_inst, _samples, ctx) = context(11);
        let mut st = AdmmState::init(&ctx, 1.0, 1e-3);
        let before = st.duals.clone();
        admm_update_duals(&ctx, &mut st);
        assert_eq!(st.duals, before);
        assert_eq!(st.consensus_residual(&ctx), 0.0);
    }

    #[test]
    fn residuals_shrink_over_sweeps() {
        let (_inst, _samples, ctx) = context(21);
        let mut st = randomized_state(&ctx, 5);
        let mut last = f64::INFINITY;
        let mut shrankonce = false;
        for _ in 0..50 {
            admm_update_locals(&ctx, &mut st).unwrap();
            admm_update_global_x(&ctx, &mut st).unwrap();
            admm_update_duals(&ctx, &mut st);
            let r = st.consensus_residual(&ctx);
            if r < last {
                shrankonce = true;
            }
            last = r;
        }
        assert!(shrankonce);
        assert!(last < 0.3, "residual stuck at {last}");
        assert_eq!(st.kkt_fallbacks, 0);
    }
}
