//! Downlink bandwidth accounting: per-route rates, per-request multicast
//! bandwidth, the sampled and exact averages, and the unicast comparison.
//!
//! All operations are pure functions of immutable inputs.

use crate::error::{Error, Result};
use crate::instance::{Instance, Rates};
use crate::policy::{Route, ServicePolicy};

/// One system request state: the task index requested by each device.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RequestSample {
    pub tasks: Vec<usize>,
}

impl RequestSample {
    pub fn new(tasks: Vec<usize>) -> Self {
        Self { tasks }
    }
}

/// Per-task input/output bandwidth shares of one request state, in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthBreakdown {
    /// Bandwidth of the input multicast stream per task.
    pub input_hz: Vec<f64>,
    /// Bandwidth of the output multicast stream per task.
    pub output_hz: Vec<f64>,
    pub total_hz: f64,
}

impl BandwidthBreakdown {
    /// CSV rows `sample_id,task_id,b_input_hz,b_output_hz`, skipping
    /// all-zero tasks.
    pub fn csv_rows(&self, sample_id: usize) -> String {
        let mut out = String::new();
        for f in 0..self.input_hz.len() {
            if self.input_hz[f] != 0.0 || self.output_hz[f] != 0.0 {
                out.push_str(&format!(
                    "{sample_id},{f},{},{}\n",
                    self.input_hz[f], self.output_hz[f]
                ));
            }
        }
        out
    }
}

/// Minimum transmission rate (bits/s) for serving task `f` at device `k` over
/// `route` within the deadline. Cached routes need no transmission.
pub fn route_rate(instance: &Instance, k: usize, f: usize, route: Route) -> Result<f64> {
    let t = &instance.catalog.tasks[f];
    let tau = instance.params.deadline;
    match route {
        Route::CachedOutput | Route::CachedInputCompute => Ok(0.0),
        Route::FetchInputCompute => {
            let slack = tau - t.input_bits * t.compute_load / instance.devices[k].cpu_freq;
            if slack <= 0.0 {
                Err(Error::DeadlineCollapse { device: k, task: f })
            } else {
                Ok(t.input_bits / slack)
            }
        }
        Route::FetchOutput => Ok(t.output_bits / tau),
    }
}

/// Max of `weight * value` over requesters of `f`, with the empty max
/// defined as 0 (no requester, no stream). Zero weights are skipped so that
/// unusable routes with infinite rate never poison the result.
#[inline]
fn masked_max(
    sample: &RequestSample,
    f: usize,
    mut weight: impl FnMut(usize) -> f64,
    mut value: impl FnMut(usize) -> f64,
) -> f64 {
    let mut best = 0.0;
    for (k, &a) in sample.tasks.iter().enumerate() {
        if a == f {
            let w = weight(k);
            if w > 0.0 {
                let v = w * value(k);
                if v > best {
                    best = v;
                }
            }
        }
    }
    best
}

/// Multicast bandwidth of one request state under `policy`.
///
/// The input stream of a task costs the worst requester channel times the
/// largest requester rate demand; the two maxima may be attained by different
/// devices. The output stream costs the output rate times the worst requester
/// channel. Relaxed policies weight the indicators by their route weights.
pub fn sample_bandwidth(
    instance: &Instance,
    policy: &ServicePolicy,
    sample: &RequestSample,
) -> BandwidthBreakdown {
    let rates = Rates::new(instance);
    sample_bandwidth_with(instance, &rates, policy, sample)
}

/// As [`sample_bandwidth`] but reusing a precomputed rate table.
pub fn sample_bandwidth_with(
    instance: &Instance,
    rates: &Rates,
    policy: &ServicePolicy,
    sample: &RequestSample,
) -> BandwidthBreakdown {
    let fn_ = instance.num_tasks();
    debug_assert_eq!(sample.tasks.len(), instance.num_devices());
    let mut input_hz = vec![0.0; fn_];
    let mut output_hz = vec![0.0; fn_];
    let mut total = 0.0;
    for f in 0..fn_ {
        let worst_channel = masked_max(
            sample,
            f,
            |k| policy.weight(k, f, Route::FetchInputCompute),
            |k| instance.devices[k].inv_spectral_eff,
        );
        let top_rate = masked_max(
            sample,
            f,
            |k| policy.weight(k, f, Route::FetchInputCompute),
            |k| rates.fetch_compute(k, f),
        );
        input_hz[f] = worst_channel * top_rate;
        output_hz[f] = rates.fetch_output(f)
            * masked_max(
                sample,
                f,
                |k| policy.weight(k, f, Route::FetchOutput),
                |k| instance.devices[k].inv_spectral_eff,
            );
        total += input_hz[f] + output_hz[f];
    }
    BandwidthBreakdown { input_hz, output_hz, total_hz: total }
}

/// Sampled average bandwidth over a batch of request states, in Hz.
/// Samples are reduced in index order, so the value is reproducible.
pub fn saa_objective(
    instance: &Instance,
    policy: &ServicePolicy,
    samples: &[RequestSample],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let rates = Rates::new(instance);
    let mut sum = 0.0;
    for s in samples {
        sum += sample_bandwidth_with(instance, &rates, policy, s).total_hz;
    }
    Ok(sum / samples.len() as f64)
}

/// Default cap on the number of request states the exact average enumerates.
pub const ENUMERATION_CAP: u128 = 1_000_000;

/// Exact average bandwidth: the demand-weighted sum over the full request
/// state space. Only usable while `F^K` stays below [`ENUMERATION_CAP`];
/// larger systems must use [`saa_objective`].
pub fn exact_average_bandwidth(instance: &Instance, policy: &ServicePolicy) -> Result<f64> {
    let kn = instance.num_devices();
    let fn_ = instance.num_tasks();
    let states = (fn_ as u128).checked_pow(kn as u32).unwrap_or(u128::MAX);
    if states > ENUMERATION_CAP {
        return Err(Error::EnumerationCapExceeded { states, cap: ENUMERATION_CAP });
    }
    let rates = Rates::new(instance);
    let mut sum = 0.0;
    let mut state = RequestSample::new(vec![0; kn]);
    loop {
        let mut weight = 1.0;
        for k in 0..kn {
            weight *= instance.demand(k, state.tasks[k]);
        }
        if weight > 0.0 {
            sum += weight * sample_bandwidth_with(instance, &rates, policy, &state).total_hz;
        }
        // Odometer over the request space, last device fastest.
        let mut pos = kn;
        loop {
            if pos == 0 {
                return Ok(sum);
            }
            pos -= 1;
            state.tasks[pos] += 1;
            if state.tasks[pos] < fn_ {
                break;
            }
            state.tasks[pos] = 0;
        }
    }
}

/// Average bandwidth if every device were served over its own unicast link.
pub fn unicast_bandwidth(instance: &Instance, policy: &ServicePolicy) -> f64 {
    let rates = Rates::new(instance);
    let mut total = 0.0;
    for k in 0..instance.num_devices() {
        let s = instance.devices[k].inv_spectral_eff;
        for f in 0..instance.num_tasks() {
            let row = policy.row(k, f);
            let mut per_request = 0.0;
            let w3 = row[Route::FetchInputCompute.index()];
            if w3 > 0.0 {
                per_request += rates.fetch_compute(k, f) * w3;
            }
            per_request += rates.fetch_output(f) * row[Route::FetchOutput.index()];
            total += instance.demand(k, f) * per_request * s;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyMode;
    use crate::testutil::{breakdown_fixture, small_instance, tiny_rng_policy};
    use proptest::prelude::*;

    #[test]
    fn fetch_compute_rate_hand_value() {
        let inst = crate::testutil::single_device_instance(
            vec![(1e7, 10.0, 3e7)],
            0.02,
            1e-27,
            1.1e11,
            0.1,
        );
        let r = route_rate(&inst, 0, 0, Route::FetchInputCompute).unwrap();
        assert!((r - 5.238095238095238e8).abs() / r < 1e-12);
        assert_eq!(route_rate(&inst, 0, 0, Route::CachedOutput).unwrap(), 0.0);
        assert_eq!(route_rate(&inst, 0, 0, Route::CachedInputCompute).unwrap(), 0.0);
    }

    #[test]
    fn fetch_output_rate_hand_value() {
        let inst = crate::testutil::single_device_instance(
            vec![(1e6, 1.0, 1e6)],
            0.1,
            1e-27,
            1e11,
            0.1,
        );
        assert!((route_rate(&inst, 0, 0, Route::FetchOutput).unwrap() - 1e7).abs() < 1e-6);
    }

    #[test]
    fn collapsed_deadline_is_an_error() {
        let mut inst = small_instance();
        let t = inst.catalog.tasks[0];
        inst.devices[0].cpu_freq = t.input_bits * t.compute_load / inst.params.deadline;
        assert!(matches!(
            route_rate(&inst, 0, 0, Route::FetchInputCompute),
            Err(Error::DeadlineCollapse { device: 0, task: 0 })
        ));
    }

    #[test]
    fn output_stream_uses_worst_requester_channel() {
        let inst = breakdown_fixture();
        let p = ServicePolicy::mec(2, 2);
        let b = sample_bandwidth(&inst, &p, &RequestSample::new(vec![0, 0]));
        assert!((b.output_hz[0] - 2e6).abs() < 1e-9);
        assert_eq!(b.input_hz[0], 0.0);
        assert!((b.total_hz - 2e6).abs() < 1e-9);
    }

    #[test]
    fn cached_everything_costs_nothing() {
        let inst = small_instance();
        let p = ServicePolicy::all_route(inst.num_devices(), inst.num_tasks(), Route::CachedOutput);
        let b = sample_bandwidth(&inst, &p, &RequestSample::new(vec![0, 1]));
        assert_eq!(b.total_hz, 0.0);
    }

    #[test]
    fn unrequested_task_has_empty_streams() {
        let inst = breakdown_fixture();
        let p = ServicePolicy::mec(2, 2);
        let b = sample_bandwidth(&inst, &p, &RequestSample::new(vec![0, 0]));
        assert_eq!(b.input_hz[1], 0.0);
        assert_eq!(b.output_hz[1], 0.0);
    }

    #[test]
    fn saa_hand_average() {
        let inst = breakdown_fixture();
        let p = ServicePolicy::mec(2, 2);
        let samples = vec![RequestSample::new(vec![0, 0]), RequestSample::new(vec![1, 1])];
        // 2e6 and (2e6/0.1)*0.2 = 4e6 average to 3e6.
        let v = saa_objective(&inst, &p, &samples).unwrap();
        assert!((v - 3e6).abs() < 1e-6);
        // Single sample equals the per-sample total.
        let one = saa_objective(&inst, &p, &samples[..1]).unwrap();
        assert!((one - 2e6).abs() < 1e-9);
        // Duplicating the batch leaves the average unchanged.
        let mut doubled = samples.clone();
        doubled.extend(samples.clone());
        assert_eq!(saa_objective(&inst, &p, &doubled).unwrap(), v);
    }

    #[test]
    fn empty_sample_set_is_an_error() {
        let inst = breakdown_fixture();
        let p = ServicePolicy::mec(2, 2);
        assert!(matches!(saa_objective(&inst, &p, &[]), Err(Error::EmptySampleSet)));
    }

    #[test]
    fn exact_average_brute_force() {
        let inst = breakdown_fixture();
        let p = ServicePolicy::mec(2, 2);
        // Four equiprobable states: (0,0)->2e6, (1,1)->4e6, (0,1)->5e6, (1,0)->4e6.
        let v = exact_average_bandwidth(&inst, &p).unwrap();
        assert!((v - 3.75e6).abs() < 1e-6);
    }

    #[test]
    fn point_mass_demand_matches_single_sample() {
        let mut inst = breakdown_fixture();
        for d in &mut inst.devices {
            d.demand = vec![0.0, 1.0];
        }
        let p = ServicePolicy::mec(2, 2);
        let exact = exact_average_bandwidth(&inst, &p).unwrap();
        let one = sample_bandwidth(&inst, &p, &RequestSample::new(vec![1, 1])).total_hz;
        assert_eq!(exact, one);
    }

    #[test]
    fn unicast_hand_value() {
        let inst = breakdown_fixture();
        let p = ServicePolicy::mec(2, 2);
        // 0.5*1e7*0.1*2 + 0.5*(1e7+2e7)*0.2 ... with O=(1e6,2e6):
        // dev0: 0.5*(1e7+2e7)*0.1 = 1.5e6; dev1: 0.5*(1e7+2e7)*0.2 = 3e6.
        let v = unicast_bandwidth(&inst, &p);
        assert!((v - 4.5e6).abs() < 1e-6);
        let all_cached =
            ServicePolicy::all_route(2, 2, Route::CachedOutput);
        assert_eq!(unicast_bandwidth(&inst, &all_cached), 0.0);
    }

    #[test]
    fn single_device_unicast_equals_exact() {
        let inst = crate::testutil::single_device_instance(
            vec![(1e6, 1.0, 1e6), (2e6, 1.0, 2e6)],
            0.1,
            1e-27,
            1e11,
            0.25,
        );
        let p = ServicePolicy::mec(1, 2);
        let exact = exact_average_bandwidth(&inst, &p).unwrap();
        let uni = unicast_bandwidth(&inst, &p);
        assert!((exact - uni).abs() / exact < 1e-12);
    }

    proptest! {
        // Caching an output never increases the bandwidth of any request state.
        #[test]
        fn output_caching_never_hurts(seed in 0u64..200, k in 0usize..2, f in 0usize..2) {
            let inst = small_instance();
            let p = tiny_rng_policy(2, 2, seed);
            let mut cached = p.clone();
            if cached.route_of(k, f) == Some(Route::FetchOutput) {
                cached.set_route(k, f, Route::CachedOutput);
                for a in 0..2usize {
                    for b in 0..2usize {
                        let s = RequestSample::new(vec![a, b]);
                        prop_assert!(
                            sample_bandwidth(&inst, &cached, &s).total_hz
                                <= sample_bandwidth(&inst, &p, &s).total_hz + 1e-9
                        );
                    }
                }
            }
        }

        // Shared streams only merge: multicast never needs more than unicast.
        #[test]
        fn multicast_at_most_unicast(seed in 0u64..300) {
            let inst = small_instance();
            let p = tiny_rng_policy(inst.num_devices(), inst.num_tasks(), seed);
            let exact = exact_average_bandwidth(&inst, &p).unwrap();
            let uni = unicast_bandwidth(&inst, &p);
            prop_assert!(exact <= uni * (1.0 + 1e-12) + 1e-12);
        }

        // Breakdown totals match the sum of their parts.
        #[test]
        fn breakdown_totals_consistent(seed in 0u64..200) {
            let inst = small_instance();
            let mut p = tiny_rng_policy(2, 2, seed);
            p.mode = PolicyMode::Binary;
            let b = sample_bandwidth(&inst, &p, &RequestSample::new(vec![0, 1]));
            let total: f64 = b.input_hz.iter().chain(b.output_hz.iter()).sum();
            prop_assert!((total - b.total_hz).abs() <= 1e-12 * total.max(1.0));
            prop_assert!(b.input_hz.iter().chain(b.output_hz.iter()).all(|&v| v >= 0.0));
        }
    }
}
