//! Difference-of-convex view of the sampled objective.
//!
//! Per (task, sample) the input-stream bandwidth is a product of two maxima
//! of the route weights; writing it as `((a+b)^2 - (a-b)^2)/4` over auxiliary
//! variables tied to those maxima splits it into a convex and a concave
//! square. The output stream stays linear in its auxiliary.

use crate::bandwidth::RequestSample;
use crate::error::{Error, Result};
use crate::instance::{Instance, Rates};
use crate::policy::{Route, ServicePolicy};

/// Relaxed policy plus its auxiliary tensors, indexed `sample * F + task`.
/// `from_policy` fills the auxiliaries with their defining maxima, which is
/// the only assignment that makes [`dc_objective`] reproduce the sampled
/// bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct DcState {
    pub policy: ServicePolicy,
    pub num_samples: usize,
    pub a_in: Vec<f64>,
    pub b_in: Vec<f64>,
    pub a_out: Vec<f64>,
}

impl DcState {
    /// Auxiliaries set to their maxima over the requesters of each sample.
    /// Zero route weights are skipped so unusable fetch-and-compute routes
    /// with infinite rate cannot poison the products.
    pub fn from_policy(
        instance: &Instance,
        samples: &[RequestSample],
        policy: ServicePolicy,
    ) -> Self {
        let rates = Rates::new(instance);
        let fn_ = instance.num_tasks();
        let n = samples.len();
        let mut a_in = vec![0.0f64; n * fn_];
        let mut b_in = vec![0.0f64; n * fn_];
        let mut a_out = vec![0.0f64; n * fn_];
        for (si, sample) in samples.iter().enumerate() {
            for (k, &f) in sample.tasks.iter().enumerate() {
                let idx = si * fn_ + f;
                let s = instance.devices[k].inv_spectral_eff;
                let w3 = policy.weight(k, f, Route::FetchInputCompute);
                if w3 > 0.0 {
                    a_in[idx] = a_in[idx].max(s * w3);
                    b_in[idx] = b_in[idx].max(rates.fetch_compute(k, f) * w3);
                }
                let w4 = policy.weight(k, f, Route::FetchOutput);
                if w4 > 0.0 {
                    a_out[idx] = a_out[idx].max(s * w4);
                }
            }
        }
        Self { policy, num_samples: n, a_in, b_in, a_out }
    }

    fn check_dims(&self, instance: &Instance) -> Result<()> {
        let fn_ = instance.num_tasks();
        if self.policy.num_tasks() != fn_ || self.policy.num_devices() != instance.num_devices() {
            return Err(Error::DimensionMismatch(format!(
                "policy is {}x{}, instance is {}x{}",
                self.policy.num_devices(),
                self.policy.num_tasks(),
                instance.num_devices(),
                fn_
            )));
        }
        let cells = self.num_samples * fn_;
        if self.a_in.len() != cells || self.b_in.len() != cells || self.a_out.len() != cells {
            return Err(Error::DimensionMismatch(format!(
                "auxiliary tensors must hold {cells} cells"
            )));
        }
        Ok(())
    }
}

/// Anchor of one majorize-minimize iteration: the previous auxiliaries and
/// route weights, with `x` laid out (device, task, route).
#[derive(Debug, Clone, PartialEq)]
pub struct DcAnchor {
    pub a_in: Vec<f64>,
    pub b_in: Vec<f64>,
    pub x: Vec<f64>,
}

/// Sampled objective through the auxiliaries:
/// mean over samples of `sum_f ((a+b)^2 - (a-b)^2)/4 + (O_f/tau) * a_out`.
///
/// The squared difference is evaluated with per-tensor rescaling; the two
/// auxiliaries of the input stream live on very different magnitudes
/// (channel weights vs rates) and the naive difference of squares would lose
/// most of the product's precision.
pub fn dc_objective(instance: &Instance, state: &DcState) -> Result<f64> {
    state.check_dims(instance)?;
    let fn_ = instance.num_tasks();
    let tau = instance.params.deadline;
    let sigma_a = state.a_in.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let sigma_b = state.b_in.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut total = 0.0;
    for si in 0..state.num_samples {
        for f in 0..fn_ {
            let idx = si * fn_ + f;
            let an = state.a_in[idx] / sigma_a;
            let bn = state.b_in[idx] / sigma_b;
            let product = sigma_a * sigma_b * ((an + bn).powi(2) - (an - bn).powi(2)) / 4.0;
            total += product + instance.catalog.tasks[f].output_bits / tau * state.a_out[idx];
        }
    }
    Ok(total / state.num_samples as f64)
}

/// [`dc_objective`] plus `-rho * sum x(x-1)`, which vanishes on binary
/// policies and penalizes fractional route weights.
pub fn penalized_objective(instance: &Instance, state: &DcState, rho: f64) -> Result<f64> {
    let dc = dc_objective(instance, state)?;
    let penalty: f64 = state.policy.weights().iter().map(|&x| x * (x - 1.0)).sum();
    Ok(dc - rho * penalty)
}

/// Convex majorizer at `anchor`: the concave squares of the objective and of
/// the binarization penalty are replaced by their tangents at the anchor.
pub fn cccp_subproblem_objective(
    instance: &Instance,
    state: &DcState,
    anchor: &DcAnchor,
    rho: f64,
) -> Result<f64> {
    state.check_dims(instance)?;
    let fn_ = instance.num_tasks();
    let cells = state.num_samples * fn_;
    if anchor.a_in.len() != cells || anchor.b_in.len() != cells {
        return Err(Error::DimensionMismatch("anchor auxiliaries".into()));
    }
    if anchor.x.len() != state.policy.weights().len() {
        return Err(Error::DimensionMismatch("anchor route weights".into()));
    }
    let tau = instance.params.deadline;
    let mut total = 0.0;
    for si in 0..state.num_samples {
        for f in 0..fn_ {
            let idx = si * fn_ + f;
            let slope = (anchor.a_in[idx] - anchor.b_in[idx]) / 2.0;
            total += (state.a_in[idx] + state.b_in[idx]).powi(2) / 4.0
                + instance.catalog.tasks[f].output_bits / tau * state.a_out[idx]
                - slope * (state.a_in[idx] - state.b_in[idx]);
        }
    }
    let linear_penalty: f64 = state
        .policy
        .weights()
        .iter()
        .zip(&anchor.x)
        .map(|(&x, &xa)| (2.0 * xa - 1.0) * x)
        .sum();
    Ok(total / state.num_samples as f64 - rho * linear_penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandwidth::saa_objective;
    use crate::sampling::draw_samples;
    use crate::testutil::{random_feasible_policy, random_instance};

    #[test]
    fn auxiliary_identity_reproduces_sampled_bandwidth() {
        for seed in 0..20u64 {
            let inst = random_instance(3, 3, 3.0, 900 + seed);
            let samples = draw_samples(&inst, 10, seed);
            let policy = random_feasible_policy(&inst, seed);
            let direct = saa_objective(&inst, &policy, &samples).unwrap();
            let state = DcState::from_policy(&inst, &samples, policy);
            let via_dc = dc_objective(&inst, &state).unwrap();
            assert!(
                (via_dc - direct).abs() <= 1e-12 * direct.max(1.0),
                "seed {seed}: {via_dc} vs {direct}"
            );
        }
    }

    #[test]
    fn zero_input_auxiliaries_leave_output_term() {
        let inst = random_instance(2, 2, 2.0, 4);
        let samples = draw_samples(&inst, 5, 1);
        let policy = crate::ServicePolicy::mec(2, 2);
        let state = DcState::from_policy(&inst, &samples, policy);
        assert!(state.a_in.iter().all(|&v| v == 0.0));
        let v = dc_objective(&inst, &state).unwrap();
        let direct = saa_objective(&inst, &crate::ServicePolicy::mec(2, 2), &samples).unwrap();
        assert!((v - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn penalty_vanishes_on_binary_and_counts_fractional_mass() {
        let inst = random_instance(2, 2, 2.0, 5);
        let samples = draw_samples(&inst, 4, 2);
        let policy = random_feasible_policy(&inst, 3);
        let state = DcState::from_policy(&inst, &samples, policy);
        let dc = dc_objective(&inst, &state).unwrap();
        assert_eq!(penalized_objective(&inst, &state, 1e4).unwrap(), dc);

        let mut half = crate::ServicePolicy::uniform_relaxed(2, 2);
        for k in 0..2 {
            for f in 0..2 {
                half.set_weights(k, f, [0.5, 0.5, 0.0, 0.0]);
            }
        }
        let state = DcState::from_policy(&inst, &samples, half);
        let rho = 1e4;
        let dc = dc_objective(&inst, &state).unwrap();
        let pen = penalized_objective(&inst, &state, rho).unwrap();
        // Two entries at 0.5 per row contribute 2 * 0.25 each.
        assert!((pen - dc - rho * 2.0 * 2.0 * 2.0 * 0.25).abs() < 1e-9 * pen.abs().max(1.0));
    }

    #[test]
    fn anchored_surrogate_offsets_by_the_linearization_constant() {
        let inst = random_instance(2, 2, 3.0, 6);
        let samples = draw_samples(&inst, 6, 3);
        let policy = random_feasible_policy(&inst, 9);
        let state = DcState::from_policy(&inst, &samples, policy);
        let anchor = DcAnchor {
            a_in: state.a_in.clone(),
            b_in: state.b_in.clone(),
            x: state.policy.weights().to_vec(),
        };
        let rho = 1e3;
        let pen = penalized_objective(&inst, &state, rho).unwrap();
        let sur = cccp_subproblem_objective(&inst, &state, &anchor, rho).unwrap();
        let n = state.num_samples as f64;
        let constant: f64 = state
            .a_in
            .iter()
            .zip(&state.b_in)
            .map(|(a, b)| (a - b).powi(2) / 4.0)
            .sum::<f64>()
            / n
            + rho * state.policy.weights().iter().map(|x| x * x).sum::<f64>();
        assert!(
            (sur - (pen - constant)).abs() <= 1e-9 * pen.abs().max(1.0),
            "{sur} vs {}",
            pen - constant
        );
    }

    #[test]
    fn surrogate_majorizes_everywhere() {
        let inst = random_instance(2, 2, 3.0, 7);
        let samples = draw_samples(&inst, 6, 4);
        let anchor_state =
            DcState::from_policy(&inst, &samples, random_feasible_policy(&inst, 20));
        let anchor = DcAnchor {
            a_in: anchor_state.a_in.clone(),
            b_in: anchor_state.b_in.clone(),
            x: anchor_state.policy.weights().to_vec(),
        };
        let rho = 1e3;
        let n = anchor_state.num_samples as f64;
        let constant: f64 = anchor
            .a_in
            .iter()
            .zip(&anchor.b_in)
            .map(|(a, b)| (a - b).powi(2) / 4.0)
            .sum::<f64>()
            / n
            + rho * anchor.x.iter().map(|x| x * x).sum::<f64>();
        for seed in 40..60u64 {
            let state =
                DcState::from_policy(&inst, &samples, random_feasible_policy(&inst, seed));
            let pen = penalized_objective(&inst, &state, rho).unwrap();
            let sur = cccp_subproblem_objective(&inst, &state, &anchor, rho).unwrap();
            assert!(
                sur >= pen - constant - 1e-9 * pen.abs().max(1.0),
                "seed {seed}: surrogate {sur} below {}",
                pen - constant
            );
        }
    }
}
