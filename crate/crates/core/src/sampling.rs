//! Request sample generation under the independent reference model, plus
//! popularity profiles.
//!
//! Draws are counter-based: the seed, sample index and device index fully
//! determine each draw, so generation is order-independent and safe to
//! parallelize.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandwidth::RequestSample;
use crate::error::{Error, Result};
use crate::instance::Instance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PopularityKind {
    Uniform,
    Zipf { gamma: f64 },
    Explicit,
}

/// Per-device demand vectors with their generating rule.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityProfile {
    pub kind: PopularityKind,
    pub per_device: Vec<Vec<f64>>,
}

impl PopularityProfile {
    pub fn uniform(num_devices: usize, num_tasks: usize) -> Self {
        let row = vec![1.0 / num_tasks as f64; num_tasks];
        Self { kind: PopularityKind::Uniform, per_device: vec![row; num_devices] }
    }

    /// Shared rank-based popularity: task at rank r gets weight r^-gamma.
    pub fn zipf(num_devices: usize, num_tasks: usize, gamma: f64) -> Self {
        let row = zipf_popularity(num_tasks, gamma);
        Self { kind: PopularityKind::Zipf { gamma }, per_device: vec![row; num_devices] }
    }

    pub fn explicit(rows: Vec<Vec<f64>>) -> Self {
        Self { kind: PopularityKind::Explicit, per_device: rows }
    }
}

/// Normalized rank popularity: entry f (0-based) is proportional to
/// (f+1)^-gamma. Gamma 0 gives the uniform distribution.
pub fn zipf_popularity(num_tasks: usize, gamma: f64) -> Vec<f64> {
    let mut p: Vec<f64> = (1..=num_tasks)
        .map(|rank| (rank as f64).powf(-gamma))
        .collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    p
}

/// Stream id for one (sample, device) draw.
#[inline]
fn stream_id(n: usize, k: usize, num_devices: usize) -> u64 {
    n as u64 * num_devices as u64 + k as u64
}

/// One inverse-CDF draw from `demand` on the unit interval point `u`.
#[inline]
fn inverse_cdf(demand: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (f, &p) in demand.iter().enumerate() {
        acc += p;
        if u < acc {
            return f;
        }
    }
    // Round-off at the top of the CDF: return the last task with mass.
    demand
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(demand.len() - 1)
}

/// Draws `n_samples` i.i.d. request states, each device independent with its
/// own demand vector. Identical (instance shape, n_samples, seed) give
/// identical samples regardless of evaluation order or thread count.
pub fn draw_samples(instance: &Instance, n_samples: usize, seed: u64) -> Vec<RequestSample> {
    let kn = instance.num_devices();
    (0..n_samples)
        .map(|n| {
            let tasks = (0..kn)
                .map(|k| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(stream_id(n, k, kn));
                    inverse_cdf(&instance.devices[k].demand, rng.gen::<f64>())
                })
                .collect();
            RequestSample::new(tasks)
        })
        .collect()
}

/// Writes samples as `sample_id,device_id,task_id` rows.
pub fn samples_to_csv(samples: &[RequestSample]) -> String {
    let mut out = String::from("# edgecast-csv v1 samples\nsample_id,device_id,task_id\n");
    for (n, s) in samples.iter().enumerate() {
        for (k, &f) in s.tasks.iter().enumerate() {
            out.push_str(&format!("{n},{k},{f}\n"));
        }
    }
    out
}

/// Reads samples written by [`samples_to_csv`]. Rows must be grouped by
/// sample id in increasing order.
pub fn samples_from_csv(text: &str) -> Result<Vec<RequestSample>> {
    let mut samples: Vec<RequestSample> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("sample_id") {
            continue;
        }
        let mut parts = line.split(',');
        let mut next_field = |name: &str| -> Result<usize> {
            parts
                .next()
                .ok_or_else(|| Error::Csv(format!("line {}: missing {name}", lineno + 1)))?
                .trim()
                .parse()
                .map_err(|e| Error::Csv(format!("line {}: {name}: {e}", lineno + 1)))
        };
        let n = next_field("sample_id")?;
        let k = next_field("device_id")?;
        let f = next_field("task_id")?;
        if n == samples.len() {
            samples.push(RequestSample::new(Vec::new()));
        } else if n + 1 != samples.len() {
            return Err(Error::Csv(format!(
                "line {}: sample ids must be grouped and increasing",
                lineno + 1
            )));
        }
        let sample = samples.last_mut().unwrap();
        if k != sample.tasks.len() {
            return Err(Error::Csv(format!(
                "line {}: device ids must be consecutive within a sample",
                lineno + 1
            )));
        }
        sample.tasks.push(f);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::small_instance;

    #[test]
    fn zipf_hand_values() {
        let p = zipf_popularity(2, 1.0);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(zipf_popularity(1, 2.5), vec![1.0]);
        let flat = zipf_popularity(4, 0.0);
        assert!(flat.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn point_mass_demand_draws_the_point() {
        let mut inst = small_instance();
        for d in &mut inst.devices {
            d.demand = vec![0.0, 1.0];
        }
        for s in draw_samples(&inst, 64, 9) {
            assert_eq!(s.tasks, vec![1, 1]);
        }
    }

    #[test]
    fn same_seed_same_samples() {
        let inst = small_instance();
        assert_eq!(draw_samples(&inst, 500, 42), draw_samples(&inst, 500, 42));
        assert_ne!(draw_samples(&inst, 500, 42), draw_samples(&inst, 500, 43));
    }

    #[test]
    fn empirical_frequency_matches_demand() {
        let mut inst = crate::testutil::single_device_instance(
            vec![(1e6, 1.0, 1e6), (1e6, 1.0, 1e6)],
            0.1,
            1e-27,
            1e11,
            0.1,
        );
        inst.devices[0].demand = vec![0.8, 0.2];
        let n = 100_000;
        let hits = draw_samples(&inst, n, 7)
            .iter()
            .filter(|s| s.tasks[0] == 0)
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.8).abs() < 0.01, "empirical frequency {freq}");
    }

    #[test]
    fn chi_square_marginals_per_device() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut inst = small_instance();
        inst.devices[0].demand = zipf_popularity(2, 1.0);
        inst.devices[1].demand = vec![0.35, 0.65];
        let n = 100_000;
        let samples = draw_samples(&inst, n, 2024);
        for k in 0..inst.num_devices() {
            let mut counts = vec![0usize; inst.num_tasks()];
            for s in &samples {
                counts[s.tasks[k]] += 1;
            }
            let mut chi2 = 0.0;
            let mut bins = 0;
            for (f, &p) in inst.devices[k].demand.iter().enumerate() {
                if p > 0.0 {
                    let expected = p * n as f64;
                    chi2 += (counts[f] as f64 - expected).powi(2) / expected;
                    bins += 1;
                }
            }
            let crit = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.999);
            assert!(chi2 < crit, "device {k}: chi2 {chi2} over critical {crit}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let inst = small_instance();
        let samples = draw_samples(&inst, 20, 5);
        let text = samples_to_csv(&samples);
        assert_eq!(samples_from_csv(&text).unwrap(), samples);
    }
}
