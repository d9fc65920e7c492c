//! Instance files: a single TOML document with `[tasks]`, `[devices]` and
//! `[system]` sections. Tasks and devices may be listed explicitly or
//! generated from a compact rule; see the repository README for the field
//! reference. All values are SI units (bits, joules, cycles/s, seconds).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{DeviceSpec, Instance, SystemParams, TaskCatalog, TaskSpec};
use crate::sampling::zipf_popularity;

/// Scalar applied to every entry, or one value per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrList {
    Scalar(f64),
    List(Vec<f64>),
}

impl ScalarOrList {
    fn materialize(&self, len: usize, field: &str) -> Result<Vec<f64>> {
        match self {
            ScalarOrList::Scalar(v) => Ok(vec![*v; len]),
            ScalarOrList::List(vs) if vs.len() == len => Ok(vs.clone()),
            ScalarOrList::List(vs) => Err(Error::Config(format!(
                "{field}: expected {len} entries, got {}",
                vs.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TasksSection {
    /// Explicit input sizes in bits. Mutually exclusive with `count`.
    pub input_bits: Option<Vec<f64>>,
    /// Explicit output sizes; defaults to `alpha * input_bits`.
    pub output_bits: Option<Vec<f64>>,
    /// Compute load, cycles/bit; scalar or per task.
    pub compute_load: Option<ScalarOrList>,
    /// Output/input ratio used when outputs are not listed.
    pub alpha: Option<f64>,
    /// Generated mode: number of tasks.
    pub count: Option<usize>,
    /// Generated mode: inputs drawn uniformly from this range.
    pub input_bits_range: Option<[f64; 2]>,
    /// Generated mode: draw seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DevicesSection {
    pub count: Option<usize>,
    pub cache_bits: Option<ScalarOrList>,
    pub avg_energy: Option<ScalarOrList>,
    pub cpu_freq: Option<ScalarOrList>,
    /// Explicit inverse spectral efficiency, scalar or per device.
    pub inv_spectral_eff: Option<ScalarOrList>,
    /// Linear channel rule: device k (1-based) gets `slope * k`.
    pub inv_spectral_eff_slope: Option<f64>,
    /// "uniform", "zipf" or "explicit".
    pub demand: Option<String>,
    pub zipf_gamma: Option<f64>,
    /// Row per device when `demand = "explicit"`.
    pub demand_matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// Service deadline in seconds.
    pub deadline: f64,
    /// CPU energy coefficient, J·s²/cycles³.
    pub energy_coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub tasks: TasksSection,
    pub devices: DevicesSection,
    pub system: SystemSection,
}

impl InstanceConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Builds and validates the instance.
    pub fn build(&self) -> Result<Instance> {
        self.build_with_device_count(None)
    }

    /// Builds with the device count overridden (used by device-count sweeps).
    /// Only configs with rule-based devices can be resized.
    pub fn build_with_device_count(&self, device_count: Option<usize>) -> Result<Instance> {
        let tasks = self.build_tasks()?;
        let devices = self.build_devices(tasks.len(), device_count)?;
        let instance = Instance {
            catalog: TaskCatalog::new(tasks),
            devices,
            params: SystemParams {
                deadline: self.system.deadline,
                energy_coeff: self.system.energy_coeff,
            },
        };
        instance
            .validate()
            .map_err(|v| Error::Config(format!("invalid instance: {v}")))?;
        Ok(instance)
    }

    fn build_tasks(&self) -> Result<Vec<TaskSpec>> {
        let t = &self.tasks;
        let inputs: Vec<f64> = match (&t.input_bits, t.count) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "tasks: give either input_bits or count, not both".into(),
                ))
            }
            (Some(list), None) => list.clone(),
            (None, Some(count)) => {
                let range = t.input_bits_range.ok_or_else(|| {
                    Error::Config("tasks: generated mode needs input_bits_range".into())
                })?;
                let mut rng = ChaCha8Rng::seed_from_u64(t.seed.unwrap_or(0));
                (0..count).map(|_| rng.gen_range(range[0]..range[1])).collect()
            }
            (None, None) => {
                return Err(Error::Config("tasks: need input_bits or count".into()))
            }
        };
        let n = inputs.len();
        let loads = t
            .compute_load
            .as_ref()
            .ok_or_else(|| Error::Config("tasks: compute_load missing".into()))?
            .materialize(n, "tasks.compute_load")?;
        let outputs: Vec<f64> = match (&t.output_bits, t.alpha) {
            (Some(list), _) if list.len() == n => list.clone(),
            (Some(list), _) => {
                return Err(Error::Config(format!(
                    "tasks.output_bits: expected {n} entries, got {}",
                    list.len()
                )))
            }
            (None, Some(alpha)) => inputs.iter().map(|i| alpha * i).collect(),
            (None, None) => {
                return Err(Error::Config("tasks: need output_bits or alpha".into()))
            }
        };
        Ok(inputs
            .into_iter()
            .zip(loads)
            .zip(outputs)
            .map(|((input_bits, compute_load), output_bits)| TaskSpec {
                input_bits,
                compute_load,
                output_bits,
            })
            .collect())
    }

    fn build_devices(
        &self,
        num_tasks: usize,
        count_override: Option<usize>,
    ) -> Result<Vec<DeviceSpec>> {
        let d = &self.devices;
        let base_count = d.count.or_else(|| {
            d.inv_spectral_eff.as_ref().and_then(|s| match s {
                ScalarOrList::List(v) => Some(v.len()),
                ScalarOrList::Scalar(_) => None,
            })
        });
        let count = match (count_override, base_count) {
            (Some(c), _) => {
                let explicit_lists = matches!(d.inv_spectral_eff, Some(ScalarOrList::List(_)))
                    || matches!(d.cache_bits, Some(ScalarOrList::List(_)))
                    || matches!(d.avg_energy, Some(ScalarOrList::List(_)))
                    || matches!(d.cpu_freq, Some(ScalarOrList::List(_)))
                    || d.demand_matrix.is_some();
                if explicit_lists {
                    return Err(Error::Config(
                        "devices: cannot resize a config with explicit per-device lists".into(),
                    ));
                }
                c
            }
            (None, Some(c)) => c,
            (None, None) => {
                return Err(Error::Config("devices: need count or per-device lists".into()))
            }
        };
        if count == 0 {
            return Err(Error::Config("devices: count must be at least 1".into()));
        }
        let cache = d
            .cache_bits
            .as_ref()
            .ok_or_else(|| Error::Config("devices: cache_bits missing".into()))?
            .materialize(count, "devices.cache_bits")?;
        let energy = d
            .avg_energy
            .as_ref()
            .ok_or_else(|| Error::Config("devices: avg_energy missing".into()))?
            .materialize(count, "devices.avg_energy")?;
        let freq = d
            .cpu_freq
            .as_ref()
            .ok_or_else(|| Error::Config("devices: cpu_freq missing".into()))?
            .materialize(count, "devices.cpu_freq")?;
        let channel: Vec<f64> = match (&d.inv_spectral_eff, d.inv_spectral_eff_slope) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "devices: give inv_spectral_eff or inv_spectral_eff_slope, not both".into(),
                ))
            }
            (Some(s), None) => s.materialize(count, "devices.inv_spectral_eff")?,
            (None, Some(slope)) => (1..=count).map(|k| slope * k as f64).collect(),
            (None, None) => {
                return Err(Error::Config("devices: channel quality missing".into()))
            }
        };
        let demand_kind = d.demand.as_deref().unwrap_or("uniform");
        let rows: Vec<Vec<f64>> = match demand_kind {
            "uniform" => vec![vec![1.0 / num_tasks as f64; num_tasks]; count],
            "zipf" => {
                let gamma = d.zipf_gamma.unwrap_or(1.0);
                vec![zipf_popularity(num_tasks, gamma); count]
            }
            "explicit" => {
                let m = d.demand_matrix.as_ref().ok_or_else(|| {
                    Error::Config("devices: explicit demand needs demand_matrix".into())
                })?;
                if m.len() != count {
                    return Err(Error::Config(format!(
                        "devices.demand_matrix: expected {count} rows, got {}",
                        m.len()
                    )));
                }
                m.clone()
            }
            other => {
                return Err(Error::Config(format!(
                    "devices.demand: unknown kind {other:?} (uniform, zipf, explicit)"
                )))
            }
        };
        Ok((0..count)
            .map(|k| DeviceSpec {
                cache_bits: cache[k],
                avg_energy: energy[k],
                cpu_freq: freq[k],
                inv_spectral_eff: channel[k],
                demand: rows[k].clone(),
            })
            .collect())
    }

    /// Writes an instance back as an explicit config.
    pub fn from_instance(instance: &Instance) -> Self {
        InstanceConfig {
            tasks: TasksSection {
                input_bits: Some(instance.catalog.tasks.iter().map(|t| t.input_bits).collect()),
                output_bits: Some(instance.catalog.tasks.iter().map(|t| t.output_bits).collect()),
                compute_load: Some(ScalarOrList::List(
                    instance.catalog.tasks.iter().map(|t| t.compute_load).collect(),
                )),
                alpha: Some(instance.catalog.alpha),
                ..Default::default()
            },
            devices: DevicesSection {
                count: Some(instance.num_devices()),
                cache_bits: Some(ScalarOrList::List(
                    instance.devices.iter().map(|d| d.cache_bits).collect(),
                )),
                avg_energy: Some(ScalarOrList::List(
                    instance.devices.iter().map(|d| d.avg_energy).collect(),
                )),
                cpu_freq: Some(ScalarOrList::List(
                    instance.devices.iter().map(|d| d.cpu_freq).collect(),
                )),
                inv_spectral_eff: Some(ScalarOrList::List(
                    instance.devices.iter().map(|d| d.inv_spectral_eff).collect(),
                )),
                demand: Some("explicit".into()),
                demand_matrix: Some(instance.devices.iter().map(|d| d.demand.clone()).collect()),
                ..Default::default()
            },
            system: SystemSection {
                deadline: instance.params.deadline,
                energy_coeff: instance.params.energy_coeff,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GENERATED: &str = r#"
        [tasks]
        count = 8
        input_bits_range = [10e6, 15e6]
        alpha = 3.0
        compute_load = 10.0
        seed = 7

        [devices]
        count = 3
        cache_bits = 5e7
        avg_energy = 1.7e3
        cpu_freq = 1.1e11
        inv_spectral_eff_slope = 0.1
        demand = "zipf"
        zipf_gamma = 1.0

        [system]
        deadline = 0.02
        energy_coeff = 1e-27
    "#;

    #[test]
    fn generated_config_builds_and_is_deterministic() {
        let cfg = InstanceConfig::from_toml(GENERATED).unwrap();
        let a = cfg.build().unwrap();
        let b = cfg.build().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_tasks(), 8);
        assert_eq!(a.num_devices(), 3);
        assert!((a.devices[2].inv_spectral_eff - 0.3).abs() < 1e-12);
        assert!(a.validate().is_ok());
    }

    #[test]
    fn explicit_round_trip() {
        let cfg = InstanceConfig::from_toml(GENERATED).unwrap();
        let inst = cfg.build().unwrap();
        let explicit = InstanceConfig::from_instance(&inst);
        let rebuilt = InstanceConfig::from_toml(&explicit.to_toml()).unwrap().build().unwrap();
        assert_eq!(inst, rebuilt);
    }

    #[test]
    fn device_count_override_needs_rules() {
        let cfg = InstanceConfig::from_toml(GENERATED).unwrap();
        let grown = cfg.build_with_device_count(Some(6)).unwrap();
        assert_eq!(grown.num_devices(), 6);
        let explicit = InstanceConfig::from_instance(&cfg.build().unwrap());
        assert!(explicit.build_with_device_count(Some(6)).is_err());
    }

    #[test]
    fn bad_configs_are_reported() {
        let cases = [
            ("[tasks]\ncount = 2\n[devices]\ncount = 1\n[system]\ndeadline = 1.0\nenergy_coeff = 1e-27", "input_bits_range"),
            ("[tasks]\ninput_bits = [1e6]\ncompute_load = 1.0\n[devices]\ncount = 1\n[system]\ndeadline = 1.0\nenergy_coeff = 1e-27", "output_bits or alpha"),
        ];
        for (text, needle) in cases {
            match InstanceConfig::from_toml(text).and_then(|c| c.build()) {
                Err(Error::Config(msg)) => assert!(msg.contains(needle), "{msg}"),
                other => panic!("expected config error, got {other:?}"),
            }
        }
    }
}
