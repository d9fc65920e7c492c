//! Problem instances: task catalog, device fleet, system parameters, and
//! instance validation.
//!
//! Units are SI throughout: bits, joules, cycles/s, seconds. Channel quality
//! is carried as inverse spectral efficiency (Hz needed per bit/s of goodput),
//! so no logarithm base is baked into the instance.

use serde::{Deserialize, Serialize};

/// Relative tolerance for the shared output/input ratio across tasks.
pub const ALPHA_TOL: f64 = 1e-9;
/// Absolute tolerance for demand-vector normalization.
pub const DEMAND_TOL: f64 = 1e-12;

/// One computation task: download its input and compute, or download its
/// precomputed output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Input data size in bits.
    pub input_bits: f64,
    /// Computation load in cycles per input bit.
    pub compute_load: f64,
    /// Output data size in bits.
    pub output_bits: f64,
}

impl TaskSpec {
    /// Output-to-input size ratio of this task.
    pub fn ratio(&self) -> f64 {
        self.output_bits / self.input_bits
    }
}

/// Ordered task list with the common output/input ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCatalog {
    pub tasks: Vec<TaskSpec>,
    /// Shared output/input size ratio; every task must match it to
    /// [`ALPHA_TOL`] relative tolerance.
    pub alpha: f64,
}

impl TaskCatalog {
    /// Builds a catalog from explicit tasks, taking alpha from the first task.
    pub fn new(tasks: Vec<TaskSpec>) -> Self {
        let alpha = tasks.first().map(TaskSpec::ratio).unwrap_or(1.0);
        Self { tasks, alpha }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// A mobile device: cache budget, average energy budget, CPU frequency,
/// channel quality and task demand distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    /// Cache size in bits.
    pub cache_bits: f64,
    /// Average per-slot energy budget in joules.
    pub avg_energy: f64,
    /// CPU frequency in cycles/s.
    pub cpu_freq: f64,
    /// Inverse spectral efficiency: Hz of bandwidth per bit/s delivered to
    /// this device. Worse channels have larger values.
    pub inv_spectral_eff: f64,
    /// Demand distribution over tasks; sums to one.
    pub demand: Vec<f64>,
}

impl DeviceSpec {
    /// Convenience constructor that derives the inverse spectral efficiency
    /// from transmit power, channel gain and noise variance using a base-2
    /// logarithm.
    pub fn with_channel(
        cache_bits: f64,
        avg_energy: f64,
        cpu_freq: f64,
        tx_power: f64,
        channel_gain: f64,
        noise_var: f64,
        demand: Vec<f64>,
    ) -> Self {
        let snr = tx_power * channel_gain * channel_gain / noise_var;
        Self {
            cache_bits,
            avg_energy,
            cpu_freq,
            inv_spectral_eff: 1.0 / (1.0 + snr).log2(),
            demand,
        }
    }
}

/// Slot-level system parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Per-request service deadline in seconds.
    pub deadline: f64,
    /// Energy coefficient of the device CPUs, J·s²/cycles³: computing one
    /// cycle at frequency f costs `energy_coeff * f^2` joules.
    pub energy_coeff: f64,
}

/// A full problem instance. Immutable after construction; share freely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub catalog: TaskCatalog,
    pub devices: Vec<DeviceSpec>,
    pub params: SystemParams,
}

/// First invariant found violated by [`Instance::validate`]. A violation is
/// data about the instance, not a fault of the checker.
#[derive(Debug, Clone, PartialEq)]
pub enum InstanceViolation {
    NoTasks,
    NoDevices,
    NonPositiveTaskField { task: usize, field: &'static str },
    AlphaInconsistent { task: usize, ratio: f64, alpha: f64 },
    NegativeDeviceField { device: usize, field: &'static str },
    NonPositiveDeviceField { device: usize, field: &'static str },
    DemandLength { device: usize, len: usize, tasks: usize },
    NegativeDemand { device: usize, task: usize },
    DemandNotNormalized { device: usize, sum: f64 },
    NonPositiveParam { field: &'static str },
    DeadlineInfeasible { device: usize, task: usize, compute_s: f64 },
}

impl std::fmt::Display for InstanceViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        use InstanceViolation::*;
        match self {
            NoTasks => write!(f, "catalog has no tasks"),
            NoDevices => write!(f, "instance has no devices"),
            NonPositiveTaskField { task, field } => {
                write!(f, "task {task}: {field} must be positive")
            }
            AlphaInconsistent { task, ratio, alpha } => write!(
                f,
                "task {task}: output/input ratio {ratio} differs from catalog alpha {alpha}"
            ),
            NegativeDeviceField { device, field } => {
                write!(f, "device {device}: {field} must be nonnegative")
            }
            NonPositiveDeviceField { device, field } => {
                write!(f, "device {device}: {field} must be positive")
            }
            DemandLength { device, len, tasks } => write!(
                f,
                "device {device}: demand vector has {len} entries for {tasks} tasks"
            ),
            NegativeDemand { device, task } => {
                write!(f, "device {device}: negative demand for task {task}")
            }
            DemandNotNormalized { device, sum } => {
                write!(f, "demand not normalized (device {device}: sum = {sum})")
            }
            NonPositiveParam { field } => write!(f, "system parameter {field} must be positive"),
            DeadlineInfeasible {
                device,
                task,
                compute_s,
            } => write!(
                f,
                "deadline infeasible for local computing (device {device}, task {task}: \
                 compute time {compute_s} s exceeds deadline)"
            ),
        }
    }
}

impl Instance {
    pub fn num_tasks(&self) -> usize {
        self.catalog.len()
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    /// Demand probability of task `f` at device `k`.
    pub fn demand(&self, k: usize, f: usize) -> f64 {
        self.devices[k].demand[f]
    }

    /// Per-request average computing energy (J) of serving task `f` locally
    /// at device `k`: demand-weighted cycles times per-cycle energy.
    pub fn compute_energy(&self, k: usize, f: usize) -> f64 {
        let t = &self.catalog.tasks[f];
        let d = &self.devices[k];
        self.demand(k, f) * self.params.energy_coeff * d.cpu_freq * d.cpu_freq
            * t.input_bits
            * t.compute_load
    }

    /// Checks every type invariant plus the local-compute deadline
    /// prerequisite; returns the first violation found.
    pub fn validate(&self) -> Result<(), InstanceViolation> {
        use InstanceViolation::*;
        if self.catalog.is_empty() {
            return Err(NoTasks);
        }
        if self.devices.is_empty() {
            return Err(NoDevices);
        }
        for (i, t) in self.catalog.tasks.iter().enumerate() {
            if !(t.input_bits > 0.0) {
                return Err(NonPositiveTaskField { task: i, field: "input_bits" });
            }
            if !(t.compute_load > 0.0) {
                return Err(NonPositiveTaskField { task: i, field: "compute_load" });
            }
            if !(t.output_bits > 0.0) {
                return Err(NonPositiveTaskField { task: i, field: "output_bits" });
            }
            let ratio = t.ratio();
            if (ratio - self.catalog.alpha).abs()
                > ALPHA_TOL * self.catalog.alpha.abs().max(ratio.abs())
            {
                return Err(AlphaInconsistent { task: i, ratio, alpha: self.catalog.alpha });
            }
        }
        if !(self.params.deadline > 0.0) {
            return Err(NonPositiveParam { field: "deadline" });
        }
        if !(self.params.energy_coeff > 0.0) {
            return Err(NonPositiveParam { field: "energy_coeff" });
        }
        let tasks = self.num_tasks();
        for (k, d) in self.devices.iter().enumerate() {
            if !(d.cache_bits >= 0.0) {
                return Err(NegativeDeviceField { device: k, field: "cache_bits" });
            }
            if !(d.avg_energy >= 0.0) {
                return Err(NegativeDeviceField { device: k, field: "avg_energy" });
            }
            if !(d.cpu_freq > 0.0) {
                return Err(NonPositiveDeviceField { device: k, field: "cpu_freq" });
            }
            if !(d.inv_spectral_eff > 0.0) {
                return Err(NonPositiveDeviceField { device: k, field: "inv_spectral_eff" });
            }
            if d.demand.len() != tasks {
                return Err(DemandLength { device: k, len: d.demand.len(), tasks });
            }
            let mut sum = 0.0;
            for (f, &p) in d.demand.iter().enumerate() {
                if !(p >= 0.0) {
                    return Err(NegativeDemand { device: k, task: f });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > DEMAND_TOL {
                return Err(DemandNotNormalized { device: k, sum });
            }
        }
        for (k, d) in self.devices.iter().enumerate() {
            for (f, t) in self.catalog.tasks.iter().enumerate() {
                let compute_s = t.input_bits * t.compute_load / d.cpu_freq;
                if compute_s > self.params.deadline {
                    return Err(DeadlineInfeasible { device: k, task: f, compute_s });
                }
            }
        }
        Ok(())
    }
}

/// Checks every type invariant and the deadline prerequisite of `instance`.
pub fn validate_instance(instance: &Instance) -> Result<(), InstanceViolation> {
    instance.validate()
}

/// Precomputed per-(device, task) rate and energy tables.
///
/// `fetch_compute` entries are `f64::INFINITY` where the deadline leaves no
/// transmission time; all consumers treat such routes as unusable.
#[derive(Debug, Clone)]
pub struct Rates {
    pub num_devices: usize,
    pub num_tasks: usize,
    /// Rate needed to download the input and still compute in time, (k, f).
    pub fetch_compute: Vec<f64>,
    /// Rate needed to download the output in time, per task.
    pub fetch_output: Vec<f64>,
    /// Average computing energy per request, (k, f).
    pub energy: Vec<f64>,
}

impl Rates {
    pub fn new(instance: &Instance) -> Self {
        let (kn, fn_) = (instance.num_devices(), instance.num_tasks());
        let mut fetch_compute = vec![0.0; kn * fn_];
        let mut energy = vec![0.0; kn * fn_];
        let fetch_output = instance
            .catalog
            .tasks
            .iter()
            .map(|t| t.output_bits / instance.params.deadline)
            .collect();
        for k in 0..kn {
            for f in 0..fn_ {
                let t = &instance.catalog.tasks[f];
                let slack =
                    instance.params.deadline - t.input_bits * t.compute_load / instance.devices[k].cpu_freq;
                fetch_compute[k * fn_ + f] = if slack > 0.0 {
                    t.input_bits / slack
                } else {
                    f64::INFINITY
                };
                energy[k * fn_ + f] = instance.compute_energy(k, f);
            }
        }
        Self { num_devices: kn, num_tasks: fn_, fetch_compute, fetch_output, energy }
    }

    #[inline]
    pub fn fetch_compute(&self, k: usize, f: usize) -> f64 {
        self.fetch_compute[k * self.num_tasks + f]
    }

    #[inline]
    pub fn fetch_output(&self, f: usize) -> f64 {
        self.fetch_output[f]
    }

    #[inline]
    pub fn energy(&self, k: usize, f: usize) -> f64 {
        self.energy[k * self.num_tasks + f]
    }
}
