//! Closed forms for the fully symmetric system: identical tasks, identical
//! devices, uniform demand. Gives the optimal per-route task counts, the
//! resulting average bandwidth, the saving relative to fetching every output,
//! the saving of multicast over unicast, and a tiny linear program that
//! cross-checks the counts.

use serde::{Deserialize, Serialize};

use crate::instance::{DeviceSpec, Instance, SystemParams, TaskCatalog, TaskSpec};
use crate::policy::{Route, ServicePolicy};

/// Symmetric system description: every task is (I, w, O), every device has
/// the same budgets, frequency and channel, and demand is uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetricInstance {
    pub num_tasks: usize,
    pub num_devices: usize,
    pub input_bits: f64,
    pub compute_load: f64,
    pub output_bits: f64,
    pub cache_bits: f64,
    pub avg_energy: f64,
    pub cpu_freq: f64,
    pub energy_coeff: f64,
    pub deadline: f64,
    pub inv_spectral_eff: f64,
}

impl SymmetricInstance {
    pub fn alpha(&self) -> f64 {
        self.output_bits / self.input_bits
    }

    /// Cache size normalized by the total output bits of the catalog.
    pub fn beta_c(&self) -> f64 {
        self.cache_bits / (self.num_tasks as f64 * self.output_bits)
    }

    /// Energy budget normalized by the average energy of computing every
    /// request locally.
    pub fn beta_e(&self) -> f64 {
        self.avg_energy
            / (self.energy_coeff * self.input_bits * self.compute_load * self.cpu_freq * self.cpu_freq)
    }

    /// Rate to fetch an input and still compute before the deadline.
    pub fn fetch_compute_rate(&self) -> f64 {
        let slack = self.deadline - self.input_bits * self.compute_load / self.cpu_freq;
        if slack > 0.0 {
            self.input_bits / slack
        } else {
            f64::INFINITY
        }
    }

    /// Rate to fetch an output before the deadline.
    pub fn fetch_output_rate(&self) -> f64 {
        self.output_bits / self.deadline
    }

    /// Frequency above which fetch-and-compute needs less rate than fetching
    /// the output. Only meaningful for alpha > 1.
    pub fn compute_pays_threshold(&self) -> f64 {
        self.input_bits * self.compute_load / ((1.0 - 1.0 / self.alpha()) * self.deadline)
    }

    /// Expands into a general instance with uniform demand.
    pub fn to_instance(&self) -> Instance {
        let task = TaskSpec {
            input_bits: self.input_bits,
            compute_load: self.compute_load,
            output_bits: self.output_bits,
        };
        let demand = vec![1.0 / self.num_tasks as f64; self.num_tasks];
        let device = DeviceSpec {
            cache_bits: self.cache_bits,
            avg_energy: self.avg_energy,
            cpu_freq: self.cpu_freq,
            inv_spectral_eff: self.inv_spectral_eff,
            demand,
        };
        Instance {
            catalog: TaskCatalog::new(vec![task; self.num_tasks]),
            devices: vec![device; self.num_devices],
            params: SystemParams {
                deadline: self.deadline,
                energy_coeff: self.energy_coeff,
            },
        }
    }

    /// Binary policy serving the first `n1` tasks from the output cache, the
    /// next `n2` from cached inputs, the next `n3` by fetch-and-compute, and
    /// the rest by output fetch, identically on every device.
    pub fn policy_from_counts(&self, counts: &[usize; 4]) -> ServicePolicy {
        assert_eq!(counts.iter().sum::<usize>(), self.num_tasks, "counts must cover the catalog");
        let mut row = Vec::with_capacity(self.num_tasks);
        for (j, &n) in counts.iter().enumerate() {
            row.extend(std::iter::repeat(Route::from_index(j).unwrap()).take(n));
        }
        let routes = vec![row; self.num_devices];
        ServicePolicy::from_routes(&routes)
    }
}

/// Real-valued per-route task counts (cached output, cached input + compute,
/// fetch + compute, fetch output).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteCounts {
    pub n: [f64; 4],
}

impl RouteCounts {
    pub fn n1(&self) -> f64 {
        self.n[0]
    }
    pub fn n2(&self) -> f64 {
        self.n[1]
    }
    pub fn n3(&self) -> f64 {
        self.n[2]
    }
    pub fn n4(&self) -> f64 {
        self.n[3]
    }

    pub fn is_integral(&self, tol: f64) -> bool {
        self.n.iter().all(|v| (v - v.round()).abs() <= tol)
    }

    /// Floors the first three counts to integers, assigns the remainder to
    /// output fetching, and flags whether anything was lost to flooring.
    pub fn floored(&self, num_tasks: usize) -> ([usize; 4], bool) {
        let n1 = self.n[0].floor() as usize;
        let n2 = self.n[1].floor() as usize;
        let n3 = self.n[2].floor() as usize;
        let n4 = num_tasks - n1.min(num_tasks) - n2 - n3;
        let gap = !self.is_integral(1e-9);
        ([n1, n2, n3, n4], gap)
    }
}

/// Optimal per-route counts for a symmetric system.
///
/// Cache goes to input caching first (it is alpha times denser than output
/// caching when alpha > 1) up to the energy budget, then to output caching;
/// leftover energy goes to fetch-and-compute only when the CPU is fast enough
/// for that route to need less rate than an output fetch. For alpha <= 1 the
/// cache holds outputs only and local computing is never used.
pub fn optimal_counts(sym: &SymmetricInstance) -> RouteCounts {
    let f = sym.num_tasks as f64;
    let alpha = sym.alpha();
    let beta_c = sym.beta_c();
    let beta_e = sym.beta_e();
    let large_ratio = alpha > 1.0;
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    let n1 = f * (beta_c - beta_c.min(beta_e / alpha) * ind(large_ratio)).max(0.0);
    let n2 = f * (alpha * beta_c).min(beta_e) * ind(large_ratio);
    let n3 = f
        * (beta_e - (alpha * beta_c).min(beta_e))
        * ind(large_ratio && sym.cpu_freq > sym.compute_pays_threshold());
    let n4 = f - n1 - n2 - n3;
    RouteCounts { n: [n1, n2, n3, n4] }
}

/// Average bandwidth of a symmetric count policy: the probability that a
/// task is requested by at least one device times the sum of the surviving
/// stream rates, weighted by the common channel quality.
pub fn closed_form_bandwidth(sym: &SymmetricInstance, counts: &RouteCounts) -> f64 {
    let f = sym.num_tasks as f64;
    let k = sym.num_devices as u32;
    let hit = 1.0 - (1.0 - 1.0 / f).powi(k as i32);
    let r3 = sym.fetch_compute_rate();
    let n3 = counts.n3();
    let fetched = f - counts.n1() - counts.n2() - n3;
    let compute_part = if n3 > 0.0 { r3 * n3 } else { 0.0 };
    sym.inv_spectral_eff * hit * (compute_part + sym.fetch_output_rate() * fetched)
}

/// Which closed-form saving formula applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// Outputs no larger than inputs: only output caching helps.
    SmallRatio,
    /// Energy is the scarce resource relative to cache.
    HighFreq,
    /// Cache is scarce and the CPU is fast enough for fetch-and-compute.
    MidFreq,
    /// Cache is scarce and fetch-and-compute needs more rate than fetching
    /// the output.
    LowFreq,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::SmallRatio => "small_ratio",
            Regime::HighFreq => "high_freq",
            Regime::MidFreq => "mid_freq",
            Regime::LowFreq => "low_freq",
        }
    }
}

/// Ratio of the optimal average bandwidth to the fetch-everything baseline,
/// with the regime that produced it. Regime boundaries fall to whichever
/// adjacent branch is checked first; the formulas agree there, so the choice
/// only affects the label.
pub fn gain_vs_mec(sym: &SymmetricInstance) -> (f64, Regime) {
    let alpha = sym.alpha();
    let beta_c = sym.beta_c();
    let beta_e = sym.beta_e();
    if alpha <= 1.0 {
        return (1.0 - beta_c, Regime::SmallRatio);
    }
    if beta_e <= alpha * beta_c {
        return (1.0 - beta_c - (1.0 - 1.0 / alpha) * beta_e, Regime::HighFreq);
    }
    if sym.cpu_freq > sym.compute_pays_threshold() {
        let tau = sym.deadline;
        let rate_ratio =
            tau / (alpha * (tau - sym.input_bits * sym.compute_load / sym.cpu_freq));
        (
            1.0 - alpha * beta_c - (1.0 - rate_ratio) * (beta_e - alpha * beta_c),
            Regime::MidFreq,
        )
    } else {
        (1.0 - alpha * beta_c, Regime::LowFreq)
    }
}

/// Ratio of multicast to unicast bandwidth in the symmetric system. Depends
/// only on the catalog size and device count.
pub fn gain_vs_unicast(num_tasks: usize, num_devices: usize) -> f64 {
    let f = num_tasks as f64;
    let k = num_devices as f64;
    f * (1.0 - (1.0 - 1.0 / f).powi(num_devices as i32)) / k
}

/// Full symmetric summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricAnalysis {
    pub beta_c: f64,
    pub beta_e: f64,
    pub counts: RouteCounts,
    pub bandwidth_hz: f64,
    pub mec_bandwidth_hz: f64,
    pub unicast_bandwidth_hz: f64,
    pub ratio_mec: f64,
    pub ratio_unicast: f64,
    pub regime: Regime,
}

pub fn analyze(sym: &SymmetricInstance) -> SymmetricAnalysis {
    let counts = optimal_counts(sym);
    let bandwidth = closed_form_bandwidth(sym, &counts);
    let mec =
        closed_form_bandwidth(sym, &RouteCounts { n: [0.0, 0.0, 0.0, sym.num_tasks as f64] });
    // Per-device unicast cost of the same counts.
    let per_request = (sym.fetch_compute_rate() * counts.n3()).max(0.0)
        + sym.fetch_output_rate() * counts.n4();
    let unicast = sym.num_devices as f64 * sym.inv_spectral_eff * per_request
        / sym.num_tasks as f64;
    let (ratio_mec, regime) = gain_vs_mec(sym);
    SymmetricAnalysis {
        beta_c: sym.beta_c(),
        beta_e: sym.beta_e(),
        counts,
        bandwidth_hz: bandwidth,
        mec_bandwidth_hz: mec,
        unicast_bandwidth_hz: unicast,
        ratio_mec,
        ratio_unicast: gain_vs_unicast(sym.num_tasks, sym.num_devices),
        regime,
    }
}

/// Count allocation by exact vertex enumeration of the three-variable
/// polytope `{alpha*n1 + n2 <= C/I, n2 + n3 <= F*beta_e, n1+n2+n3 <= F,
/// n >= 0}` under the closed-form objective. Agrees with [`optimal_counts`]
/// on the objective; ties between optimal vertices go to the
/// lexicographically smallest (n1, n2, n3).
pub fn symmetric_lp(sym: &SymmetricInstance) -> (RouteCounts, f64) {
    let f = sym.num_tasks as f64;
    // Constraint rows a·n <= b.
    let rows: [([f64; 3], f64); 6] = [
        ([sym.alpha(), 1.0, 0.0], sym.cache_bits / sym.input_bits),
        ([0.0, 1.0, 1.0], f * sym.beta_e()),
        ([1.0, 1.0, 1.0], f),
        ([-1.0, 0.0, 0.0], 0.0),
        ([0.0, -1.0, 0.0], 0.0),
        ([0.0, 0.0, -1.0], 0.0),
    ];
    let mut best: Option<([f64; 3], f64)> = None;
    for i in 0..6 {
        for j in (i + 1)..6 {
            for l in (j + 1)..6 {
                let m = [rows[i].0, rows[j].0, rows[l].0];
                let b = [rows[i].1, rows[j].1, rows[l].1];
                let Some(n) = solve3(&m, &b) else { continue };
                let feasible = rows.iter().all(|(a, bound)| {
                    let lhs = a[0] * n[0] + a[1] * n[1] + a[2] * n[2];
                    lhs <= bound + 1e-9 * bound.abs().max(1.0)
                });
                if !feasible {
                    continue;
                }
                let value = closed_form_bandwidth(
                    sym,
                    &RouteCounts { n: [n[0], n[1], n[2], f - n[0] - n[1] - n[2]] },
                );
                let replace = match &best {
                    None => true,
                    Some((bn, bv)) => {
                        value < bv - 1e-12 * bv.abs().max(1.0)
                            || ((value - bv).abs() <= 1e-12 * bv.abs().max(1.0)
                                && n.partial_cmp(bn) == Some(std::cmp::Ordering::Less))
                    }
                };
                if replace {
                    best = Some((n, value));
                }
            }
        }
    }
    let (n, value) = best.expect("the origin is always a feasible vertex");
    (RouteCounts { n: [n[0], n[1], n[2], f - n[0] - n[1] - n[2]] }, value)
}

/// Cramer solve of a 3x3 system; `None` when singular.
fn solve3(m: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let det = |a: &[[f64; 3]; 3]| -> f64 {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    let scale: f64 = m
        .iter()
        .flatten()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(1.0);
    if d.abs() <= 1e-12 * scale.powi(3) {
        return None;
    }
    let mut out = [0.0; 3];
    for col in 0..3 {
        let mut mc = *m;
        for row in 0..3 {
            mc[row][col] = b[row];
        }
        out[col] = det(&mc) / d;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::is_feasible;

    pub(crate) fn base_sym() -> SymmetricInstance {
        SymmetricInstance {
            num_tasks: 10,
            num_devices: 4,
            input_bits: 1e7,
            compute_load: 10.0,
            output_bits: 2e7,
            cache_bits: 0.3 * 10.0 * 2e7,
            avg_energy: 0.0,
            cpu_freq: 1.1e11,
            energy_coeff: 1e-27,
            deadline: 0.02,
            inv_spectral_eff: 0.1,
        }
    }

    fn with_beta_e(mut sym: SymmetricInstance, beta_e: f64) -> SymmetricInstance {
        sym.avg_energy = beta_e
            * sym.energy_coeff
            * sym.input_bits
            * sym.compute_load
            * sym.cpu_freq
            * sym.cpu_freq;
        sym
    }

    #[test]
    fn counts_hand_values() {
        // alpha = 2, beta_c = 0.3, beta_e = 0.4, F = 10 -> (1, 4, 0, 5).
        let sym = with_beta_e(base_sym(), 0.4);
        let c = optimal_counts(&sym);
        assert!((c.n1() - 1.0).abs() < 1e-12);
        assert!((c.n2() - 4.0).abs() < 1e-12);
        assert_eq!(c.n3(), 0.0);
        assert!((c.n4() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn small_ratio_counts_use_output_cache_only() {
        let mut sym = with_beta_e(base_sym(), 0.5);
        sym.output_bits = 0.5 * sym.input_bits;
        sym.cache_bits = 0.3 * 10.0 * sym.output_bits;
        let c = optimal_counts(&sym);
        assert!((c.n1() - 3.0).abs() < 1e-12);
        assert_eq!(c.n2(), 0.0);
        assert_eq!(c.n3(), 0.0);
    }

    #[test]
    fn zero_budgets_fetch_everything() {
        let mut sym = base_sym();
        sym.cache_bits = 0.0;
        let c = optimal_counts(&sym);
        assert_eq!(c.n, [0.0, 0.0, 0.0, 10.0]);
    }

    #[test]
    fn closed_form_end_points() {
        let sym = base_sym();
        let f = sym.num_tasks as f64;
        let mec = closed_form_bandwidth(&sym, &RouteCounts { n: [0.0, 0.0, 0.0, f] });
        let hit = 1.0 - (1.0 - 1.0 / f).powi(4);
        let expect = sym.inv_spectral_eff * hit * f * sym.fetch_output_rate();
        assert!((mec - expect).abs() <= 1e-9 * expect);
        let all_cached = closed_form_bandwidth(&sym, &RouteCounts { n: [f, 0.0, 0.0, 0.0] });
        assert_eq!(all_cached, 0.0);
    }

    #[test]
    fn single_device_hit_factor() {
        let mut sym = base_sym();
        sym.num_devices = 1;
        let f = sym.num_tasks as f64;
        let b = closed_form_bandwidth(&sym, &RouteCounts { n: [0.0, 0.0, 0.0, f] });
        let per_request = sym.inv_spectral_eff * sym.fetch_output_rate();
        assert!((b - per_request).abs() <= 1e-9 * b);
    }

    #[test]
    fn gain_hand_values() {
        let mut small = base_sym();
        small.output_bits = 0.5 * small.input_bits;
        small.cache_bits = 0.3 * 10.0 * small.output_bits;
        let (g, regime) = gain_vs_mec(&small);
        assert_eq!(regime, Regime::SmallRatio);
        assert!((g - 0.7).abs() < 1e-12);

        let mut high = with_beta_e(base_sym(), 0.3);
        high.output_bits = 3.0 * high.input_bits;
        high.cache_bits = 0.2 * 10.0 * high.output_bits;
        let (g, regime) = gain_vs_mec(&high);
        assert_eq!(regime, Regime::HighFreq);
        assert!((g - 0.6).abs() < 1e-12);

        let mut bare = base_sym();
        bare.cache_bits = 0.0;
        let (g, _) = gain_vs_mec(&bare);
        assert!((g - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unicast_gain_hand_values() {
        assert!((gain_vs_unicast(10, 1) - 1.0).abs() < 1e-15);
        assert!((gain_vs_unicast(50, 4) - 0.970398).abs() < 1e-6);
        assert!((gain_vs_unicast(10, 4) - 0.85975).abs() < 1e-12);
    }

    #[test]
    fn unicast_gain_improves_with_devices() {
        let mut last = f64::INFINITY;
        for k in 1..=12 {
            let g = gain_vs_unicast(10, k);
            assert!(g <= last + 1e-15);
            last = g;
        }
    }

    #[test]
    fn lp_matches_counts_on_fixture() {
        let sym = with_beta_e(base_sym(), 0.4);
        let (counts, value) = symmetric_lp(&sym);
        assert!((counts.n1() - 1.0).abs() < 1e-9);
        assert!((counts.n2() - 4.0).abs() < 1e-9);
        assert!(counts.n3().abs() < 1e-9);
        let closed = closed_form_bandwidth(&sym, &optimal_counts(&sym));
        assert!((value - closed).abs() <= 1e-9 * closed.max(1.0));
    }

    #[test]
    fn lp_zero_budgets_equal_mec() {
        let mut sym = base_sym();
        sym.cache_bits = 0.0;
        let (counts, value) = symmetric_lp(&sym);
        assert_eq!(counts.n[..3], [0.0, 0.0, 0.0]);
        let f = sym.num_tasks as f64;
        let mec = closed_form_bandwidth(&sym, &RouteCounts { n: [0.0, 0.0, 0.0, f] });
        assert!((value - mec).abs() <= 1e-12 * mec);
    }

    #[test]
    fn lp_agrees_with_counts_across_regimes() {
        for &alpha in &[0.5, 1.0, 1.5, 2.0, 3.0] {
            for &bc in &[0.0, 0.1, 0.25, 0.4] {
                for &be in &[0.0, 0.15, 0.35, 0.6] {
                    for &freq in &[3e10, 9e10, 2e11] {
                        let mut sym = base_sym();
                        sym.output_bits = alpha * sym.input_bits;
                        sym.cache_bits = bc * sym.num_tasks as f64 * sym.output_bits;
                        sym.cpu_freq = freq;
                        let sym = with_beta_e(sym, be);
                        if sym.input_bits * sym.compute_load / sym.cpu_freq > sym.deadline {
                            continue;
                        }
                        let counts = optimal_counts(&sym);
                        if counts.n4() < -1e-9 {
                            continue;
                        }
                        let closed = closed_form_bandwidth(&sym, &counts);
                        let (_, lp_value) = symmetric_lp(&sym);
                        assert!(
                            (closed - lp_value).abs() <= 1e-9 * closed.max(1.0),
                            "alpha {alpha} bc {bc} be {be} f1 {freq}: {closed} vs {lp_value}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn ratio_monotone_in_cache_and_freq() {
        let mut last = f64::INFINITY;
        for &bc in &[0.0, 0.1, 0.2, 0.3, 0.4] {
            let mut sym = with_beta_e(base_sym(), 0.3);
            sym.output_bits = 3.0 * sym.input_bits;
            sym.cache_bits = bc * sym.num_tasks as f64 * sym.output_bits;
            let (g, _) = gain_vs_mec(&sym);
            assert!(g <= last + 1e-12);
            last = g;
        }
        // Faster CPU hurts once energy is the binding resource.
        let mut last = 0.0;
        for &freq in &[9e10, 1.2e11, 1.6e11, 2e11] {
            let mut sym = base_sym();
            sym.output_bits = 3.0 * sym.input_bits;
            sym.cache_bits = 0.2 * sym.num_tasks as f64 * sym.output_bits;
            sym.cpu_freq = freq;
            let sym = with_beta_e(sym, 0.3);
            let (g, regime) = gain_vs_mec(&sym);
            assert_eq!(regime, Regime::HighFreq);
            assert!(g >= last - 1e-12);
            last = g;
        }
        // Ratio is frequency-free for small output/input ratios.
        let mut values = Vec::new();
        for &freq in &[5e10, 1e11, 2e11] {
            let mut sym = base_sym();
            sym.output_bits = 0.5 * sym.input_bits;
            sym.cache_bits = 0.25 * sym.num_tasks as f64 * sym.output_bits;
            sym.cpu_freq = freq;
            values.push(gain_vs_mec(&sym).0);
        }
        assert!(values.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-15));
    }

    #[test]
    fn count_policy_is_feasible() {
        let sym = with_beta_e(base_sym(), 0.4);
        let counts = optimal_counts(&sym);
        let (floored, gap) = counts.floored(sym.num_tasks);
        assert!(!gap);
        let inst = sym.to_instance();
        let policy = sym.policy_from_counts(&floored);
        assert!(is_feasible(&inst, &policy));
    }
}
