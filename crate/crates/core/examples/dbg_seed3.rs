use edgecast::*;
use edgecast::solver::{SolverConfig, DcState, dc_objective};
fn main() {
    let cfg = SolverConfig { max_inner: 600, max_outer: 40, ..SolverConfig::default() };
    let seed = 3u64;
    let inst = edgecast::testutil::random_instance(2, 2, 3.0, 5000 + seed);
    let samples = edgecast::sampling::draw_samples(&inst, 16, seed);
    let out = solve_cccp_admm(&inst, &samples, &cfg).unwrap();
    println!("devices:");
    for (k, d) in inst.devices.iter().enumerate() {
        println!("  k={k} C={:.3e} E={:.3e} f={:.3e} s={:.3} demand={:?}", d.cache_bits, d.avg_energy, d.cpu_freq, d.inv_spectral_eff, d.demand);
    }
    for (f, t) in inst.catalog.tasks.iter().enumerate() {
        println!("  f={f} I={:.3e} O={:.3e}", t.input_bits, t.output_bits);
    }
    println!("deadline {:.3e}", inst.params.deadline);
    println!("relaxed:");
    for k in 0..2 { for f in 0..2 {
        println!("  x[{k}][{f}] = {:?}", out.relaxed.row(k, f));
    }}
    let dc = dc_objective(&inst, &DcState::from_policy(&inst, &samples, out.relaxed.clone())).unwrap();
    println!("relaxed dc objective {dc:.4e}");
    let oracle = enumerate_optimal(&inst, OracleObjective::Saa(&samples)).unwrap();
    println!("oracle {:.4e} enc {}", oracle.best_value, oracle.best_policy.encode());
    println!("rounded {:.4e} enc {}", out.objective_hz, out.policy.encode());
    for r in out.diagnostics.rows.iter() {
        println!("outer {} inner {} surrogate {:.5e} pen {:.5e} res {:.1e} gap {:.3} rho {:.1e}",
            r.outer_iter, r.inner_iter, r.surrogate_hz, r.penalized_hz, r.consensus_residual, r.binary_gap, r.rho_hz);
    }
}
