use edgecast::*;
use edgecast::solver::SolverConfig;
fn main() {
    let cfg = SolverConfig { max_inner: 600, max_outer: 200, rho_cap_hz: 1e10, ..SolverConfig::default() };
    for seed in 0..8u64 {
        let inst = edgecast::testutil::random_instance(2, 2, 3.0, 5000 + seed);
        let samples = edgecast::sampling::draw_samples(&inst, 16, seed);
        let t0 = std::time::Instant::now();
        let out = solve_cccp_admm(&inst, &samples, &cfg).unwrap();
        let oracle = enumerate_optimal(&inst, OracleObjective::Saa(&samples)).unwrap();
        let gap = (out.objective_hz - oracle.best_value) / oracle.best_value.max(1e-300);
        println!(
            "seed {seed}: solver {:.4e} oracle {:.4e} gap {:+.2}%  mec {:.4e}  [{}] {:?} enc {} vs {}",
            out.objective_hz, oracle.best_value, gap * 100.0, out.mec_objective_hz,
            out.diagnostics.summary(), t0.elapsed(), out.policy.encode(), oracle.best_policy.encode()
        );
    }
}
