use edgecast::*;
use edgecast::solver::SolverConfig;
fn main() {
    let cfg = SolverConfig { max_inner: 600, max_outer: 200, rho_cap_hz: 1e10, ..SolverConfig::default() };
    let mut within = 0; let mut worst = 0.0f64; let mut t_all = std::time::Duration::ZERO;
    for seed in 0..30u64 {
        let inst = edgecast::testutil::random_instance(2, 2, 3.0, 5000 + seed);
        let samples = edgecast::sampling::draw_samples(&inst, 16, seed);
        let t0 = std::time::Instant::now();
        let out = solve_cccp_admm(&inst, &samples, &cfg).unwrap();
        t_all += t0.elapsed();
        let oracle = enumerate_optimal(&inst, OracleObjective::Saa(&samples)).unwrap();
        let gap = (out.objective_hz - oracle.best_value) / oracle.best_value.max(1e-300);
        if gap <= 0.05 { within += 1; } else { println!("  seed {seed}: gap {:+.1}%", gap*100.0); }
        worst = worst.max(gap);
        assert!(out.objective_hz <= out.mec_objective_hz * (1.0+1e-12));
        assert!(out.diagnostics.final_residual <= 1e-5);
    }
    println!("within 5%: {within}/30, worst {:.1}%, total time {:?}", worst*100.0, t_all);
}
