use edgecast::*;
use edgecast::instance::Rates;
use edgecast::solver::{binary_descent, SolverConfig};
fn main() {
    let cfg = SolverConfig { max_inner: 400, max_outer: 120, rho_cap_hz: 1e10, ..SolverConfig::default() };
    let (mut eq, mut solver_better, mut descent_better) = (0, 0, 0);
    let (mut sg, mut dg) = (0.0, 0.0);
    for seed in 0..12u64 {
        let inst = edgecast::testutil::random_instance(2, 5, 3.0, 7000 + seed);
        let samples = edgecast::sampling::draw_samples(&inst, 16, seed);
        let rates = Rates::new(&inst);
        let descent = binary_descent(&inst, &rates, &samples, &mec_computing_policy(&inst), 200, true);
        let dv = saa_objective(&inst, &descent, &samples).unwrap();
        let out = solve_cccp_admm(&inst, &samples, &cfg).unwrap();
        let oracle = enumerate_optimal(&inst, OracleObjective::Saa(&samples)).unwrap();
        let sgap = (out.objective_hz - oracle.best_value) / oracle.best_value;
        let dgap = (dv - oracle.best_value) / oracle.best_value;
        sg += sgap; dg += dgap;
        if (sgap - dgap).abs() < 1e-9 { eq += 1; } else if sgap < dgap { solver_better += 1; } else { descent_better += 1; }
        println!("seed {seed}: solver gap {:+.2}% descent-only gap {:+.2}%", sgap*100.0, dgap*100.0);
    }
    println!("solver better: {solver_better}, descent better: {descent_better}, equal: {eq}; mean gaps {:.2}% vs {:.2}%", sg/12.0*100.0, dg/12.0*100.0);
}
