use edgecast::*;
use edgecast::instance::Rates;
use edgecast::solver::binary_descent;
fn main() {
    let mut within = 0; let mut worst = 0.0f64; let mut sum = 0.0;
    for seed in 0..30u64 {
        let inst = edgecast::testutil::random_instance(2, 2, 3.0, 5000 + seed);
        let samples = edgecast::sampling::draw_samples(&inst, 16, seed);
        let rates = Rates::new(&inst);
        let start = mec_computing_policy(&inst);
        let polished = binary_descent(&inst, &rates, &samples, &start, 50, std::env::args().nth(1).as_deref() == Some("pairs"));
        let v = saa_objective(&inst, &polished, &samples).unwrap();
        let oracle = enumerate_optimal(&inst, OracleObjective::Saa(&samples)).unwrap();
        let gap = (v - oracle.best_value) / oracle.best_value.max(1e-300);
        if gap <= 0.05 { within += 1; }
        worst = worst.max(gap); sum += gap;
    }
    println!("descent-only from MEC: within 5%: {within}/30, worst {:.1}%, mean {:.1}%", worst*100.0, sum/30.0*100.0);
}
