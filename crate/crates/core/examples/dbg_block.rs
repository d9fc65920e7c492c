use edgecast::solver::{admm_update_locals, AdmmState, SolverContext};
use edgecast::sampling::draw_samples;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let inst = edgecast::testutil::random_instance(2, 2, 3.0, 2000);
    let samples = draw_samples(&inst, 3, 2000);
    let ctx = SolverContext::new(&inst, &samples).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut st = AdmmState::init(&ctx, 1.0, 1e-3);
    for v in st.global.iter_mut() { *v = rng.gen_range(0.0..1.0); }
    for v in st.anchor_x.iter_mut() { *v = rng.gen_range(0.0..1.0); }
    for v in st.anchor_a.iter_mut() { *v = rng.gen_range(0.0..0.5); }
    for v in st.anchor_b.iter_mut() { *v = rng.gen_range(0.0..1.0); }
    st.reset_inner(&ctx);
    for v in st.duals.iter_mut() { *v = rng.gen_range(-0.05..0.05); }

    let pre = st.clone();
    admm_update_locals(&ctx, &mut st).unwrap();

    let (n, f) = (0usize, 1usize);
    let cell = n * ctx.num_tasks + f;
    let bl = ctx.block_len();
    let dt = st.anchor_a[cell] - st.anchor_b[cell];
    // NOTE anchors unchanged by the update; dt from pre == post.
    let dt_pre = pre.anchor_a[cell] - pre.anchor_b[cell];
    let gamma = st.gamma; let rho = st.rho;
    let base: Vec<f64> = (0..ctx.num_devices * 4).map(|i| {
        let (k, j) = (i / 4, i % 4);
        let gi = (k * ctx.num_tasks + f) * 4 + j;
        pre.global[gi] + (rho * (2.0 * pre.anchor_x[gi] - 1.0) - pre.duals[cell * bl + i]) / gamma
    }).collect();
    let reqs = &ctx.requesters[cell];
    println!("reqs {:?} dt {dt} dt_pre {dt_pre}", reqs);
    for &k in reqs {
        println!("k={k} c={} r={} base3={}", ctx.chan[k], ctx.rate3[k*ctx.num_tasks+f], base[k*4+2]);
    }
    let eval2 = |a: f64, b: f64| -> f64 {
        let mut v = (a + b).powi(2) / 4.0 - dt / 2.0 * (a - b);
        for &k in reqs {
            let c = ctx.chan[k];
            let r = ctx.rate3[k * ctx.num_tasks + f];
            let x = base[k * 4 + 2].min(a / c).min(b / r);
            v += gamma / 2.0 * (x - base[k * 4 + 2]).powi(2);
        }
        v
    };
    // 1-D brute over B at the grid-optimal A.
    let a_fix = 0.45333333333333314;
    let mut best = (f64::INFINITY, 0.0);
    for j in 0..400000 {
        let b = -1.0 + 3.0 * j as f64 / 400000.0;
        let v = eval2(a_fix, b);
        if v < best.0 { best = (v, b); }
    }
    println!("at A={a_fix}: brute B* = {} obj {}", best.1, best.0);
}
