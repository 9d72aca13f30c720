use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relaxrl::zoo::{gen_sp1, gen_sp2, LinkBudgetParams, Sp1Params};
use relaxrl::{MixedProblem, RelaxConfig};

fn profile<P: MixedProblem>(name: &str, p: &P) {
    let cfg = RelaxConfig::default();
    let (n, m) = p.dims().shape();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut fixed = vec![None; n];
    let mut warm = None;
    for depth in 0..n {
        let t = Instant::now();
        let res = p.relaxed_solve_warm(&fixed, &cfg, warm.as_ref());
        let ms = t.elapsed().as_secs_f64() * 1e3;
        match &res {
            Ok(s) if depth % (n / 8).max(1) == 0 => println!(
                "{name} depth {depth}: {ms:.2} ms, iters {}, value {:.6}, bound {:.6}, converged {}",
                s.iterations, s.value, s.bound, s.converged
            ),
            Ok(_) => {}
            Err(e) => println!("{name} depth {depth}: {ms:.2} ms, {e}"),
        }
        warm = res.ok();
        fixed[depth] = Some(rng.random_range(0..m));
    }
}

fn main() {
    profile("sp1", &gen_sp1(20, 5, 1, &Sp1Params::default()).unwrap());
    let link = LinkBudgetParams::default();
    profile("sp2 q0.5", &gen_sp2(90, 10, &link, 0.5, 0).unwrap());
    profile("sp2 q0.1", &gen_sp2(70, 10, &link, 0.1, 0).unwrap());
}
