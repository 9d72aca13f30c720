use ndarray::{array, Array2};

use relaxrl::baselines::{branch_and_bound, oracle_enumerate, pure_rl, BnbConfig};
use relaxrl::envelope::{EnvelopeProblem, SampledFunction};
use relaxrl::feasibility::PRUNED;
use relaxrl::search::{action_distribution, default_floor, lazy_prior, solve, PriorSource, ValueTable};
use relaxrl::zoo::{gen_sp1, gen_sp2, LinkBudgetParams, Sp1Instance, Sp1Params};
use relaxrl::{MixedProblem, RelaxConfig, SearchConfig, SearchState, Termination};

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * b.abs().max(1.0)
}

#[test]
fn single_row_rl_matches_hybrid() {
    let mut checked = 0;
    for seed in 0..10 {
        let p = gen_sp1(1, 4, seed, &Sp1Params::default()).unwrap();
        let Ok(exact) = oracle_enumerate(&p) else { continue };
        let cfg = SearchConfig { seed, ..SearchConfig::default() };
        let h = solve(&p, &cfg).unwrap();
        let r = pure_rl(&p, &cfg).unwrap();
        assert!(close(h.record.objective, r.record.objective));
        assert!(close(h.record.objective, exact.record.objective));
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn same_seed_same_trace() {
    let p = gen_sp1(8, 3, 4, &Sp1Params::default()).unwrap();
    let cfg = SearchConfig { seed: 11, ..SearchConfig::default() };
    let steps = |t: &relaxrl::SolveTrace| t.points.iter().map(|q| (q.step, q.best_objective)).collect::<Vec<_>>();
    for run in [solve, pure_rl] {
        let a = run(&p, &cfg).unwrap();
        let b = run(&p, &cfg).unwrap();
        assert_eq!(steps(&a.trace), steps(&b.trace));
        assert_eq!(a.record.binary, b.record.binary);
    }
}

#[test]
fn integral_relaxation_is_solved_at_the_root() {
    // the second column is worthless, so every relaxed row is already one-hot
    let s = array![[1.5, 1e-12], [0.8, 1e-12], [2.0, 1e-12]];
    let d = Array2::from_elem((3, 2), 1.0);
    let c = Array2::from_elem((3, 2), 0.1);
    let p = Sp1Instance::new(s, d, c, vec![1.0; 2], vec![1.0; 2], false).unwrap();
    let out = branch_and_bound(&p, &BnbConfig::default()).unwrap();
    assert_eq!(out.nodes, 1);
    assert_eq!(out.record.binary.columns(), &[0, 0, 0]);
    assert!(close(out.record.objective, oracle_enumerate(&p).unwrap().record.objective));
}

#[test]
fn bnb_bounds_never_increase_down_the_tree() {
    for seed in 0..10 {
        let p = gen_sp1(5, 3, seed, &Sp1Params::default()).unwrap();
        if let Ok(out) = branch_and_bound(&p, &BnbConfig::default()) {
            assert!(out.worst_bound_increase <= 1e-6 * out.root_bound.abs().max(1.0), "seed {seed}");
        }
    }
}

#[test]
fn bnb_time_limit_marks_incomplete() {
    let p = gen_sp1(20, 5, 1, &Sp1Params::default()).unwrap();
    let out = branch_and_bound(&p, &BnbConfig { time_limit: 0.2, ..BnbConfig::default() }).unwrap();
    assert!(out.trace.incomplete);
    assert_eq!(out.trace.termination, Termination::TimeLimit);
    assert!(out.trace.is_monotone());
}

#[test]
fn bnb_and_hybrid_agree_on_a_mid_sized_instance() {
    let p = gen_sp1(20, 5, 0, &Sp1Params::default()).unwrap();
    let h = solve(&p, &SearchConfig { time_limit: 30.0, ..SearchConfig::default() }).unwrap();
    let b = branch_and_bound(&p, &BnbConfig { time_limit: 10.0, ..BnbConfig::default() }).unwrap();
    assert!((h.record.normalized - b.record.normalized).abs() <= 0.15);
}

#[test]
fn rl_is_not_materially_better_than_hybrid_on_sp2() {
    let link = LinkBudgetParams::default();
    let (mut h, mut r) = (0.0, 0.0);
    for seed in 0..20 {
        let p = gen_sp2(20, 5, &link, 0.5, seed).unwrap();
        let cfg = SearchConfig { seed, time_limit: 30.0, ..SearchConfig::default() };
        h += solve(&p, &cfg).unwrap().record.normalized / 20.0;
        r += pure_rl(&p, &cfg).unwrap().record.normalized / 20.0;
    }
    assert!(r <= h + 0.02, "rl {r} hybrid {h}");
}

#[test]
fn untrained_policy_favours_the_relaxed_argmax() {
    let p = gen_sp1(6, 3, 5, &Sp1Params::default()).unwrap();
    let cfg = SearchConfig::default();
    let mut table = ValueTable::new(3);
    let dims = p.dims();
    let mut checked = 0;
    for prefix in [vec![], vec![0], vec![1, 2], vec![2, 0, 1], vec![0, 0, 1, 2]] {
        let state = SearchState::from_prefix(dims, prefix).unwrap();
        let prior = lazy_prior(&p, &mut table, &state, &cfg, PriorSource::Relaxed).unwrap();
        let open: Vec<f64> = prior.iter().copied().filter(|&v| v != PRUNED).collect();
        if open.is_empty() || open.iter().all(|&v| (v - open[0]).abs() < 1e-9) {
            continue;
        }
        let probs = action_distribution(&prior, default_floor(3)).unwrap();
        let best = relaxrl::problem::argmax(prior.iter().copied());
        assert!(probs[best] >= 1.0 / 3.0);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn prior_cache_limit_falls_back_to_uniform() {
    let p = gen_sp1(6, 3, 5, &Sp1Params::default()).unwrap();
    let cfg = SearchConfig { prior_cache_limit: 0, max_episodes: 50, ..SearchConfig::default() };
    let out = solve(&p, &cfg).unwrap();
    assert!(out.trace.prior_fallbacks > 0);
}

/// A non-concave bonus for choosing a column, sampled on [0, 1].
fn bonus(scale: f64) -> SampledFunction {
    SampledFunction::sample(0.0, 1.0, 33, move |z| scale * (z * z * z - 0.5 * z * z)).unwrap()
}

#[test]
fn nonconcave_terms_are_solved_through_their_envelopes() {
    for seed in 0..5 {
        let base = gen_sp1(4, 2, seed, &Sp1Params::default()).unwrap();
        let terms = (0..8).map(|k| bonus(0.5 + 0.25 * (k % 3) as f64)).collect();
        let p = EnvelopeProblem::new(base, terms).unwrap();
        let Ok(exact) = oracle_enumerate(&p) else { continue };
        let root = p.relaxed_solve(&[None; 4], &RelaxConfig::default()).unwrap();
        assert!(exact.record.objective <= root.bound + 1e-6);
        let out = solve(&p, &SearchConfig { seed, max_episodes: 500, ..SearchConfig::default() }).unwrap();
        assert!(close(out.record.objective, exact.record.objective), "seed {seed}");
    }
}
