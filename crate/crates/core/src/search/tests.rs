use ndarray::{array, Array2};

use super::*;
use crate::baselines::oracle_enumerate;
use crate::problem::{ProblemDims, StateKey};
use crate::zoo::sp1::{gen_sp1, Sp1Instance, Sp1Params};

fn two_by_two() -> Sp1Instance {
    Sp1Instance::new(
        array![[2.0, 0.5], [0.7, 1.5]],
        array![[1.0, 0.2], [0.3, 1.0]],
        array![[0.5, 0.5], [0.5, 0.5]],
        vec![1.0, 1.0],
        vec![1.0, 1.0],
        false,
    )
    .unwrap()
}

fn single_row(s: &[f64]) -> Sp1Instance {
    let m = s.len();
    Sp1Instance::new(
        Array2::from_shape_vec((1, m), s.to_vec()).unwrap(),
        Array2::zeros((1, m)),
        Array2::from_elem((1, m), 0.1),
        vec![1.0; m],
        vec![1.0; m],
        false,
    )
    .unwrap()
}

fn one_step_episode(state_key: StateKey, action: usize, objective: f64) -> Episode {
    let dims = ProblemDims::new(1, 2, 0).unwrap();
    let state = SearchState::from_prefix(dims, vec![action]).unwrap();
    Episode {
        visited: vec![(state_key, action)],
        end: EpisodeEnd::Terminal { state, objective },
        reward: objective,
    }
}

#[test]
fn terminal_update_moves_halfway_to_target() {
    let dims = ProblemDims::new(1, 2, 0).unwrap();
    let key = SearchState::initial(dims).key();
    let mut table = ValueTable::new(2);
    table.insert(key.clone(), vec![0.5, 0.5]).unwrap();
    let cfg = SearchConfig::default();
    update_values(&mut table, &one_step_episode(key.clone(), 0, 2.0), &cfg, 2.0);
    assert!((table.values(&key).unwrap()[0] - 0.75).abs() < 1e-12);
    assert_eq!(table.values(&key).unwrap()[1], 0.5);
}

#[test]
fn dead_end_lowers_every_visited_value() {
    let dims = ProblemDims::new(2, 2, 0).unwrap();
    let s0 = SearchState::initial(dims);
    let s1 = s0.apply_action(1).unwrap();
    let mut table = ValueTable::new(2);
    table.insert(s0.key(), vec![0.4, 0.6]).unwrap();
    table.insert(s1.key(), vec![0.3, 0.7]).unwrap();
    let end_state = s1.apply_action(0).unwrap();
    let episode = Episode {
        visited: vec![(s0.key(), 1), (s1.key(), 0)],
        end: EpisodeEnd::DeadEnd { state: end_state },
        reward: -1.0,
    };
    update_values(&mut table, &episode, &SearchConfig::default(), 1.0);
    assert!(table.values(&s1.key()).unwrap()[0] < 0.3);
    assert!(table.values(&s0.key()).unwrap()[1] < 0.6);
}

#[test]
fn repeated_rewards_approach_target_monotonically() {
    let dims = ProblemDims::new(1, 2, 0).unwrap();
    let key = SearchState::initial(dims).key();
    let mut table = ValueTable::new(2);
    table.insert(key.clone(), vec![0.2, 0.8]).unwrap();
    let cfg = SearchConfig::default();
    let mut last = 0.2;
    for _ in 0..5 {
        update_values(&mut table, &one_step_episode(key.clone(), 0, 1.0), &cfg, 1.0);
        let v = table.values(&key).unwrap()[0];
        assert!(v >= last && v <= 1.0);
        last = v;
    }
}

#[test]
fn pruned_entries_are_never_updated() {
    let dims = ProblemDims::new(1, 2, 0).unwrap();
    let key = SearchState::initial(dims).key();
    let mut table = ValueTable::new(2);
    table.insert(key.clone(), vec![-1.0, 1.0]).unwrap();
    update_values(&mut table, &one_step_episode(key.clone(), 0, 1.0), &SearchConfig::default(), 1.0);
    assert_eq!(table.values(&key).unwrap()[0], -1.0);
}

#[test]
fn prior_is_cached() {
    let p = two_by_two();
    let cfg = SearchConfig::default();
    let mut table = ValueTable::new(2);
    let s0 = SearchState::initial(p.dims());
    let first = lazy_prior(&p, &mut table, &s0, &cfg, PriorSource::Relaxed).unwrap();
    let solves = table.relax_solves();
    let second = lazy_prior(&p, &mut table, &s0, &cfg, PriorSource::Relaxed).unwrap();
    assert_eq!(first, second);
    assert_eq!(table.relax_solves(), solves);
    assert!((first.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(first.iter().all(|&v| v >= 0.0));
}

#[test]
fn symmetric_columns_give_even_prior() {
    let p = Sp1Instance::new(
        array![[1.0, 1.0], [0.5, 0.5]],
        array![[1.0, 1.0], [1.0, 1.0]],
        array![[0.2, 0.2], [0.2, 0.2]],
        vec![1.0, 1.0],
        vec![1.0, 1.0],
        false,
    )
    .unwrap();
    let mut table = ValueTable::new(2);
    let prior = lazy_prior(&p, &mut table, &SearchState::initial(p.dims()), &SearchConfig::default(), PriorSource::Relaxed)
        .unwrap();
    assert!((prior[0] - 0.5).abs() < 1e-3, "{prior:?}");
}

#[test]
fn saturated_prefix_prunes_every_action() {
    // the first row fills both columns' capacity
    let p = Sp1Instance::new(
        array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]],
        array![[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
        array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]],
        vec![1.0, 1.0],
        vec![1.0, 1.0],
        false,
    )
    .unwrap();
    let mut table = ValueTable::new(2);
    let state = SearchState::from_prefix(p.dims(), vec![0, 1]).unwrap();
    let prior = lazy_prior(&p, &mut table, &state, &SearchConfig::default(), PriorSource::Relaxed).unwrap();
    assert_eq!(prior, vec![-1.0, -1.0]);
}

#[test]
fn cache_limit_falls_back_to_uniform() {
    let p = two_by_two();
    let cfg = SearchConfig {
        prior_cache_limit: 0,
        ..SearchConfig::default()
    };
    let mut table = ValueTable::new(2);
    let prior = lazy_prior(&p, &mut table, &SearchState::initial(p.dims()), &cfg, PriorSource::Relaxed).unwrap();
    assert_eq!(prior, vec![0.5, 0.5]);
    assert_eq!(table.prior_fallbacks(), 1);
    assert_eq!(table.relax_solves(), 0);
}

#[test]
fn one_by_one_episode_returns_inner_value() {
    let p = single_row(&[3.0]);
    let mut table = ValueTable::new(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ep = run_episode(&p, &mut table, &SearchConfig::default(), &mut rng, PriorSource::Relaxed).unwrap();
    let expected = p.inner_solve(&crate::BinaryAssignment::new(vec![0], 1).unwrap()).unwrap().objective;
    assert!((ep.reward - expected).abs() < 1e-12);
    assert_eq!(ep.visited.len(), 1);
}

#[test]
fn infeasible_instance_only_yields_dead_ends() {
    let p = Sp1Instance::new(
        array![[1.0, 1.0], [1.0, 1.0]],
        array![[0.0, 0.0], [0.0, 0.0]],
        array![[0.5, 0.5], [0.5, 0.5]],
        vec![0.0, 0.0],
        vec![1.0, 1.0],
        false,
    )
    .unwrap();
    let cfg = SearchConfig::default();
    let mut table = ValueTable::new(2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let ep = run_episode(&p, &mut table, &cfg, &mut rng, PriorSource::Uniform).unwrap();
        assert!(ep.is_dead_end());
        assert_eq!(ep.reward, -1.0);
    }
}

#[test]
fn episodes_are_deterministic_per_seed() {
    let p = gen_sp1(4, 3, 5, &Sp1Params::default()).unwrap();
    let cfg = SearchConfig::default();
    let run = || {
        let mut table = ValueTable::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ep = run_episode(&p, &mut table, &cfg, &mut rng, PriorSource::Relaxed).unwrap();
        (ep.visited, ep.reward)
    };
    assert_eq!(run(), run());
}

#[test]
fn single_row_closes_within_m_episodes() {
    let p = single_row(&[0.3, 2.0, 1.1, 0.9]);
    for seed in 0..10 {
        let cfg = SearchConfig {
            seed,
            exploration_floor: Some(0.25),
            ..SearchConfig::default()
        };
        let out = solve(&p, &cfg).unwrap();
        assert!(out.trace.steps <= 4, "seed {seed}: {} episodes", out.trace.steps);
        assert_eq!(out.record.binary.columns(), &[1]);
    }
}

#[test]
fn two_by_two_matches_oracle() {
    let p = two_by_two();
    let oracle = oracle_enumerate(&p).unwrap();
    let cfg = SearchConfig {
        max_episodes: 200,
        ..SearchConfig::default()
    };
    let out = solve(&p, &cfg).unwrap();
    assert!((out.record.objective - oracle.record.objective).abs() <= 1e-6);
    assert!(out.trace.is_monotone());
}

#[test]
fn traces_are_deterministic_and_monotone() {
    let p = gen_sp1(5, 3, 11, &Sp1Params::default()).unwrap();
    let cfg = SearchConfig {
        max_episodes: 300,
        seed: 4,
        ..SearchConfig::default()
    };
    let a = solve(&p, &cfg).unwrap();
    let b = solve(&p, &cfg).unwrap();
    let strip = |t: &SolveTrace| t.points.iter().map(|p| (p.step, p.best_objective)).collect::<Vec<_>>();
    assert_eq!(strip(&a.trace), strip(&b.trace));
    assert!(a.trace.is_monotone());
    assert!(a.record.normalized <= 1.0 + 1e-6);
}

#[test]
fn rejects_bad_config() {
    let p = two_by_two();
    let cfg = SearchConfig {
        learning_rate: 0.0,
        ..SearchConfig::default()
    };
    assert!(matches!(solve(&p, &cfg), Err(Error::Config(_))));
}
