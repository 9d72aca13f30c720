//! The hybrid solver: episodic search over rows guided by relaxed priors.
//!
//! Each episode walks from the empty assignment to a complete one, sampling
//! every row's column from a policy proportional to that state's values. A
//! state's values start as its relaxed row (with inconsistent actions pruned)
//! and move towards the normalized rewards of episodes passing through it.
//! Subtrees that have been fully evaluated are closed so that small instances
//! terminate once every feasible completion has been seen.

mod policy;
mod table;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{MixedProblem, SearchState, SolutionRecord, FEASIBILITY_TOL};
use crate::relax::RelaxConfig;

pub use policy::{action_distribution, default_floor};
pub use table::{
    lazy_prior, normalized_reward, update_values, Episode, EpisodeEnd, PriorSource, Provenance,
    ReplayBuffer, ValueEntry, ValueTable,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Step size of the value update.
    pub learning_rate: f64,
    /// Discount on bootstrapped interior targets.
    pub discount: f64,
    pub max_episodes: usize,
    /// Wall-clock budget in seconds.
    pub time_limit: f64,
    /// Relaxed solves allowed before new states fall back to uniform priors.
    pub prior_cache_limit: usize,
    /// Minimum per-action probability; `None` means `0.05 / M`.
    pub exploration_floor: Option<f64>,
    pub convergence_window: usize,
    pub convergence_epsilon: f64,
    pub replay_capacity: usize,
    pub seed: u64,
    /// Also prune actions whose relaxation becomes infeasible (one solve per action).
    pub deep_consistency: bool,
    pub relax: RelaxConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            discount: 0.99,
            max_episodes: 50_000,
            time_limit: 500.0,
            prior_cache_limit: 10_000,
            exploration_floor: None,
            convergence_window: 200,
            convergence_epsilon: 1e-4,
            replay_capacity: 10_000,
            seed: 0,
            deep_consistency: false,
            relax: RelaxConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self, n_cols: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config("learning rate must lie in (0, 1]".into()));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::Config("discount must lie in (0, 1]".into()));
        }
        if !(self.time_limit > 0.0) {
            return Err(Error::Config("time limit must be positive".into()));
        }
        if let Some(f) = self.exploration_floor {
            if !(0.0..=1.0 / n_cols as f64).contains(&f) {
                return Err(Error::Config(format!("exploration floor must lie in [0, 1/{n_cols}]")));
            }
        }
        if self.max_episodes == 0 || self.convergence_window == 0 {
            return Err(Error::Config("episode budget and window must be positive".into()));
        }
        self.relax.validate()
    }

    pub fn floor(&self, n_cols: usize) -> f64 {
        self.exploration_floor.unwrap_or_else(|| default_floor(n_cols))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub elapsed_s: f64,
    /// Episode or node count at the time of the point.
    pub step: usize,
    pub best_objective: f64,
    pub best_normalized: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// No significant improvement over the convergence window.
    Converged,
    MaxEpisodes,
    TimeLimit,
    /// Every completion has been evaluated.
    Exhausted,
    /// Branch-and-bound closed every node.
    Completed,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::MaxEpisodes => "max_episodes",
            Termination::TimeLimit => "time_limit",
            Termination::Exhausted => "exhausted",
            Termination::Completed => "completed",
        })
    }
}

/// Best-so-far series of one solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub points: Vec<TracePoint>,
    pub termination: Termination,
    /// Episodes or nodes processed.
    pub steps: usize,
    pub elapsed_s: f64,
    pub relax_solves: usize,
    /// New states that got a uniform prior because the relaxation budget ran out.
    pub prior_fallbacks: usize,
    /// Set when a search that could prove optimality stopped early.
    pub incomplete: bool,
}

impl SolveTrace {
    pub(crate) fn new() -> Self {
        Self {
            points: Vec::new(),
            termination: Termination::MaxEpisodes,
            steps: 0,
            elapsed_s: 0.0,
            relax_solves: 0,
            prior_fallbacks: 0,
            incomplete: false,
        }
    }

    /// True if `best_objective` never decreases along the trace.
    pub fn is_monotone(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].best_objective >= w[0].best_objective)
    }

    pub fn final_normalized(&self) -> Option<f64> {
        self.points.last().map(|p| p.best_normalized)
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub record: SolutionRecord,
    pub trace: SolveTrace,
    pub root_bound: f64,
}

/// Samples one episode from the current table.
pub fn run_episode<P: MixedProblem + ?Sized>(
    problem: &P,
    table: &mut ValueTable,
    cfg: &SearchConfig,
    rng: &mut ChaCha8Rng,
    source: PriorSource,
) -> Result<Episode> {
    let dims = problem.dims();
    let floor = cfg.floor(dims.n_cols);
    let mut state = SearchState::initial(dims);
    let mut visited = Vec::with_capacity(dims.n_rows);
    let mut warm = None;
    while !state.is_terminal() {
        let (entry, solution) = table::ensure_entry(problem, table, &state, cfg, source, warm.as_ref())?;
        if solution.is_some() {
            warm = solution;
        }
        let open: Vec<bool> = entry
            .pruned
            .iter()
            .zip(&entry.exhausted)
            .map(|(&p, &e)| !p && !e)
            .collect();
        let allowed = if open.iter().any(|&a| a) {
            open
        } else {
            entry.pruned.iter().map(|&p| !p).collect()
        };
        let probs = match policy::masked_distribution(&entry.values, &allowed, floor) {
            Ok(p) => p,
            Err(Error::DeadEnd) => {
                return Ok(Episode {
                    visited,
                    end: EpisodeEnd::DeadEnd { state },
                    reward: -1.0,
                })
            }
            Err(e) => return Err(e),
        };
        let action = policy::sample(&probs, rng);
        visited.push((state.key(), action));
        state.push(action)?;
    }
    let assignment = state.to_assignment()?;
    let end = match problem.inner_solve(&assignment) {
        Ok(inner) => {
            let residuals = problem.constraint_residuals(&assignment.to_matrix(), inner.allocation.matrix());
            if inner.objective.is_finite() && residuals.iter().all(|&g| g <= FEASIBILITY_TOL) {
                EpisodeEnd::Terminal {
                    state,
                    objective: inner.objective,
                }
            } else {
                EpisodeEnd::DeadEnd { state }
            }
        }
        Err(Error::Infeasible) => EpisodeEnd::DeadEnd { state },
        Err(e) => return Err(e),
    };
    let reward = match end {
        EpisodeEnd::Terminal { objective, .. } => objective,
        EpisodeEnd::DeadEnd { .. } => -1.0,
    };
    Ok(Episode { visited, end, reward })
}

/// Runs the hybrid solver: relaxation priors, arc-consistency pruning, value-guided episodes.
pub fn solve<P: MixedProblem + ?Sized>(problem: &P, cfg: &SearchConfig) -> Result<SolveOutcome> {
    run(problem, cfg, PriorSource::Relaxed)
}

struct Incumbent {
    record: SolutionRecord,
}

pub(crate) fn run<P: MixedProblem + ?Sized>(
    problem: &P,
    cfg: &SearchConfig,
    source: PriorSource,
) -> Result<SolveOutcome> {
    let dims = problem.dims();
    cfg.validate(dims.n_cols)?;
    let start = Instant::now();
    let root_fixings = vec![None; dims.n_rows];
    let root = match problem.relaxed_solve(&root_fixings, &cfg.relax) {
        Ok(sol) => sol,
        Err(Error::Infeasible) => return Err(Error::InstanceInfeasible),
        Err(e) => return Err(e),
    };
    let root_bound = root.bound;

    let mut table = ValueTable::new(dims.n_cols);
    let root_state = SearchState::initial(dims);
    if source == PriorSource::Relaxed {
        let prior = match crate::feasibility::prune_row(problem, &root_state, &root.x_tilde.row(0)) {
            Ok(v) => v,
            Err(Error::DeadEnd) => vec![crate::feasibility::PRUNED; dims.n_cols],
            Err(e) => return Err(e),
        };
        table.insert(root_state.key(), prior)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = SolveTrace::new();
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    let mut best: Option<Incumbent> = None;
    let mut mark = (f64::NEG_INFINITY, 0usize);
    let root_key = root_state.key();

    if let Some(state) = greedy_rollout(problem, &mut table, cfg, source)? {
        consider(problem, &state, root_bound, &mut best)?;
        if let Some(inc) = &best {
            trace.points.push(TracePoint {
                elapsed_s: start.elapsed().as_secs_f64(),
                step: 0,
                best_objective: inc.record.objective,
                best_normalized: inc.record.normalized,
            });
        }
    }

    let mut episodes = 0;
    let termination = loop {
        if episodes >= cfg.max_episodes {
            break Termination::MaxEpisodes;
        }
        if start.elapsed().as_secs_f64() >= cfg.time_limit {
            break Termination::TimeLimit;
        }
        if table.get(&root_key).is_some_and(|e| e.is_closed()) {
            break Termination::Exhausted;
        }
        let episode = run_episode(problem, &mut table, cfg, &mut rng, source)?;
        episodes += 1;
        update_values(&mut table, &episode, cfg, root_bound);
        replay.push(&episode);

        if let EpisodeEnd::Terminal { state, .. } = &episode.end {
            consider(problem, state, root_bound, &mut best)?;
        }
        if let Some(inc) = &best {
            trace.points.push(TracePoint {
                elapsed_s: start.elapsed().as_secs_f64(),
                step: episodes,
                best_objective: inc.record.objective,
                best_normalized: inc.record.normalized,
            });
            if mark.1 == 0 || inc.record.normalized > mark.0 + cfg.convergence_epsilon {
                mark = (inc.record.normalized, episodes);
            } else if episodes - mark.1 >= cfg.convergence_window {
                break Termination::Converged;
            }
        }
    };

    if let Some(state) = greedy_rollout(problem, &mut table, cfg, source)? {
        let before = best.as_ref().map(|b| b.record.objective);
        consider(problem, &state, root_bound, &mut best)?;
        if let Some(inc) = &best {
            if before != Some(inc.record.objective) {
                trace.points.push(TracePoint {
                    elapsed_s: start.elapsed().as_secs_f64(),
                    step: episodes,
                    best_objective: inc.record.objective,
                    best_normalized: inc.record.normalized,
                });
            }
        }
    }

    trace.termination = termination;
    trace.steps = episodes;
    trace.elapsed_s = start.elapsed().as_secs_f64();
    trace.relax_solves = table.relax_solves() + usize::from(source == PriorSource::Relaxed);
    trace.prior_fallbacks = table.prior_fallbacks();
    match best {
        Some(inc) => Ok(SolveOutcome {
            record: inc.record,
            trace,
            root_bound,
        }),
        None => Err(Error::Exhausted { trace }),
    }
}

fn consider<P: MixedProblem + ?Sized>(
    problem: &P,
    state: &SearchState,
    root_bound: f64,
    best: &mut Option<Incumbent>,
) -> Result<()> {
    let assignment = state.to_assignment()?;
    let inner = match problem.inner_solve(&assignment) {
        Ok(i) => i,
        Err(Error::Infeasible) => return Ok(()),
        Err(e) => return Err(e),
    };
    if best.as_ref().is_some_and(|b| inner.objective <= b.record.objective) {
        return Ok(());
    }
    let record = SolutionRecord::evaluate(problem, assignment, inner, root_bound);
    if record.feasible {
        *best = Some(Incumbent { record });
    }
    Ok(())
}

/// Follows the highest value at every state, lowest column on ties.
fn greedy_rollout<P: MixedProblem + ?Sized>(
    problem: &P,
    table: &mut ValueTable,
    cfg: &SearchConfig,
    source: PriorSource,
) -> Result<Option<SearchState>> {
    let mut state = SearchState::initial(problem.dims());
    while !state.is_terminal() {
        let (entry, _) = table::ensure_entry(problem, table, &state, cfg, source, None)?;
        let mut choice = None;
        for (a, (&v, &p)) in entry.values.iter().zip(&entry.pruned).enumerate() {
            if !p && choice.is_none_or(|(_, bv)| v > bv) {
                choice = Some((a, v));
            }
        }
        match choice {
            Some((a, _)) => state.push(a)?,
            None => return Ok(None),
        }
    }
    Ok(Some(state))
}

#[cfg(test)]
mod tests;
