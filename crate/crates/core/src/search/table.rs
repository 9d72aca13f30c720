use std::collections::{HashMap, VecDeque};

use super::SearchConfig;
use crate::error::{Error, Result};
use crate::feasibility::{self, PRUNED};
use crate::problem::{MixedProblem, SearchState, StateKey};
use crate::relax::RelaxedSolution;

/// Where a state's value vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// The relaxed row at this state.
    Relaxed,
    /// Uniform, either by choice or because the relaxation budget ran out.
    Uniform,
    /// At least one entry has been moved by a reward.
    Updated,
}

/// How [`lazy_prior`] initializes unseen states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorSource {
    Relaxed,
    Uniform,
}

#[derive(Debug, Clone)]
pub struct ValueEntry {
    pub values: Vec<f64>,
    pub pruned: Vec<bool>,
    /// Actions whose whole subtree has been evaluated.
    pub exhausted: Vec<bool>,
    pub provenance: Provenance,
}

impl ValueEntry {
    fn new(values: Vec<f64>, provenance: Provenance) -> Self {
        let pruned: Vec<bool> = values.iter().map(|&v| v == PRUNED).collect();
        Self {
            exhausted: vec![false; values.len()],
            values,
            pruned,
            provenance,
        }
    }

    /// No action is left to explore below this state.
    pub fn is_closed(&self) -> bool {
        self.pruned.iter().zip(&self.exhausted).all(|(&p, &e)| p || e)
    }

    pub fn best_value(&self) -> Option<f64> {
        self.values
            .iter()
            .zip(&self.pruned)
            .filter(|(_, &p)| !p)
            .map(|(&v, _)| v)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
    }
}

/// Per-state action values keyed by the decided prefix.
#[derive(Debug, Clone)]
pub struct ValueTable {
    n_cols: usize,
    entries: HashMap<StateKey, ValueEntry>,
    relax_solves: usize,
    prior_fallbacks: usize,
}

impl ValueTable {
    pub fn new(n_cols: usize) -> Self {
        Self {
            n_cols,
            entries: HashMap::new(),
            relax_solves: 0,
            prior_fallbacks: 0,
        }
    }

    pub fn get(&self, key: &StateKey) -> Option<&ValueEntry> {
        self.entries.get(key)
    }

    pub fn values(&self, key: &StateKey) -> Option<&[f64]> {
        self.entries.get(key).map(|e| e.values.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn relax_solves(&self) -> usize {
        self.relax_solves
    }

    pub fn prior_fallbacks(&self) -> usize {
        self.prior_fallbacks
    }

    /// Installs a value vector for a state, replacing any previous one.
    pub fn insert(&mut self, key: StateKey, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_cols {
            return Err(Error::Dimension(format!(
                "value vector has {} entries for {} columns",
                values.len(),
                self.n_cols
            )));
        }
        self.entries.insert(key, ValueEntry::new(values, Provenance::Relaxed));
        Ok(())
    }

    fn entry_mut(&mut self, key: &StateKey) -> &mut ValueEntry {
        self.entries.get_mut(key).expect("visited state has an entry")
    }
}

/// Returns the value vector of `state`, creating it from the relaxation on first sight.
pub fn lazy_prior<P: MixedProblem + ?Sized>(
    problem: &P,
    table: &mut ValueTable,
    state: &SearchState,
    cfg: &SearchConfig,
    source: PriorSource,
) -> Result<Vec<f64>> {
    ensure_entry(problem, table, state, cfg, source, None).map(|(e, _)| e.values.clone())
}

/// Creates the entry if needed; also returns the relaxed solution when one was computed.
pub(crate) fn ensure_entry<'t, P: MixedProblem + ?Sized>(
    problem: &P,
    table: &'t mut ValueTable,
    state: &SearchState,
    cfg: &SearchConfig,
    source: PriorSource,
    warm: Option<&RelaxedSolution>,
) -> Result<(&'t ValueEntry, Option<RelaxedSolution>)> {
    if state.is_terminal() {
        return Err(Error::TerminalState);
    }
    let key = state.key();
    if table.entries.contains_key(&key) {
        return Ok((&table.entries[&key], None));
    }
    let m = state.n_cols();
    let uniform = vec![1.0 / m as f64; m];
    let (prior, provenance, solution) = match source {
        PriorSource::Uniform => (uniform, Provenance::Uniform, None),
        PriorSource::Relaxed if table.relax_solves >= cfg.prior_cache_limit => {
            table.prior_fallbacks += 1;
            (uniform, Provenance::Uniform, None)
        }
        PriorSource::Relaxed => {
            table.relax_solves += 1;
            match problem.relaxed_solve_warm(&state.fixings(), &cfg.relax, warm) {
                Ok(sol) => (sol.x_tilde.row(state.depth()), Provenance::Relaxed, Some(sol)),
                Err(Error::Infeasible) => (vec![PRUNED; m], Provenance::Relaxed, None),
                Err(Error::Numerical(_)) => {
                    table.prior_fallbacks += 1;
                    (uniform, Provenance::Uniform, None)
                }
                Err(e) => return Err(e),
            }
        }
    };
    let mut values = match feasibility::prune_row(problem, state, &prior) {
        Ok(v) => v,
        Err(Error::DeadEnd) => vec![PRUNED; m],
        Err(e) => return Err(e),
    };
    if cfg.deep_consistency {
        for (a, v) in values.iter_mut().enumerate() {
            if *v != PRUNED && !feasibility::deep_consistent(problem, state, a, &cfg.relax) {
                *v = PRUNED;
            }
        }
    }
    table.entries.insert(key.clone(), ValueEntry::new(values, provenance));
    Ok((&table.entries[&key], solution))
}

/// How an episode ended.
#[derive(Debug, Clone)]
pub enum EpisodeEnd {
    /// A complete assignment with a feasible inner solution.
    Terminal {
        state: SearchState,
        objective: f64,
    },
    /// Every action was pruned, or the complete assignment had no feasible allocation.
    DeadEnd { state: SearchState },
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub visited: Vec<(StateKey, usize)>,
    pub end: EpisodeEnd,
    /// Raw objective for a feasible terminal, `-1` for a dead end.
    pub reward: f64,
}

impl Episode {
    pub fn is_dead_end(&self) -> bool {
        matches!(self.end, EpisodeEnd::DeadEnd { .. })
    }
}

/// Reward mapped to the value scale: normalized objective, or `-1` at a dead end.
pub fn normalized_reward(episode: &Episode, root_bound: f64) -> f64 {
    match episode.end {
        EpisodeEnd::DeadEnd { .. } => -1.0,
        EpisodeEnd::Terminal { objective, .. } => crate::problem::normalize(objective, root_bound),
    }
}

/// Soft update of every visited action.
///
/// After a feasible terminal the last action moves towards the normalized
/// reward and earlier ones towards `gamma * max V(next state)`. A dead end
/// moves every visited action towards `-1`: the path as a whole failed, and
/// bootstrapping from a sibling's value would hide that.
pub fn update_values(table: &mut ValueTable, episode: &Episode, cfg: &SearchConfig, root_bound: f64) {
    let reward = normalized_reward(episode, root_bound);
    apply_update(table, &episode.visited, reward, episode.is_dead_end(), cfg);
    mark_exhausted(table, &episode.visited);
}

pub(crate) fn apply_update(
    table: &mut ValueTable,
    visited: &[(StateKey, usize)],
    reward: f64,
    dead_end: bool,
    cfg: &SearchConfig,
) {
    for k in (0..visited.len()).rev() {
        let target = if k + 1 == visited.len() || dead_end {
            reward
        } else {
            let next = &table.entries[&visited[k + 1].0];
            cfg.discount * next.best_value().unwrap_or(PRUNED)
        };
        let (key, a) = &visited[k];
        let entry = table.entry_mut(key);
        if !entry.pruned[*a] {
            entry.values[*a] += cfg.learning_rate * (target - entry.values[*a]);
            entry.provenance = Provenance::Updated;
        }
    }
}

fn mark_exhausted(table: &mut ValueTable, visited: &[(StateKey, usize)]) {
    let Some((key, a)) = visited.last() else { return };
    table.entry_mut(key).exhausted[*a] = true;
    for k in (0..visited.len() - 1).rev() {
        if !table.entries[&visited[k + 1].0].is_closed() {
            break;
        }
        let (key, a) = &visited[k];
        table.entry_mut(key).exhausted[*a] = true;
    }
}

/// Finished episodes kept for re-deriving value targets after the normalizing bound changes.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<(Vec<(StateKey, usize)>, Option<f64>)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1024)),
        }
    }

    pub fn push(&mut self, episode: &Episode) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        let objective = match episode.end {
            EpisodeEnd::Terminal { objective, .. } => Some(objective),
            EpisodeEnd::DeadEnd { .. } => None,
        };
        self.items.push_back((episode.visited.clone(), objective));
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Re-applies the stored episodes, oldest first, with rewards normalized by `root_bound`.
    pub fn replay(&self, table: &mut ValueTable, cfg: &SearchConfig, root_bound: f64) {
        for (visited, objective) in &self.items {
            let reward = objective.map_or(-1.0, |o| crate::problem::normalize(o, root_bound));
            apply_update(table, visited, reward, objective.is_none(), cfg);
        }
    }
}
