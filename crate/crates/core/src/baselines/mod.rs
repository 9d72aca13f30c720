//! Comparison solvers: branch-and-bound, pure RL and exhaustive enumeration.

mod bnb;
mod oracle;

pub use bnb::{branch_and_bound, BnbConfig, BnbOutcome};
pub use oracle::{enumerate_assignments, oracle_enumerate, OracleOutcome, ENUMERATION_LIMIT_BITS};

use crate::error::Result;
use crate::problem::MixedProblem;
use crate::search::{self, PriorSource, SearchConfig, SolveOutcome};

/// The hybrid's search with uniform priors in place of relaxed rows.
///
/// Arc-consistency pruning and every other part of the machinery are shared;
/// the root relaxation is still solved, but only to normalize rewards.
pub fn pure_rl<P: MixedProblem + ?Sized>(problem: &P, cfg: &SearchConfig) -> Result<SolveOutcome> {
    search::run(problem, cfg, PriorSource::Uniform)
}
