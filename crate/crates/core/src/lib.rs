//! Relaxation-guided reinforcement learning for 0-1 mixed problems.
//!
//! A problem couples a row-exclusive binary assignment `x` with a continuous
//! allocation `y`. Rows are decided one at a time by an episodic tabular
//! search whose value tables start from relaxed solutions; each complete
//! assignment is scored by solving for `y`. Branch-and-bound, pure RL and
//! exhaustive enumeration share the same problem interface.

pub mod analysis;
pub mod baselines;
pub mod bench;
pub mod envelope;
pub mod error;
pub mod feasibility;
pub mod problem;
pub mod relax;
pub mod search;
pub mod zoo;

pub use error::{Error, Result};
pub use problem::{
    BinaryAssignment, CapacityConstraint, ContinuousAllocation, InnerSolution, MixedProblem,
    ProblemDims, RelaxedAssignment, SearchState, SolutionRecord, StateKey, FEASIBILITY_TOL,
};
pub use relax::{RelaxConfig, RelaxedSolution};
pub use search::{SearchConfig, SolveOutcome, SolveTrace, Termination, TracePoint};
