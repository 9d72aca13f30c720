use thiserror::Error;

use crate::search::SolveTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("state is terminal, no further action can be applied")]
    TerminalState,

    #[error("index {index} out of range (limit {limit})")]
    Index { index: usize, limit: usize },

    #[error("dimension error: {0}")]
    Dimension(String),

    /// The (sub)problem admits no feasible point.
    #[error("infeasible")]
    Infeasible,

    /// The root relaxation of an instance is infeasible, so the instance is too.
    #[error("instance is infeasible")]
    InstanceInfeasible,

    #[error("numerical error: {0}")]
    Numerical(String),

    /// Every action at a state has been pruned.
    #[error("dead end: every action is pruned")]
    DeadEnd,

    /// The search budget ran out before any feasible solution was found.
    #[error("budget exhausted after {} trace points without a feasible solution", .trace.points.len())]
    Exhausted { trace: SolveTrace },

    #[error("instance too large to enumerate: {assignments_log2:.1} bits > {limit_bits}")]
    RefusedTooLarge { assignments_log2: f64, limit_bits: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid instance file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
