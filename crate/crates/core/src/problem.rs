//! Domain types for 0-1 mixed problems and the interface every solver consumes.
//!
//! A problem has a binary assignment matrix `x` (N rows, M columns, exactly one
//! `1` per row) and a nonnegative continuous allocation `y` of the same shape.
//! Objectives are always in the maximization sense; minimization problems are
//! expressed by negating their objective.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relax::{self, RelaxConfig, RelaxedSolution};

/// Absolute tolerance on constraint residuals for a solution to count as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemDims {
    /// N: users or tasks, one decision row each.
    pub n_rows: usize,
    /// M: stations or choices per row.
    pub n_cols: usize,
    /// L: number of general constraints `g_l <= 0`.
    pub n_constraints: usize,
}

impl ProblemDims {
    pub fn new(n_rows: usize, n_cols: usize, n_constraints: usize) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::Dimension(format!(
                "need at least one row and one column, got {n_rows}x{n_cols}"
            )));
        }
        Ok(Self {
            n_rows,
            n_cols,
            n_constraints,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    /// log2 of the number of complete assignments, `N * log2(M)`.
    pub fn assignments_log2(&self) -> f64 {
        self.n_rows as f64 * (self.n_cols as f64).log2()
    }
}

/// A complete row-exclusive binary assignment, stored as one column index per row.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinaryAssignment {
    columns: Vec<usize>,
    n_cols: usize,
}

impl BinaryAssignment {
    pub fn new(columns: Vec<usize>, n_cols: usize) -> Result<Self> {
        if columns.is_empty() || n_cols == 0 {
            return Err(Error::Dimension("empty assignment".into()));
        }
        if let Some(&bad) = columns.iter().find(|&&c| c >= n_cols) {
            return Err(Error::Index {
                index: bad,
                limit: n_cols,
            });
        }
        Ok(Self { columns, n_cols })
    }

    /// Reads a 0/1 matrix, rejecting anything that is not one-hot per row.
    pub fn from_matrix(x: &Array2<f64>) -> Result<Self> {
        let (n, m) = x.dim();
        let mut columns = Vec::with_capacity(n);
        for row in x.rows() {
            let mut chosen = None;
            for (j, &v) in row.iter().enumerate() {
                if v == 1.0 {
                    if chosen.is_some() {
                        return Err(Error::Dimension("row selects more than one column".into()));
                    }
                    chosen = Some(j);
                } else if v != 0.0 {
                    return Err(Error::Dimension(format!("entry {v} is not binary")));
                }
            }
            columns.push(chosen.ok_or_else(|| Error::Dimension("row has no selection".into()))?);
        }
        Self::new(columns, m)
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.columns.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn column_of(&self, row: usize) -> usize {
        self.columns[row]
    }

    pub fn to_matrix(&self) -> Array2<f64> {
        let mut x = Array2::zeros((self.columns.len(), self.n_cols));
        for (i, &j) in self.columns.iter().enumerate() {
            x[[i, j]] = 1.0;
        }
        x
    }

    /// Rows assigned to `col`, in increasing order.
    pub fn rows_of(&self, col: usize) -> impl Iterator<Item = usize> + '_ {
        self.columns
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == col)
            .map(|(i, _)| i)
    }

    /// Frobenius distance between this assignment and a real matrix of the same shape.
    pub fn distance_to(&self, other: &Array2<f64>) -> f64 {
        let x = self.to_matrix();
        (&x - other).mapv(|v| v * v).sum().sqrt()
    }
}

/// A relaxed assignment: every row lies on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedAssignment(Array2<f64>);

impl RelaxedAssignment {
    pub const ROW_SUM_TOL: f64 = 1e-8;

    pub fn new(x: Array2<f64>) -> Result<Self> {
        for row in x.rows() {
            if row.iter().any(|&v| !(-Self::ROW_SUM_TOL..=1.0 + Self::ROW_SUM_TOL).contains(&v)) {
                return Err(Error::Dimension("relaxed entry outside [0, 1]".into()));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > Self::ROW_SUM_TOL {
                return Err(Error::Dimension(format!("relaxed row sums to {s}")));
            }
        }
        Ok(Self(x))
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.0.row(i).to_vec()
    }

    /// Row-wise argmax, lowest index on ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.0.rows().into_iter().map(|r| argmax(r.iter().copied())).collect()
    }
}

/// Nonnegative continuous allocation `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousAllocation(Array2<f64>);

impl ContinuousAllocation {
    pub fn new(y: Array2<f64>) -> Result<Self> {
        if y.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Dimension("allocation entries must be nonnegative".into()));
        }
        Ok(Self(y))
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self(Array2::zeros((n_rows, n_cols)))
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Column choices of the decided prefix rows; the identity of a search state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(Box<[u16]>);

impl StateKey {
    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().map(|&c| c as usize)
    }
}

/// Partial assignment with rows `0..depth` decided and the rest undecided.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SearchState {
    n_rows: usize,
    n_cols: usize,
    prefix: Vec<usize>,
}

impl SearchState {
    /// The all-zero initial state.
    pub fn initial(dims: ProblemDims) -> Self {
        Self {
            n_rows: dims.n_rows,
            n_cols: dims.n_cols,
            prefix: Vec::with_capacity(dims.n_rows),
        }
    }

    pub fn from_prefix(dims: ProblemDims, prefix: Vec<usize>) -> Result<Self> {
        if prefix.len() > dims.n_rows {
            return Err(Error::Dimension("prefix longer than the number of rows".into()));
        }
        if let Some(&bad) = prefix.iter().find(|&&c| c >= dims.n_cols) {
            return Err(Error::Index {
                index: bad,
                limit: dims.n_cols,
            });
        }
        Ok(Self {
            n_rows: dims.n_rows,
            n_cols: dims.n_cols,
            prefix,
        })
    }

    pub fn depth(&self) -> usize {
        self.prefix.len()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn prefix(&self) -> &[usize] {
        &self.prefix
    }

    pub fn is_terminal(&self) -> bool {
        self.prefix.len() == self.n_rows
    }

    /// Extends the state by deciding row `depth` as column `action_col`.
    pub fn apply_action(&self, action_col: usize) -> Result<SearchState> {
        let mut next = self.clone();
        next.push(action_col)?;
        Ok(next)
    }

    /// In-place version of [`SearchState::apply_action`].
    pub fn push(&mut self, action_col: usize) -> Result<()> {
        if self.is_terminal() {
            return Err(Error::TerminalState);
        }
        if action_col >= self.n_cols {
            return Err(Error::Index {
                index: action_col,
                limit: self.n_cols,
            });
        }
        self.prefix.push(action_col);
        Ok(())
    }

    pub fn key(&self) -> StateKey {
        StateKey(self.prefix.iter().map(|&c| c as u16).collect())
    }

    /// Fixings in the form relaxation solvers take: `Some(col)` for decided rows.
    pub fn fixings(&self) -> Vec<Option<usize>> {
        let mut f: Vec<Option<usize>> = self.prefix.iter().map(|&c| Some(c)).collect();
        f.resize(self.n_rows, None);
        f
    }

    /// The N x M matrix form: one-hot decided rows, zero rows afterwards.
    pub fn matrix(&self) -> Array2<f64> {
        let mut s = Array2::zeros((self.n_rows, self.n_cols));
        for (i, &j) in self.prefix.iter().enumerate() {
            s[[i, j]] = 1.0;
        }
        s
    }

    pub fn to_assignment(&self) -> Result<BinaryAssignment> {
        if !self.is_terminal() {
            return Err(Error::Dimension(format!(
                "state has depth {} of {}",
                self.depth(),
                self.n_rows
            )));
        }
        BinaryAssignment::new(self.prefix.clone(), self.n_cols)
    }
}

/// Free-function form of [`SearchState::key`].
pub fn state_key(state: &SearchState) -> StateKey {
    state.key()
}

/// Free-function form of [`SearchState::apply_action`].
pub fn apply_action(state: &SearchState, action_col: usize) -> Result<SearchState> {
    state.apply_action(action_col)
}

pub fn is_terminal(state: &SearchState) -> bool {
    state.is_terminal()
}

/// A separable capacity constraint `sum_i demand[i, j] * x[i, j] <= capacity[j]`.
///
/// Every feasible binary solution must satisfy it, and it must also hold for
/// the decided rows of any relaxed-feasible point. Arc-consistency pruning
/// relies on both.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityConstraint {
    pub demand: Array2<f64>,
    pub capacity: Vec<f64>,
}

/// Result of the inner continuous solve for a fixed binary assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub allocation: ContinuousAllocation,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct SolutionRecord {
    pub binary: BinaryAssignment,
    pub continuous: ContinuousAllocation,
    pub objective: f64,
    /// `objective / root_bound`.
    pub normalized: f64,
    pub feasible: bool,
}

impl SolutionRecord {
    /// Checks the record against the problem's residuals and computes its normalized value.
    pub fn evaluate<P: MixedProblem + ?Sized>(
        problem: &P,
        binary: BinaryAssignment,
        inner: InnerSolution,
        root_bound: f64,
    ) -> Self {
        let x = binary.to_matrix();
        let feasible = inner.objective.is_finite()
            && problem
                .constraint_residuals(&x, inner.allocation.matrix())
                .iter()
                .all(|&g| g <= FEASIBILITY_TOL);
        Self {
            normalized: normalize(inner.objective, root_bound),
            binary,
            continuous: inner.allocation,
            objective: inner.objective,
            feasible,
        }
    }
}

/// Ratio of an objective to the root relaxation bound, in `(0, 1]` for valid bounds.
///
/// For a positive bound this is `objective / bound`. Log-utility objectives can
/// be negative everywhere; with a negative bound the ratio is taken the other
/// way round, `bound / objective`, so that it still reads "closer to 1 is
/// better" and stays in `(0, 1]`.
pub fn normalize(objective: f64, root_bound: f64) -> f64 {
    if root_bound >= 0.0 {
        objective / root_bound
    } else if objective < 0.0 {
        root_bound / objective
    } else {
        f64::INFINITY
    }
}

impl fmt::Display for SolutionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "objective {:.6} (normalized {:.4}){}",
            self.objective,
            self.normalized,
            if self.feasible { "" } else { " INFEASIBLE" }
        )
    }
}

/// A 0-1 mixed problem `max f(x, y) s.t. g_l(x, y) <= 0`, row-exclusive binary `x`.
///
/// `objective` and `constraint_residuals` are defined on the relaxed domain so
/// that relaxation solvers can evaluate fractional `x`. Implementations must be
/// re-entrant: no interior mutation during evaluation.
pub trait MixedProblem: Send + Sync {
    fn dims(&self) -> ProblemDims;

    fn objective(&self, x: &Array2<f64>, y: &Array2<f64>) -> f64;

    /// `g_l(x, y)` for every constraint; feasible iff all are `<= 0`.
    fn constraint_residuals(&self, x: &Array2<f64>, y: &Array2<f64>) -> Vec<f64>;

    /// Partial derivatives of the objective in `x` and `y`.
    fn objective_gradient(&self, x: &Array2<f64>, y: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        numeric_gradient(|xx, yy| self.objective(xx, yy), x, y)
    }

    /// `sum_l weights[l] * grad g_l(x, y)`.
    fn constraint_vjp(
        &self,
        x: &Array2<f64>,
        y: &Array2<f64>,
        weights: &[f64],
    ) -> (Array2<f64>, Array2<f64>) {
        numeric_gradient(
            |xx, yy| {
                self.constraint_residuals(xx, yy)
                    .iter()
                    .zip(weights)
                    .map(|(g, w)| g * w)
                    .sum()
            },
            x,
            y,
        )
    }

    /// Upper bounds on each `y` entry used by relaxation solvers (may be infinite).
    fn allocation_upper(&self) -> Array2<f64> {
        Array2::from_elem(self.dims().shape(), f64::INFINITY)
    }

    /// `y' = argmax_y f(y | x)` subject to the general constraints.
    fn inner_solve(&self, x: &BinaryAssignment) -> Result<InnerSolution>;

    /// Solves the relaxation with the given rows fixed to one-hot columns.
    fn relaxed_solve(&self, fixed: &[Option<usize>], cfg: &RelaxConfig) -> Result<RelaxedSolution> {
        relax::solve_relaxed(self, fixed, cfg)
    }

    /// Same as [`MixedProblem::relaxed_solve`], optionally starting from a nearby solution.
    fn relaxed_solve_warm(
        &self,
        fixed: &[Option<usize>],
        cfg: &RelaxConfig,
        _warm: Option<&RelaxedSolution>,
    ) -> Result<RelaxedSolution> {
        self.relaxed_solve(fixed, cfg)
    }

    /// Capacity-type constraints usable for sound arc-consistency pruning.
    fn capacities(&self) -> &[CapacityConstraint] {
        &[]
    }

    /// Extra problem-specific sufficient feasibility check; `false` prunes the action.
    fn consistency_hint(&self, _state: &SearchState, _action_col: usize) -> bool {
        true
    }
}

impl<P: MixedProblem + ?Sized> MixedProblem for &P {
    fn dims(&self) -> ProblemDims {
        (**self).dims()
    }
    fn objective(&self, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        (**self).objective(x, y)
    }
    fn constraint_residuals(&self, x: &Array2<f64>, y: &Array2<f64>) -> Vec<f64> {
        (**self).constraint_residuals(x, y)
    }
    fn objective_gradient(&self, x: &Array2<f64>, y: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        (**self).objective_gradient(x, y)
    }
    fn constraint_vjp(
        &self,
        x: &Array2<f64>,
        y: &Array2<f64>,
        weights: &[f64],
    ) -> (Array2<f64>, Array2<f64>) {
        (**self).constraint_vjp(x, y, weights)
    }
    fn allocation_upper(&self) -> Array2<f64> {
        (**self).allocation_upper()
    }
    fn inner_solve(&self, x: &BinaryAssignment) -> Result<InnerSolution> {
        (**self).inner_solve(x)
    }
    fn relaxed_solve(&self, fixed: &[Option<usize>], cfg: &RelaxConfig) -> Result<RelaxedSolution> {
        (**self).relaxed_solve(fixed, cfg)
    }
    fn relaxed_solve_warm(
        &self,
        fixed: &[Option<usize>],
        cfg: &RelaxConfig,
        warm: Option<&RelaxedSolution>,
    ) -> Result<RelaxedSolution> {
        (**self).relaxed_solve_warm(fixed, cfg, warm)
    }
    fn capacities(&self) -> &[CapacityConstraint] {
        (**self).capacities()
    }
    fn consistency_hint(&self, state: &SearchState, action_col: usize) -> bool {
        (**self).consistency_hint(state, action_col)
    }
}

/// Central differences with step `h = 1e-6 * max(1, |z|)` on every entry of `x` and `y`.
pub fn numeric_gradient<F>(f: F, x: &Array2<f64>, y: &Array2<f64>) -> (Array2<f64>, Array2<f64>)
where
    F: Fn(&Array2<f64>, &Array2<f64>) -> f64,
{
    let mut xw = x.clone();
    let mut yw = y.clone();
    let mut gx = Array2::zeros(x.dim());
    let mut gy = Array2::zeros(y.dim());
    for idx in ndarray::indices(x.dim()) {
        let z = x[idx];
        let h = 1e-6 * z.abs().max(1.0);
        xw[idx] = z + h;
        let up = f(&xw, &yw);
        xw[idx] = z - h;
        let down = f(&xw, &yw);
        xw[idx] = z;
        gx[idx] = (up - down) / (2.0 * h);
    }
    for idx in ndarray::indices(y.dim()) {
        let z = y[idx];
        let h = 1e-6 * z.abs().max(1.0);
        yw[idx] = z + h;
        let up = f(&xw, &yw);
        yw[idx] = z - h;
        let down = f(&xw, &yw);
        yw[idx] = z;
        gy[idx] = (up - down) / (2.0 * h);
    }
    (gx, gy)
}

/// Index of the largest value, lowest index on ties.
pub fn argmax<I: IntoIterator<Item = f64>>(values: I) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn dims(n: usize, m: usize) -> ProblemDims {
        ProblemDims::new(n, m, 0).unwrap()
    }

    #[test]
    fn apply_action_sets_one_hot_row() {
        let s0 = SearchState::initial(dims(2, 2));
        let s1 = s0.apply_action(1).unwrap();
        assert_eq!(s1.depth(), 1);
        assert_eq!(s1.matrix().row(0).to_vec(), vec![0.0, 1.0]);
        assert_eq!(s1.matrix().row(1).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn apply_action_reaches_terminal() {
        let s = SearchState::from_prefix(dims(2, 2), vec![0]).unwrap();
        let t = s.apply_action(0).unwrap();
        assert!(t.is_terminal());
        assert_eq!(t.matrix(), ndarray::array![[1.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn apply_action_errors() {
        let t = SearchState::from_prefix(dims(1, 2), vec![1]).unwrap();
        assert!(matches!(t.apply_action(0), Err(Error::TerminalState)));
        let s0 = SearchState::initial(dims(1, 2));
        assert!(matches!(s0.apply_action(2), Err(Error::Index { index: 2, limit: 2 })));
    }

    fn enumerate_terminals(n: usize, m: usize) -> Vec<SearchState> {
        let mut frontier = vec![SearchState::initial(dims(n, m))];
        for _ in 0..n {
            frontier = frontier
                .iter()
                .flat_map(|s| (0..m).map(move |a| s.apply_action(a).unwrap()))
                .collect();
        }
        frontier
    }

    #[test]
    fn all_action_sequences_give_distinct_valid_assignments() {
        let terminals = enumerate_terminals(3, 2);
        assert_eq!(terminals.len(), 8);
        let distinct: HashSet<_> = terminals.iter().map(|s| s.key()).collect();
        assert_eq!(distinct.len(), 8);
        for t in &terminals {
            let x = t.matrix();
            let b = BinaryAssignment::from_matrix(&x).unwrap();
            assert_eq!(b.to_matrix(), x);
        }
    }

    #[test]
    fn terminal_count_is_m_pow_n() {
        for (n, m) in [(4, 3), (2, 4), (8, 2), (5, 2)] {
            let terminals = enumerate_terminals(n, m);
            let distinct: HashSet<_> = terminals.iter().map(|s| s.key()).collect();
            assert_eq!(distinct.len(), m.pow(n as u32));
        }
    }

    #[test]
    fn state_keys() {
        let d = dims(2, 2);
        let s0 = SearchState::initial(d);
        assert_eq!(state_key(&s0), state_key(&SearchState::initial(d)));
        assert_ne!(s0.apply_action(0).unwrap().key(), s0.apply_action(1).unwrap().key());

        let mut keys = HashSet::new();
        let mut frontier = vec![s0];
        while let Some(s) = frontier.pop() {
            keys.insert(s.key());
            if !s.is_terminal() {
                frontier.extend((0..2).map(|a| s.apply_action(a).unwrap()));
            }
        }
        assert_eq!(keys.len(), 7);
    }

    #[test]
    fn terminal_predicate() {
        let d = dims(3, 2);
        assert!(!is_terminal(&SearchState::initial(d)));
        assert!(!SearchState::from_prefix(d, vec![0, 1]).unwrap().is_terminal());
        assert!(SearchState::from_prefix(d, vec![0, 1, 1]).unwrap().is_terminal());
    }

    #[test]
    fn binary_from_matrix_rejects_non_exclusive_rows() {
        let bad = ndarray::array![[1.0, 1.0], [0.0, 1.0]];
        assert!(BinaryAssignment::from_matrix(&bad).is_err());
        let half = ndarray::array![[0.5, 0.5]];
        assert!(BinaryAssignment::from_matrix(&half).is_err());
    }

    #[test]
    fn relaxed_assignment_validates_rows() {
        assert!(RelaxedAssignment::new(ndarray::array![[0.25, 0.75]]).is_ok());
        assert!(RelaxedAssignment::new(ndarray::array![[0.5, 0.6]]).is_err());
        assert!(RelaxedAssignment::new(ndarray::array![[1.5, -0.5]]).is_err());
    }

    #[test]
    fn numeric_gradient_of_quadratic() {
        let x = ndarray::array![[0.3, 0.7]];
        let y = ndarray::array![[2.0, 1.0]];
        let (gx, gy) = numeric_gradient(|x, y| (x * x).sum() + (y * x).sum(), &x, &y);
        assert!((gx[[0, 0]] - (0.6 + 2.0)).abs() < 1e-8);
        assert!((gx[[0, 1]] - (1.4 + 1.0)).abs() < 1e-8);
        assert!((gy[[0, 0]] - 0.3).abs() < 1e-8);
    }
}
