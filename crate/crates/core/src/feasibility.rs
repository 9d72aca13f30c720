//! Arc-consistency pruning over capacity-type constraints.
//!
//! An action is pruned only when no completion of the partial assignment can
//! satisfy some capacity constraint, so pruning never removes a feasible
//! solution. Pruned actions carry the sentinel [`PRUNED`] in value vectors.

use crate::error::{Error, Result};
use crate::problem::{MixedProblem, SearchState, FEASIBILITY_TOL};
use crate::relax::RelaxConfig;

/// Value-vector sentinel for an action that admits no feasible completion.
pub const PRUNED: f64 = -1.0;

/// Remaining capacity per column for each capacity constraint, after the fixed rows.
#[derive(Debug, Clone)]
pub struct BudgetLedger {
    remaining: Vec<Vec<f64>>,
}

impl BudgetLedger {
    pub fn new<P: MixedProblem + ?Sized>(problem: &P, fixed: &[Option<usize>]) -> Self {
        let remaining = problem
            .capacities()
            .iter()
            .map(|cap| {
                let mut left = cap.capacity.clone();
                for (i, f) in fixed.iter().enumerate() {
                    if let Some(j) = *f {
                        left[j] -= cap.demand[[i, j]];
                    }
                }
                left
            })
            .collect();
        Self { remaining }
    }

    pub fn remaining(&self, constraint: usize) -> &[f64] {
        &self.remaining[constraint]
    }

    /// True if some fixed row already overflows a column.
    pub fn overloaded(&self) -> bool {
        self.remaining
            .iter()
            .any(|left| left.iter().any(|&r| r < -FEASIBILITY_TOL))
    }

    /// Whether assigning `row` to `col` leaves a possible completion for the rows in `free`.
    fn admits<P: MixedProblem + ?Sized>(&self, problem: &P, free: &[usize], row: usize, col: usize) -> bool {
        for (cap, left) in problem.capacities().iter().zip(&self.remaining) {
            let mut left = left.clone();
            left[col] -= cap.demand[[row, col]];
            if left[col] < -FEASIBILITY_TOL {
                return false;
            }
            let total: f64 = left.iter().map(|r| r.max(0.0)).sum();
            let mut least = 0.0;
            for &r in free {
                if r == row {
                    continue;
                }
                let fitting = (0..left.len())
                    .filter(|&j| cap.demand[[r, j]] <= left[j] + FEASIBILITY_TOL)
                    .map(|j| cap.demand[[r, j]])
                    .fold(f64::INFINITY, f64::min);
                if fitting.is_infinite() {
                    return false;
                }
                least += fitting;
            }
            if least > total + FEASIBILITY_TOL {
                return false;
            }
        }
        true
    }
}

/// Whether the fixed rows already violate a capacity, so nothing below can be feasible.
pub fn fixed_rows_overloaded<P: MixedProblem + ?Sized>(problem: &P, fixed: &[Option<usize>]) -> bool {
    BudgetLedger::new(problem, fixed).overloaded()
}

/// Cheap certificate that even the relaxation with these fixings is infeasible.
///
/// Fractional rows can split across columns, so only the aggregate test
/// carries over: every free row needs at least its smallest demand somewhere.
pub fn relaxation_obviously_infeasible<P: MixedProblem + ?Sized>(
    problem: &P,
    fixed: &[Option<usize>],
) -> bool {
    let ledger = BudgetLedger::new(problem, fixed);
    if ledger.overloaded() {
        return true;
    }
    problem.capacities().iter().enumerate().any(|(k, cap)| {
        let total: f64 = ledger.remaining(k).iter().map(|r| r.max(0.0)).sum();
        let least: f64 = fixed
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_none())
            .map(|(i, _)| cap.demand.row(i).iter().copied().fold(f64::INFINITY, f64::min))
            .sum();
        least > total + FEASIBILITY_TOL
    })
}

/// Consistency of assigning `row := col` on top of arbitrary fixings.
pub fn consistent_fixed<P: MixedProblem + ?Sized>(
    problem: &P,
    fixed: &[Option<usize>],
    row: usize,
    col: usize,
) -> bool {
    let ledger = BudgetLedger::new(problem, fixed);
    if ledger.overloaded() {
        return false;
    }
    let free: Vec<usize> = (0..fixed.len()).filter(|&i| fixed[i].is_none()).collect();
    ledger.admits(problem, &free, row, col)
}

/// False only if no feasible completion exists after deciding row `state.depth()` as `action_col`.
pub fn consistent<P: MixedProblem + ?Sized>(problem: &P, state: &SearchState, action_col: usize) -> bool {
    debug_assert!(!state.is_terminal());
    consistent_fixed(problem, &state.fixings(), state.depth(), action_col)
        && problem.consistency_hint(state, action_col)
}

/// Consistency plus a relaxation feasibility check with the action applied.
///
/// Sound for any convex constraint set, but costs one relaxed solve per action.
pub fn deep_consistent<P: MixedProblem + ?Sized>(
    problem: &P,
    state: &SearchState,
    action_col: usize,
    cfg: &RelaxConfig,
) -> bool {
    if !consistent(problem, state, action_col) {
        return false;
    }
    let mut fixed = state.fixings();
    fixed[state.depth()] = Some(action_col);
    !matches!(problem.relaxed_solve(&fixed, cfg), Err(Error::Infeasible))
}

/// Sets inconsistent actions of `prior` to [`PRUNED`].
pub fn prune_row<P: MixedProblem + ?Sized>(
    problem: &P,
    state: &SearchState,
    prior: &[f64],
) -> Result<Vec<f64>> {
    if prior.len() != state.n_cols() {
        return Err(Error::Dimension(format!(
            "prior has {} entries for {} columns",
            prior.len(),
            state.n_cols()
        )));
    }
    let fixed = state.fixings();
    let ledger = BudgetLedger::new(problem, &fixed);
    let free: Vec<usize> = (state.depth()..state.n_rows()).collect();
    let out: Vec<f64> = prior
        .iter()
        .enumerate()
        .map(|(col, &v)| {
            let ok = !ledger.overloaded()
                && ledger.admits(problem, &free, state.depth(), col)
                && problem.consistency_hint(state, col);
            if ok {
                v
            } else {
                PRUNED
            }
        })
        .collect();
    if out.iter().all(|&v| v == PRUNED) {
        return Err(Error::DeadEnd);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::sp1::Sp1Instance;
    use ndarray::{array, Array2};

    fn sp1(c: Array2<f64>, cap: Vec<f64>) -> Sp1Instance {
        let (n, m) = c.dim();
        Sp1Instance::new(
            Array2::ones((n, m)),
            Array2::ones((n, m)),
            c,
            cap,
            vec![1.0; m],
            false,
        )
        .unwrap()
    }

    #[test]
    fn loose_budgets_never_prune() {
        let n = 4;
        let p = sp1(Array2::ones((n, 3)), vec![n as f64; 3]);
        let s0 = SearchState::initial(p.dims());
        for a in 0..3 {
            assert!(consistent(&p, &s0, a));
        }
        let s = s0.apply_action(1).unwrap().apply_action(1).unwrap();
        for a in 0..3 {
            assert!(consistent(&p, &s, a));
        }
    }

    #[test]
    fn saturated_single_column_prunes_next_row() {
        let p = sp1(array![[0.5], [0.3]], vec![0.5]);
        let s1 = SearchState::initial(p.dims()).apply_action(0).unwrap();
        assert!(!consistent(&p, &s1, 0));
        assert!(matches!(prune_row(&p, &s1, &[1.0]), Err(Error::DeadEnd)));
    }

    #[test]
    fn zero_demand_action_is_consistent() {
        let p = sp1(array![[0.0, 2.0], [0.0, 2.0]], vec![0.0, 1.0]);
        let s0 = SearchState::initial(p.dims());
        assert!(consistent(&p, &s0, 0));
        let s1 = s0.apply_action(0).unwrap();
        assert!(consistent(&p, &s1, 0));
    }

    #[test]
    fn prune_row_keeps_consistent_entries() {
        let p = sp1(Array2::ones((2, 3)), vec![2.0; 3]);
        let s0 = SearchState::initial(p.dims());
        let prior = [0.2, 0.3, 0.5];
        assert_eq!(prune_row(&p, &s0, &prior).unwrap(), prior.to_vec());

        // Only column 2 can still take row 1.
        let p = sp1(array![[1.0, 1.0, 1.0], [1.0, 1.0, 0.5]], vec![1.0, 0.5, 1.0]);
        let s1 = SearchState::initial(p.dims()).apply_action(0).unwrap();
        assert_eq!(prune_row(&p, &s1, &prior).unwrap(), vec![PRUNED, PRUNED, 0.5]);
    }

    #[test]
    fn aggregate_demand_check_prunes_early() {
        // each column fits two rows, three rows remain after choosing column 0
        let p = sp1(Array2::ones((4, 2)), vec![2.0, 1.0]);
        let s0 = SearchState::initial(p.dims());
        assert!(!consistent(&p, &s0, 0));
        assert!(!consistent(&p, &s0, 1));
    }

    #[test]
    fn relaxation_check() {
        let p = sp1(Array2::ones((3, 2)), vec![1.0, 1.0]);
        assert!(relaxation_obviously_infeasible(&p, &[None, None, None]));
        let p = sp1(Array2::ones((2, 2)), vec![1.0, 1.0]);
        assert!(!relaxation_obviously_infeasible(&p, &[None, None]));
        assert!(relaxation_obviously_infeasible(&p, &[Some(0), Some(0)]));
    }
}
