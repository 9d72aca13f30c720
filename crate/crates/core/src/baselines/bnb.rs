use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::consistent_fixed;
use crate::problem::{
    BinaryAssignment, InnerSolution, MixedProblem, SolutionRecord, FEASIBILITY_TOL,
};
use crate::relax::{RelaxConfig, RelaxedSolution};
use crate::search::{SolveTrace, Termination, TracePoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnbConfig {
    pub time_limit: f64,
    /// Nodes whose bound is within `tol` (relative, at least absolute) of the incumbent are pruned.
    pub tol: f64,
    pub max_nodes: Option<usize>,
    pub relax: RelaxConfig,
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self {
            time_limit: 500.0,
            tol: 1e-6,
            max_nodes: None,
            relax: RelaxConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BnbOutcome {
    pub record: SolutionRecord,
    pub trace: SolveTrace,
    pub root_bound: f64,
    pub nodes: usize,
    /// Largest `child bound - parent bound` seen; positive values point at inexact relaxations.
    pub worst_bound_increase: f64,
}

struct Node {
    fixed: Vec<Option<usize>>,
    parent_bound: f64,
    solution: Option<RelaxedSolution>,
    warm: Option<std::rc::Rc<RelaxedSolution>>,
}

fn entropy(row: &[f64]) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

fn evaluate<P: MixedProblem + ?Sized>(problem: &P, columns: Vec<usize>) -> Result<Option<(BinaryAssignment, InnerSolution)>> {
    let a = BinaryAssignment::new(columns, problem.dims().n_cols)?;
    match problem.inner_solve(&a) {
        Ok(inner) => {
            let g = problem.constraint_residuals(&a.to_matrix(), inner.allocation.matrix());
            let ok = inner.objective.is_finite() && g.iter().all(|&v| v <= FEASIBILITY_TOL);
            Ok(ok.then_some((a, inner)))
        }
        Err(Error::Infeasible) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Depth-first branch-and-bound on the relaxation.
///
/// Branches on the free row with the most fractional relaxed values, trying
/// columns by decreasing relaxed value. Without a time or node limit the
/// result is optimal within `tol`.
pub fn branch_and_bound<P: MixedProblem + ?Sized>(problem: &P, cfg: &BnbConfig) -> Result<BnbOutcome> {
    cfg.relax.validate()?;
    if !(cfg.time_limit > 0.0) {
        return Err(Error::Config("time limit must be positive".into()));
    }
    let start = Instant::now();
    let n = problem.dims().n_rows;
    let root = match problem.relaxed_solve(&vec![None; n], &cfg.relax) {
        Ok(sol) => sol,
        Err(Error::Infeasible) => return Err(Error::InstanceInfeasible),
        Err(e) => return Err(e),
    };
    let root_bound = root.bound;
    let mut trace = SolveTrace::new();
    trace.relax_solves = 1;
    let mut incumbent: Option<(BinaryAssignment, InnerSolution)> = None;
    let point = |trace: &mut SolveTrace, nodes: usize, inc: &Option<(BinaryAssignment, InnerSolution)>| {
        if let Some((_, inner)) = inc {
            trace.points.push(TracePoint {
                elapsed_s: start.elapsed().as_secs_f64(),
                step: nodes,
                best_objective: inner.objective,
                best_normalized: crate::problem::normalize(inner.objective, root_bound),
            });
        }
    };

    let mut stack = vec![Node {
        fixed: vec![None; n],
        parent_bound: f64::INFINITY,
        solution: Some(root),
        warm: None,
    }];
    let mut nodes = 0;
    let mut worst_increase = f64::NEG_INFINITY;
    let mut incomplete = false;

    while let Some(node) = stack.pop() {
        if start.elapsed().as_secs_f64() >= cfg.time_limit || cfg.max_nodes.is_some_and(|k| nodes >= k) {
            incomplete = true;
            break;
        }
        nodes += 1;
        if nodes % 100 == 0 {
            point(&mut trace, nodes, &incumbent);
        }
        let sol = match node.solution {
            Some(s) => s,
            None => {
                trace.relax_solves += 1;
                match problem.relaxed_solve_warm(&node.fixed, &cfg.relax, node.warm.as_deref()) {
                    Ok(s) => s,
                    Err(Error::Infeasible) => continue,
                    Err(e) => return Err(e),
                }
            }
        };
        if node.parent_bound.is_finite() {
            worst_increase = worst_increase.max(sol.bound - node.parent_bound);
        }
        let bound = sol.bound.min(node.parent_bound);
        let beats = |value: f64, inc: &Option<(BinaryAssignment, InnerSolution)>| match inc {
            Some((_, i)) => value > i.objective + cfg.tol * i.objective.abs().max(1.0),
            None => true,
        };
        if !beats(bound, &incumbent) {
            continue;
        }

        let free: Vec<usize> = (0..n).filter(|&i| node.fixed[i].is_none()).collect();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| sol.x_tilde.row(i)).collect();
        let integral = free
            .iter()
            .all(|&i| rows[i].iter().copied().fold(0.0, f64::max) >= 1.0 - 1e-6);
        if integral {
            let cols: Vec<usize> = (0..n)
                .map(|i| node.fixed[i].unwrap_or_else(|| crate::problem::argmax(rows[i].iter().copied())))
                .collect();
            if let Some((a, inner)) = evaluate(problem, cols)? {
                let value = inner.objective;
                if incumbent.as_ref().is_none_or(|(_, i)| value > i.objective) {
                    incumbent = Some((a, inner));
                    point(&mut trace, nodes, &incumbent);
                }
                if free.is_empty() || value >= bound - cfg.tol * value.abs().max(1.0) {
                    continue;
                }
            } else if free.is_empty() {
                continue;
            }
        }
        if free.is_empty() {
            continue;
        }

        let mut branch = free[0];
        let mut best_h = f64::NEG_INFINITY;
        for &i in &free {
            let h = entropy(&rows[i]);
            if h > best_h {
                best_h = h;
                branch = i;
            }
        }
        let row = &rows[branch];
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        let warm = std::rc::Rc::new(sol);
        for &col in order.iter().rev() {
            if !consistent_fixed(problem, &node.fixed, branch, col) {
                continue;
            }
            let mut fixed = node.fixed.clone();
            fixed[branch] = Some(col);
            stack.push(Node {
                fixed,
                parent_bound: bound,
                solution: None,
                warm: Some(warm.clone()),
            });
        }
    }

    trace.steps = nodes;
    trace.elapsed_s = start.elapsed().as_secs_f64();
    trace.incomplete = incomplete;
    trace.termination = if incomplete {
        Termination::TimeLimit
    } else {
        Termination::Completed
    };
    match incumbent {
        Some((a, inner)) => {
            if trace.points.last().map(|p| p.step) != Some(nodes) {
                point(&mut trace, nodes, &Some((a.clone(), inner.clone())));
            }
            Ok(BnbOutcome {
                record: SolutionRecord::evaluate(problem, a, inner, root_bound),
                trace,
                root_bound,
                nodes,
                worst_bound_increase: worst_increase,
            })
        }
        None if incomplete => Err(Error::Exhausted { trace }),
        None => Err(Error::InstanceInfeasible),
    }
}
