use crate::error::{Error, Result};
use crate::problem::{BinaryAssignment, MixedProblem, SolutionRecord, FEASIBILITY_TOL};
use crate::relax::{root_bound, RelaxConfig};

/// Largest enumerable instance, in bits of `M^N`.
pub const ENUMERATION_LIMIT_BITS: f64 = 20.0;

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub record: SolutionRecord,
    /// Assignments passed to the inner solver.
    pub evaluated: usize,
    pub feasible: usize,
}

/// Every assignment in lexicographic order with its inner objective, `None` when infeasible.
pub fn enumerate_assignments<P: MixedProblem + ?Sized>(
    problem: &P,
) -> Result<Vec<(BinaryAssignment, Option<f64>)>> {
    let mut out = Vec::new();
    for_each_assignment(problem, |a, v| out.push((a, v)))?;
    Ok(out)
}

fn for_each_assignment<P, F>(problem: &P, mut visit: F) -> Result<()>
where
    P: MixedProblem + ?Sized,
    F: FnMut(BinaryAssignment, Option<f64>),
{
    let dims = problem.dims();
    let bits = dims.assignments_log2();
    if bits > ENUMERATION_LIMIT_BITS {
        return Err(Error::RefusedTooLarge {
            assignments_log2: bits,
            limit_bits: ENUMERATION_LIMIT_BITS,
        });
    }
    let (n, m) = dims.shape();
    let mut digits = vec![0usize; n];
    loop {
        let a = BinaryAssignment::new(digits.clone(), m)?;
        let value = match problem.inner_solve(&a) {
            Ok(inner) => {
                let g = problem.constraint_residuals(&a.to_matrix(), inner.allocation.matrix());
                (inner.objective.is_finite() && g.iter().all(|&v| v <= FEASIBILITY_TOL))
                    .then_some(inner.objective)
            }
            Err(Error::Infeasible) => None,
            Err(e) => return Err(e),
        };
        visit(a, value);
        // odometer with the last row as the fastest digit
        let mut k = n;
        loop {
            if k == 0 {
                return Ok(());
            }
            k -= 1;
            digits[k] += 1;
            if digits[k] < m {
                break;
            }
            digits[k] = 0;
        }
    }
}

/// Exact optimum by enumerating all `M^N` assignments; ties go to the lexicographically first.
pub fn oracle_enumerate<P: MixedProblem + ?Sized>(problem: &P) -> Result<OracleOutcome> {
    let mut best: Option<(BinaryAssignment, f64)> = None;
    let mut evaluated = 0;
    let mut feasible = 0;
    for_each_assignment(problem, |a, v| {
        evaluated += 1;
        if let Some(v) = v {
            feasible += 1;
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((a, v));
            }
        }
    })?;
    let (assignment, _) = best.ok_or(Error::InstanceInfeasible)?;
    let inner = problem.inner_solve(&assignment)?;
    let bound = root_bound(problem, &RelaxConfig::default()).unwrap_or(f64::NAN);
    Ok(OracleOutcome {
        record: SolutionRecord::evaluate(problem, assignment, inner, bound),
        evaluated,
        feasible,
    })
}
