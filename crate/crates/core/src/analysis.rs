//! Statistics used to check the relaxation's guidance empirically.

use crate::baselines::enumerate_assignments;
use crate::error::{Error, Result};
use crate::problem::MixedProblem;
use crate::relax::RelaxConfig;

/// One-sided Chebyshev bound `P[Z <= mu - a] <= s^2 / (s^2 + a^2)` for `a > 0`.
pub fn cantelli_bound(variance: f64, a: f64) -> f64 {
    if a <= 0.0 {
        return 1.0;
    }
    variance / (variance + a * a)
}

/// Median of the finite entries; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Objective statistics of the neighbourhood of the root relaxed solution.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighbourhoodReport {
    /// Median Frobenius distance from every binary point to `x~*`.
    pub radius: f64,
    pub mean_inside: f64,
    pub mean_overall: f64,
    pub feasible_inside: usize,
    pub feasible_overall: usize,
}

impl NeighbourhoodReport {
    /// The ball around the relaxed optimum is at least as good as the whole space on average.
    pub fn is_high_potential(&self) -> bool {
        self.mean_inside >= self.mean_overall
    }
}

/// Enumerates every assignment and compares feasible objectives near `x~*` with all of them.
pub fn neighbourhood_report<P: MixedProblem + ?Sized>(
    problem: &P,
    cfg: &RelaxConfig,
) -> Result<NeighbourhoodReport> {
    let root = match problem.relaxed_solve(&vec![None; problem.dims().n_rows], cfg) {
        Ok(s) => s,
        Err(Error::Infeasible) => return Err(Error::InstanceInfeasible),
        Err(e) => return Err(e),
    };
    let center = root.x_tilde.matrix();
    let all = enumerate_assignments(problem)?;
    let distances: Vec<f64> = all.iter().map(|(a, _)| a.distance_to(center)).collect();
    let radius = median(&distances).ok_or(Error::InstanceInfeasible)?;
    let feasible: Vec<(f64, f64)> = all
        .iter()
        .zip(&distances)
        .filter_map(|((_, v), &d)| v.map(|v| (d, v)))
        .collect();
    let overall: Vec<f64> = feasible.iter().map(|&(_, v)| v).collect();
    let inside: Vec<f64> = feasible.iter().filter(|&&(d, _)| d <= radius).map(|&(_, v)| v).collect();
    let mean_overall = mean(&overall).ok_or(Error::InstanceInfeasible)?;
    Ok(NeighbourhoodReport {
        radius,
        // an empty ball holds no evidence either way
        mean_inside: mean(&inside).unwrap_or(f64::NEG_INFINITY),
        mean_overall,
        feasible_inside: inside.len(),
        feasible_overall: overall.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cantelli_values() {
        assert!((cantelli_bound(1.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((cantelli_bound(1.0, 2.0) - 0.2).abs() < 1e-15);
        assert_eq!(cantelli_bound(1.0, 0.0), 1.0);
    }

    #[test]
    fn median_odd_even_and_nan() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[f64::NAN, 1.0]), Some(1.0));
        assert_eq!(median(&[]), None);
    }
}
