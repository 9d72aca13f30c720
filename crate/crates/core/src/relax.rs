//! Continuous relaxation: binary rows become points on the probability simplex.
//!
//! The generic solver is projected gradient ascent (accelerated, with
//! backtracking) on an augmented Lagrangian of the general constraints. Rows
//! of `x` are projected onto the simplex, `y` onto its box `[0, upper]`, and
//! fixed rows stay one-hot. After convergence a certified upper bound is
//! computed from the final multipliers: the Lagrangian is concave, so its
//! value plus the Frank-Wolfe gap over the feasible box bounds the relaxed
//! optimum from above, whether or not the iterate is exactly optimal.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility;
use crate::problem::{ContinuousAllocation, MixedProblem, RelaxedAssignment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxConfig {
    /// Initial step for the projected gradient iterations; adapted by backtracking.
    pub step_size: f64,
    /// Budget of inner gradient iterations across all outer iterations.
    pub max_iterations: usize,
    /// Stationarity and constraint-violation tolerance.
    pub tolerance: f64,
    /// Multiplier applied to the penalty when violation stalls.
    pub penalty_growth: f64,
    pub initial_penalty: f64,
    pub max_penalty: f64,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-2,
            max_iterations: 10_000,
            tolerance: 1e-6,
            penalty_growth: 10.0,
            initial_penalty: 1.0,
            max_penalty: 1e9,
        }
    }
}

impl RelaxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::Config("relax step_size must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("relax tolerance must be positive".into()));
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::Config("relax penalty_growth must exceed 1".into()));
        }
        if !(self.initial_penalty > 0.0 && self.max_penalty >= self.initial_penalty) {
            return Err(Error::Config("relax penalties must satisfy 0 < initial <= max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RelaxedSolution {
    pub x_tilde: RelaxedAssignment,
    pub y: ContinuousAllocation,
    /// `f(x_tilde, y)`.
    pub value: f64,
    /// Upper bound on the relaxed optimum. Equals `value` when no certificate
    /// is available.
    pub bound: f64,
    pub certified: bool,
    pub converged: bool,
    pub iterations: usize,
    /// Max constraint violation after each outer iteration.
    pub violation_history: Vec<f64>,
    /// Final dual estimates of the solver that produced this solution.
    pub multipliers: Vec<f64>,
}

impl RelaxedSolution {
    pub fn max_violation(&self) -> f64 {
        self.violation_history.last().copied().unwrap_or(0.0)
    }
}

/// Euclidean projection onto `{w : w >= 0, sum w = 1}`.
pub fn project_row_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Dimension("cannot project an empty vector".into()));
    }
    let mut w = v.to_vec();
    project_simplex_in_place(&mut w);
    Ok(w)
}

pub(crate) fn project_simplex_in_place(w: &mut [f64]) {
    let mut sorted: Vec<f64> = w.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (k as f64 + 1.0);
        if u - t > 0.0 {
            theta = t;
        }
    }
    for v in w.iter_mut() {
        *v = (*v - theta).max(0.0);
    }
}

/// A smooth concave program over `(x, y)` in the relaxation's feasible box.
///
/// [`ProblemProgram`] adapts any [`MixedProblem`]; problems with a closed-form
/// inner allocation may instead hand the solver a reduced program over `x`
/// alone.
pub trait SmoothProgram {
    fn shape(&self) -> (usize, usize);

    /// Whether `y` is a decision variable of this program.
    fn uses_allocation(&self) -> bool;

    fn allocation_upper(&self) -> Array2<f64>;

    fn value(&self, x: &Array2<f64>, y: &Array2<f64>) -> f64;

    fn gradient(&self, x: &Array2<f64>, y: &Array2<f64>) -> (Array2<f64>, Array2<f64>);

    fn residuals(&self, x: &Array2<f64>, y: &Array2<f64>) -> Vec<f64>;

    fn residual_vjp(
        &self,
        x: &Array2<f64>,
        y: &Array2<f64>,
        weights: &[f64],
    ) -> (Array2<f64>, Array2<f64>);

    /// The reported allocation for a final iterate. Reduced programs fill in
    /// their closed-form `y` here.
    fn complete_allocation(&self, _x: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
        y.clone()
    }
}

/// The full `(x, y)` relaxation of a [`MixedProblem`].
pub struct ProblemProgram<'a, P: ?Sized>(pub &'a P);

impl<P: MixedProblem + ?Sized> SmoothProgram for ProblemProgram<'_, P> {
    fn shape(&self) -> (usize, usize) {
        self.0.dims().shape()
    }
    fn uses_allocation(&self) -> bool {
        true
    }
    fn allocation_upper(&self) -> Array2<f64> {
        self.0.allocation_upper()
    }
    fn value(&self, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        self.0.objective(x, y)
    }
    fn gradient(&self, x: &Array2<f64>, y: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        self.0.objective_gradient(x, y)
    }
    fn residuals(&self, x: &Array2<f64>, y: &Array2<f64>) -> Vec<f64> {
        self.0.constraint_residuals(x, y)
    }
    fn residual_vjp(
        &self,
        x: &Array2<f64>,
        y: &Array2<f64>,
        weights: &[f64],
    ) -> (Array2<f64>, Array2<f64>) {
        self.0.constraint_vjp(x, y, weights)
    }
}

/// Solves the relaxation of `problem` through its full `(x, y)` evaluators.
///
/// This is the reference path; [`MixedProblem::relaxed_solve`] defaults to it.
pub fn solve_relaxed<P: MixedProblem + ?Sized>(
    problem: &P,
    fixed: &[Option<usize>],
    cfg: &RelaxConfig,
) -> Result<RelaxedSolution> {
    solve_relaxed_warm(problem, fixed, cfg, None)
}

pub fn solve_relaxed_warm<P: MixedProblem + ?Sized>(
    problem: &P,
    fixed: &[Option<usize>],
    cfg: &RelaxConfig,
    warm: Option<&RelaxedSolution>,
) -> Result<RelaxedSolution> {
    if feasibility::relaxation_obviously_infeasible(problem, fixed) {
        return Err(Error::Infeasible);
    }
    let warm = warm.map(|w| WarmStart {
        x: w.x_tilde.matrix(),
        y: w.y.matrix(),
    });
    solve_program(&ProblemProgram(problem), fixed, cfg, warm)
}

/// The relaxation value at the root, used to normalize objectives of an instance.
pub fn root_bound<P: MixedProblem + ?Sized>(problem: &P, cfg: &RelaxConfig) -> Result<f64> {
    let root = vec![None; problem.dims().n_rows];
    match problem.relaxed_solve(&root, cfg) {
        Ok(sol) => Ok(sol.bound),
        Err(Error::Infeasible) => Err(Error::InstanceInfeasible),
        Err(e) => Err(e),
    }
}

/// Starting point for [`solve_program`].
pub struct WarmStart<'a> {
    pub x: &'a Array2<f64>,
    pub y: &'a Array2<f64>,
}

struct Layout<'a> {
    fixed: &'a [Option<usize>],
    upper: Array2<f64>,
    uses_allocation: bool,
}

impl Layout<'_> {
    fn project(&self, x: &mut Array2<f64>, y: &mut Array2<f64>) {
        for (i, mut row) in x.rows_mut().into_iter().enumerate() {
            match self.fixed[i] {
                Some(j) => {
                    row.fill(0.0);
                    row[j] = 1.0;
                }
                None => project_simplex_in_place(row.as_slice_mut().expect("standard layout")),
            }
        }
        if self.uses_allocation {
            Zip::from(y).and(&self.upper).for_each(|v, &u| *v = v.max(0.0).min(u));
        }
    }

    fn free_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.fixed
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_none())
            .map(|(i, _)| i)
    }

    fn has_free_variables(&self) -> bool {
        self.uses_allocation || self.fixed.iter().any(|f| f.is_none())
    }

    /// Max of the linearization `<g, z' - z>` over the feasible box.
    fn linear_gap(&self, x: &Array2<f64>, y: &Array2<f64>, gx: &Array2<f64>, gy: &Array2<f64>) -> f64 {
        let mut gap = 0.0;
        for i in self.free_rows() {
            let row = gx.row(i);
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let current: f64 = row.iter().zip(x.row(i)).map(|(g, v)| g * v).sum();
            gap += best - current;
        }
        if self.uses_allocation {
            for ((&g, &v), &u) in gy.iter().zip(y.iter()).zip(self.upper.iter()) {
                gap += if g > 0.0 { g * (u - v) } else { -g * v };
            }
        }
        gap
    }
}

struct Augmented<'a, S: ?Sized> {
    program: &'a S,
    multipliers: Vec<f64>,
    penalty: f64,
}

impl<S: SmoothProgram + ?Sized> Augmented<'_, S> {
    fn value(&self, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let f = self.program.value(x, y);
        let g = self.program.residuals(x, y);
        let rho = self.penalty;
        let penalty: f64 = g
            .iter()
            .zip(&self.multipliers)
            .map(|(&g, &l)| ((l + rho * g).max(0.0).powi(2) - l * l) / (2.0 * rho))
            .sum();
        f - penalty
    }

    fn value_and_gradient(&self, x: &Array2<f64>, y: &Array2<f64>) -> (f64, Array2<f64>, Array2<f64>) {
        let f = self.program.value(x, y);
        let (mut gx, mut gy) = self.program.gradient(x, y);
        let g = self.program.residuals(x, y);
        let rho = self.penalty;
        let mut penalty = 0.0;
        let weights: Vec<f64> = g
            .iter()
            .zip(&self.multipliers)
            .map(|(&g, &l)| {
                let w = (l + rho * g).max(0.0);
                penalty += (w * w - l * l) / (2.0 * rho);
                w
            })
            .collect();
        if weights.iter().any(|&w| w != 0.0) {
            let (vx, vy) = self.program.residual_vjp(x, y, &weights);
            gx -= &vx;
            gy -= &vy;
        }
        (f - penalty, gx, gy)
    }
}

fn max_violation(g: &[f64]) -> f64 {
    g.iter().copied().fold(0.0, f64::max)
}

fn inf_norm_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

struct InnerOutcome {
    stationarity: f64,
    iterations: usize,
}

/// Accelerated projected gradient ascent with backtracking and function-value restarts.
#[allow(clippy::too_many_arguments)]
fn maximize_inner<S: SmoothProgram + ?Sized>(
    objective: &Augmented<'_, S>,
    layout: &Layout<'_>,
    x: &mut Array2<f64>,
    y: &mut Array2<f64>,
    step: &mut f64,
    tolerance: f64,
    budget: usize,
) -> Result<InnerOutcome> {
    let mut prev_x = x.clone();
    let mut prev_y = y.clone();
    let mut current = objective.value(x, y);
    let mut momentum = 1.0_f64;
    let mut stationarity = f64::INFINITY;
    let mut iterations = 0;

    while iterations < budget {
        iterations += 1;
        let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let beta = (momentum - 1.0) / next_momentum;
        let mut vx = &*x + &((&*x - &prev_x) * beta);
        let mut vy = &*y + &((&*y - &prev_y) * beta);
        layout.project(&mut vx, &mut vy);

        let (phi_v, gx, gy) = objective.value_and_gradient(&vx, &vy);
        if !phi_v.is_finite() && !current.is_finite() {
            return Err(Error::Numerical("non-finite relaxed objective".into()));
        }

        let (nx, ny, phi_n) = loop {
            let mut nx = &vx + &(&gx * *step);
            let mut ny = &vy + &(&gy * *step);
            layout.project(&mut nx, &mut ny);
            let phi_n = objective.value(&nx, &ny);
            let dx = &nx - &vx;
            let dy = &ny - &vy;
            let linear = (&gx * &dx).sum() + (&gy * &dy).sum();
            let sq = (&dx * &dx).sum() + (&dy * &dy).sum();
            let model = phi_v + linear - sq / (2.0 * *step);
            if phi_n.is_finite() && (phi_n >= model - 1e-12 * phi_v.abs().max(1.0) || !phi_v.is_finite()) {
                break (nx, ny, phi_n);
            }
            *step *= 0.5;
            if *step < 1e-20 {
                return Err(Error::Numerical("step size underflow in relaxation".into()));
            }
        };

        stationarity = inf_norm_diff(&nx, &vx).max(inf_norm_diff(&ny, &vy)) / *step;

        if phi_n < current {
            // restart: drop momentum, retry from the current iterate
            prev_x.assign(x);
            prev_y.assign(y);
            momentum = 1.0;
        } else {
            prev_x = std::mem::replace(x, nx);
            prev_y = std::mem::replace(y, ny);
            current = phi_n;
            momentum = next_momentum;
        }
        *step *= 1.25;
        if stationarity <= tolerance {
            break;
        }
    }
    Ok(InnerOutcome {
        stationarity,
        iterations,
    })
}

/// Maximizes `program` over the relaxation with `fixed` rows held one-hot.
pub fn solve_program<S: SmoothProgram + ?Sized>(
    program: &S,
    fixed: &[Option<usize>],
    cfg: &RelaxConfig,
    warm: Option<WarmStart<'_>>,
) -> Result<RelaxedSolution> {
    cfg.validate()?;
    let (n, m) = program.shape();
    if fixed.len() != n {
        return Err(Error::Dimension(format!(
            "{} fixings for {} rows",
            fixed.len(),
            n
        )));
    }
    if let Some(bad) = fixed.iter().flatten().find(|&&j| j >= m) {
        return Err(Error::Index { index: *bad, limit: m });
    }
    let layout = Layout {
        fixed,
        upper: program.allocation_upper(),
        uses_allocation: program.uses_allocation(),
    };

    let (mut x, mut y) = match warm {
        Some(w) => (w.x.clone(), w.y.clone()),
        None => (
            Array2::from_elem((n, m), 1.0 / m as f64),
            Array2::zeros((n, m)),
        ),
    };
    layout.project(&mut x, &mut y);

    let n_constraints = program.residuals(&x, &y).len();
    let mut aug = Augmented {
        program,
        multipliers: vec![0.0; n_constraints],
        penalty: cfg.initial_penalty,
    };

    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    if !layout.has_free_variables() {
        let g = program.residuals(&x, &y);
        let violation = max_violation(&g);
        if violation > cfg.tolerance {
            return Err(Error::Infeasible);
        }
        history.push(violation);
        converged = true;
    } else {
        let mut step = cfg.step_size;
        let mut best_violation = f64::INFINITY;
        let mut stalled_at_max = 0;
        loop {
            let budget = cfg.max_iterations.saturating_sub(iterations);
            if budget == 0 {
                break;
            }
            let inner = maximize_inner(&aug, &layout, &mut x, &mut y, &mut step, cfg.tolerance, budget)?;
            iterations += inner.iterations;

            let g = program.residuals(&x, &y);
            let violation = max_violation(&g);
            history.push(violation);
            for (l, &gl) in aug.multipliers.iter_mut().zip(&g) {
                *l = (*l + aug.penalty * gl).max(0.0);
            }
            if violation <= cfg.tolerance && inner.stationarity <= cfg.tolerance {
                converged = true;
                break;
            }
            if n_constraints == 0 {
                continue;
            }
            if violation > 0.25 * best_violation {
                if aug.penalty >= cfg.max_penalty {
                    stalled_at_max += 1;
                    if stalled_at_max >= 3 && violation > cfg.tolerance {
                        return Err(Error::Infeasible);
                    }
                }
                aug.penalty = (aug.penalty * cfg.penalty_growth).min(cfg.max_penalty);
            }
            best_violation = best_violation.min(violation);
        }
        if !converged && aug.penalty >= cfg.max_penalty && max_violation(&program.residuals(&x, &y)) > cfg.tolerance {
            return Err(Error::Infeasible);
        }
    }

    let value = program.value(&x, &y);
    if !value.is_finite() {
        return Err(Error::Numerical("relaxed objective is not finite".into()));
    }

    // Certified bound from the Lagrangian with the final multipliers.
    let g = program.residuals(&x, &y);
    let (mut gx, mut gy) = program.gradient(&x, &y);
    if aug.multipliers.iter().any(|&l| l != 0.0) {
        let (vx, vy) = program.residual_vjp(&x, &y, &aug.multipliers);
        gx -= &vx;
        gy -= &vy;
    }
    let lagrangian = value - g.iter().zip(&aug.multipliers).map(|(g, l)| g * l).sum::<f64>();
    let gap = layout.linear_gap(&x, &y, &gx, &gy);
    let (bound, certified) = if gap.is_finite() {
        (lagrangian + gap, true)
    } else {
        (value, false)
    };

    let y_full = program.complete_allocation(&x, &y);
    Ok(RelaxedSolution {
        x_tilde: RelaxedAssignment::new(clean_rows(x))?,
        y: ContinuousAllocation::new(y_full.mapv(|v| v.max(0.0)))?,
        value,
        bound,
        certified,
        converged,
        iterations,
        violation_history: history,
        multipliers: aug.multipliers,
    })
}

/// Renormalizes rows to absorb floating-point drift from the projection.
pub(crate) fn clean_rows(mut x: Array2<f64>) -> Array2<f64> {
    for mut row in x.rows_mut() {
        row.mapv_inplace(|v| v.clamp(0.0, 1.0));
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn projection_examples() {
        assert_eq!(project_row_simplex(&[0.5, 0.5]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(project_row_simplex(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(project_row_simplex(&[]), Err(Error::Dimension(_))));
    }

    // Dense-grid oracle at resolution 1e-3 for the projection of [0.8, 0.6, 0.1].
    #[test]
    fn projection_matches_grid_oracle() {
        let v = [0.8, 0.6, 0.1];
        let mut best = (f64::INFINITY, [0.0; 3]);
        for a in 0..=1000 {
            for b in 0..=(1000 - a) {
                let w = [a as f64 / 1000.0, b as f64 / 1000.0, (1000 - a - b) as f64 / 1000.0];
                let d: f64 = w.iter().zip(&v).map(|(p, q)| (p - q).powi(2)).sum();
                if d < best.0 {
                    best = (d, w);
                }
            }
        }
        let w = project_row_simplex(&v).unwrap();
        for k in 0..3 {
            assert!((w[k] - best.1[k]).abs() <= 1e-3, "{w:?} vs {:?}", best.1);
        }
        // frozen value from the oracle: [0.6, 0.4, 0.0]
        assert!((w[0] - 0.6).abs() < 1e-12 && (w[1] - 0.4).abs() < 1e-12 && w[2] == 0.0);
    }

    proptest! {
        #[test]
        fn projection_lands_on_simplex(v in prop::collection::vec(-10.0f64..10.0, 1..12)) {
            let w = project_row_simplex(&v).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            prop_assert!(w.iter().all(|&p| p >= 0.0));
            let again = project_row_simplex(&w).unwrap();
            for (a, b) in w.iter().zip(&again) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    /// max sum_j log(1 + s_j x_j) over one simplex row, no constraints.
    struct LogRow(Vec<f64>);

    impl SmoothProgram for LogRow {
        fn shape(&self) -> (usize, usize) {
            (1, self.0.len())
        }
        fn uses_allocation(&self) -> bool {
            false
        }
        fn allocation_upper(&self) -> Array2<f64> {
            Array2::zeros((1, self.0.len()))
        }
        fn value(&self, x: &Array2<f64>, _y: &Array2<f64>) -> f64 {
            x.iter().zip(&self.0).map(|(x, s)| (1.0 + s * x).ln()).sum()
        }
        fn gradient(&self, x: &Array2<f64>, y: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
            let mut g = x.clone();
            for (gv, s) in g.iter_mut().zip(&self.0) {
                *gv = s / (1.0 + s * *gv);
            }
            (g, Array2::zeros(y.dim()))
        }
        fn residuals(&self, _x: &Array2<f64>, _y: &Array2<f64>) -> Vec<f64> {
            vec![]
        }
        fn residual_vjp(&self, x: &Array2<f64>, y: &Array2<f64>, _w: &[f64]) -> (Array2<f64>, Array2<f64>) {
            (Array2::zeros(x.dim()), Array2::zeros(y.dim()))
        }
    }

    #[test]
    fn unconstrained_row_matches_water_level() {
        // KKT: s_j / (1 + s_j x_j) = nu on the support. With s = [1, 1] the optimum is [0.5, 0.5].
        let p = LogRow(vec![1.0, 1.0]);
        let sol = solve_program(&p, &[None], &RelaxConfig::default(), None).unwrap();
        assert!(sol.converged);
        assert!((sol.x_tilde.matrix()[[0, 0]] - 0.5).abs() < 1e-6);
        assert!((sol.value - 2.0 * 1.5f64.ln()).abs() < 1e-9);
        assert!(sol.bound >= sol.value - 1e-12);
        assert!(sol.bound - sol.value < 1e-5);
    }

    #[test]
    fn fixed_rows_are_respected() {
        let p = LogRow(vec![1.0, 3.0]);
        let sol = solve_program(&p, &[Some(0)], &RelaxConfig::default(), None).unwrap();
        assert_eq!(sol.x_tilde.row(0), vec![1.0, 0.0]);
        assert!((sol.value - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let bad = RelaxConfig {
            penalty_growth: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(RelaxConfig::default().validate().is_ok());
    }
}
