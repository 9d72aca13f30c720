//! Discrete Legendre transforms and convex envelopes of sampled one-dimensional functions.
//!
//! For problems whose objective is not concave in `x`, separable components
//! can be replaced by their upper concave envelopes before relaxing: the
//! envelope keeps the maximum and agrees with the component at 0 and 1, so
//! rewards at binary points are unchanged. [`EnvelopeProblem`] packages this,
//! and [`estimate_relaxed`] is the multi-start fallback when no envelope is
//! available.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::problem::{
    BinaryAssignment, CapacityConstraint, InnerSolution, MixedProblem, ProblemDims, SearchState,
};
use crate::relax::{self, ProblemProgram, RelaxConfig, RelaxedSolution, SmoothProgram, WarmStart};

pub const DEFAULT_GRID_POINTS: usize = 401;

const UNIFORM_TOL: f64 = 1e-12;

/// Values of a function on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl SampledFunction {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(Error::Dimension(format!(
                "need at least two samples with matching lengths, got {} and {}",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) || grid.iter().any(|z| !z.is_finite()) {
            return Err(Error::Dimension("samples must be finite".into()));
        }
        let h = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
        if !(h > 0.0) {
            return Err(Error::Dimension("grid must be strictly increasing".into()));
        }
        let scale = grid[0].abs().max(grid[grid.len() - 1].abs()).max(1.0);
        for (k, z) in grid.iter().enumerate() {
            if (z - (grid[0] + k as f64 * h)).abs() > UNIFORM_TOL * scale {
                return Err(Error::Dimension("grid must be uniform".into()));
            }
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at `k` evenly spaced points of `[lo, hi]`.
    pub fn sample<F: Fn(f64) -> f64>(lo: f64, hi: f64, k: usize, f: F) -> Result<Self> {
        if k < 2 {
            return Err(Error::Dimension("need at least two samples".into()));
        }
        let h = (hi - lo) / (k - 1) as f64;
        let grid: Vec<f64> = (0..k).map(|i| lo + i as f64 * h).collect();
        let values = grid.iter().map(|&z| f(z)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.grid[self.len() - 1] - self.grid[0]) / (self.len() - 1) as f64
    }

    /// Largest absolute slope between neighbouring samples.
    pub fn lipschitz(&self) -> f64 {
        self.secants().map(f64::abs).fold(0.0, f64::max)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Grid point of the largest sample, first on ties.
    pub fn argmax(&self) -> f64 {
        self.grid[crate::problem::argmax(self.values.iter().copied())]
    }

    fn secants(&self) -> impl Iterator<Item = f64> + '_ {
        self.grid
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(z, v)| (v[1] - v[0]) / (z[1] - z[0]))
    }

    fn negated(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| -v).collect(),
        }
    }

    fn cell(&self, z: f64) -> usize {
        let k = ((z - self.grid[0]) / self.step()).floor();
        (k.max(0.0) as usize).min(self.len() - 2)
    }

    /// Piecewise-linear interpolation, extended linearly outside the grid.
    pub fn interpolate(&self, z: f64) -> f64 {
        let k = self.cell(z);
        self.values[k] + self.slope_at(z) * (z - self.grid[k])
    }

    /// Slope of the interpolant's cell containing `z`.
    pub fn slope_at(&self, z: f64) -> f64 {
        let k = self.cell(z);
        (self.values[k + 1] - self.values[k]) / (self.grid[k + 1] - self.grid[k])
    }
}

/// `K` slopes spanning the range of neighbouring secants of `f`; `[s - 1, s + 1]` when `f` is affine.
pub fn default_dual_grid(f: &SampledFunction) -> Vec<f64> {
    let (lo, hi) = f
        .secants()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    let (lo, hi) = if hi - lo <= 1e-12 * lo.abs().max(1.0) {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    };
    let k = f.len();
    let h = (hi - lo) / (k - 1) as f64;
    (0..k).map(|i| lo + i as f64 * h).collect()
}

fn legendre(grid: &[f64], values: &[f64], slope: f64) -> f64 {
    grid.iter()
        .zip(values)
        .map(|(&z, &v)| slope * z - v)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `f*(s) = max_z (s z - f(z))` at every point of `dual_grid`.
pub fn conjugate(f: &SampledFunction, dual_grid: &[f64]) -> Result<SampledFunction> {
    let values = dual_grid.iter().map(|&s| legendre(&f.grid, &f.values, s)).collect();
    SampledFunction::new(dual_grid.to_vec(), values)
}

/// Slopes of the lower convex hull's edges, increasing.
fn hull_slopes(f: &SampledFunction) -> Vec<f64> {
    let (z, v) = (&f.grid, &f.values);
    let mut hull: Vec<usize> = Vec::with_capacity(f.len());
    for i in 0..f.len() {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b if it lies on or above the chord a -> i
            if (v[b] - v[a]) * (z[i] - z[a]) >= (v[i] - v[a]) * (z[b] - z[a]) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull.windows(2).map(|w| (v[w[1]] - v[w[0]]) / (z[w[1]] - z[w[0]])).collect()
}

/// `f**(z) = max_s (s z - f*(s))` on the grid of `f`: its lower convex envelope.
///
/// The dual variable runs over the slopes of the envelope's edges, where the
/// supremum over all real slopes is attained, so the result is the exact
/// envelope up to rounding rather than a dual-grid approximation.
pub fn biconjugate(f: &SampledFunction) -> SampledFunction {
    let slopes = hull_slopes(f);
    let dual: Vec<f64> = slopes.iter().map(|&s| legendre(&f.grid, &f.values, s)).collect();
    let values = f
        .grid
        .iter()
        .zip(&f.values)
        .map(|(&z, &fz)| {
            let best = slopes
                .iter()
                .zip(&dual)
                .map(|(&s, &c)| s * z - c)
                .fold(f64::NEG_INFINITY, f64::max);
            best.min(fz)
        })
        .collect();
    SampledFunction {
        grid: f.grid.clone(),
        values,
    }
}

/// Least concave majorant, `-(-f)**`.
pub fn upper_envelope(f: &SampledFunction) -> SampledFunction {
    biconjugate(&f.negated()).negated()
}

/// Wraps a problem with separable extra terms `sum_ij phi_ij(x_ij)` that need not be concave.
///
/// The objective is the base objective plus the sampled terms. Relaxations
/// replace every term by its upper concave envelope on `[0, 1]`; at binary
/// points the two agree, so the inner solve is the base one plus a constant.
#[derive(Debug, Clone)]
pub struct EnvelopeProblem<P> {
    pub base: P,
    terms: Vec<SampledFunction>,
    envelopes: Vec<SampledFunction>,
}

impl<P: MixedProblem> EnvelopeProblem<P> {
    /// `terms` holds one function per entry, row-major, each sampled over `[0, 1]`.
    pub fn new(base: P, terms: Vec<SampledFunction>) -> Result<Self> {
        let (n, m) = base.dims().shape();
        if terms.len() != n * m {
            return Err(Error::Dimension(format!("{} terms for {n}x{m} entries", terms.len())));
        }
        for t in &terms {
            let g = t.grid();
            if (g[0] - 0.0).abs() > 1e-12 || (g[g.len() - 1] - 1.0).abs() > 1e-12 {
                return Err(Error::Dimension("terms must be sampled on [0, 1]".into()));
            }
        }
        let envelopes = terms.iter().map(upper_envelope).collect();
        Ok(Self { base, terms, envelopes })
    }

    pub fn terms(&self) -> &[SampledFunction] {
        &self.terms
    }

    pub fn envelopes(&self) -> &[SampledFunction] {
        &self.envelopes
    }

    fn extra(funcs: &[SampledFunction], x: &Array2<f64>) -> f64 {
        x.iter().zip(funcs).map(|(&v, f)| f.interpolate(v)).sum()
    }

    fn extra_gradient(funcs: &[SampledFunction], x: &Array2<f64>) -> Array2<f64> {
        let slopes = x.iter().zip(funcs).map(|(&v, f)| f.slope_at(v)).collect();
        Array2::from_shape_vec(x.raw_dim(), slopes).expect("shape preserved")
    }
}

struct EnvelopeProgram<'a, P>(&'a EnvelopeProblem<P>);

impl<P: MixedProblem> SmoothProgram for EnvelopeProgram<'_, P> {
    fn shape(&self) -> (usize, usize) {
        self.0.base.dims().shape()
    }
    fn uses_allocation(&self) -> bool {
        true
    }
    fn allocation_upper(&self) -> Array2<f64> {
        self.0.base.allocation_upper()
    }
    fn value(&self, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        self.0.base.objective(x, y) + EnvelopeProblem::<P>::extra(&self.0.envelopes, x)
    }
    fn gradient(&self, x: &Array2<f64>, y: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let (gx, gy) = self.0.base.objective_gradient(x, y);
        (gx + EnvelopeProblem::<P>::extra_gradient(&self.0.envelopes, x), gy)
    }
    fn residuals(&self, x: &Array2<f64>, y: &Array2<f64>) -> Vec<f64> {
        self.0.base.constraint_residuals(x, y)
    }
    fn residual_vjp(&self, x: &Array2<f64>, y: &Array2<f64>, weights: &[f64]) -> (Array2<f64>, Array2<f64>) {
        self.0.base.constraint_vjp(x, y, weights)
    }
}

impl<P: MixedProblem> MixedProblem for EnvelopeProblem<P> {
    fn dims(&self) -> ProblemDims {
        self.base.dims()
    }

    fn objective(&self, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        self.base.objective(x, y) + Self::extra(&self.terms, x)
    }

    fn constraint_residuals(&self, x: &Array2<f64>, y: &Array2<f64>) -> Vec<f64> {
        self.base.constraint_residuals(x, y)
    }

    fn objective_gradient(&self, x: &Array2<f64>, y: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let (gx, gy) = self.base.objective_gradient(x, y);
        (gx + Self::extra_gradient(&self.terms, x), gy)
    }

    fn constraint_vjp(&self, x: &Array2<f64>, y: &Array2<f64>, weights: &[f64]) -> (Array2<f64>, Array2<f64>) {
        self.base.constraint_vjp(x, y, weights)
    }

    fn allocation_upper(&self) -> Array2<f64> {
        self.base.allocation_upper()
    }

    fn inner_solve(&self, x: &BinaryAssignment) -> Result<InnerSolution> {
        let mut inner = self.base.inner_solve(x)?;
        inner.objective += Self::extra(&self.terms, &x.to_matrix());
        Ok(inner)
    }

    fn relaxed_solve(&self, fixed: &[Option<usize>], cfg: &RelaxConfig) -> Result<RelaxedSolution> {
        self.relaxed_solve_warm(fixed, cfg, None)
    }

    fn relaxed_solve_warm(
        &self,
        fixed: &[Option<usize>],
        cfg: &RelaxConfig,
        warm: Option<&RelaxedSolution>,
    ) -> Result<RelaxedSolution> {
        if crate::feasibility::relaxation_obviously_infeasible(self, fixed) {
            return Err(Error::Infeasible);
        }
        let warm = warm.map(|w| WarmStart {
            x: w.x_tilde.matrix(),
            y: w.y.matrix(),
        });
        relax::solve_program(&EnvelopeProgram(self), fixed, cfg, warm)
    }

    fn capacities(&self) -> &[CapacityConstraint] {
        self.base.capacities()
    }

    fn consistency_hint(&self, state: &SearchState, action_col: usize) -> bool {
        self.base.consistency_hint(state, action_col)
    }
}

pub const ESTIMATE_STARTS: usize = 8;

/// Best of several local relaxed solves for objectives without a usable envelope.
///
/// The first start is the uniform point, the rest are random points of the
/// row simplices drawn from `seed`. The returned solution is the one with
/// the largest value among those satisfying the constraints; its `bound` is
/// only a local estimate and `certified` is cleared.
pub fn estimate_relaxed<P: MixedProblem + ?Sized>(
    problem: &P,
    fixed: &[Option<usize>],
    cfg: &RelaxConfig,
    seed: u64,
) -> Result<RelaxedSolution> {
    let (n, m) = problem.dims().shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let upper = problem.allocation_upper();
    let mut best: Option<RelaxedSolution> = None;
    let mut last_err = None;
    for start in 0..ESTIMATE_STARTS {
        let x = if start == 0 {
            Array2::from_elem((n, m), 1.0 / m as f64)
        } else {
            let mut x = Array2::from_shape_fn((n, m), |_| -rng.random::<f64>().ln());
            for mut row in x.rows_mut() {
                let s = row.sum();
                row /= s;
            }
            x
        };
        let y = upper.mapv(|u| if u.is_finite() { 0.5 * u } else { 0.0 });
        let warm = WarmStart { x: &x, y: &y };
        match relax::solve_program(&ProblemProgram(problem), fixed, cfg, Some(warm)) {
            Ok(sol) => {
                if best.as_ref().is_none_or(|b| sol.value > b.value) {
                    best = Some(sol);
                }
            }
            Err(e @ (Error::Infeasible | Error::Numerical(_))) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    let mut sol = best.ok_or_else(|| last_err.unwrap_or(Error::Infeasible))?;
    sol.certified = false;
    Ok(sol)
}
