//! Joint association and edge-resource allocation.
//!
//! ```text
//! max  sum_ij log(1 + s_ij x_ij) + d_ij y_ij
//! s.t. sum_i y_ij <= D_j,  sum_i c_ij x_ij <= C_j,  x row-exclusive binary
//! ```
//!
//! The allocation term does not involve `x`, so every column's budget goes to
//! its best row regardless of the association. `couple_y` adds `y_ij <= D_j x_ij`
//! so that only associated rows can receive resources.

use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::check_shape;
use crate::error::{Error, Result};
use crate::feasibility;
use crate::problem::{
    argmax, BinaryAssignment, CapacityConstraint, ContinuousAllocation, InnerSolution,
    MixedProblem, ProblemDims, RelaxedAssignment, FEASIBILITY_TOL,
};
use crate::relax::{self, RelaxConfig, RelaxedSolution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sp1Params {
    pub s_range: [f64; 2],
    pub d_range: [f64; 2],
    pub c_range: [f64; 2],
    /// Expected load of a column as a fraction of its capacity.
    pub load_factor: f64,
    /// Allocation budget `D_j` of every column.
    pub d_budget: f64,
    pub couple_y: bool,
}

impl Default for Sp1Params {
    fn default() -> Self {
        Self {
            s_range: [0.5, 2.0],
            d_range: [0.5, 2.0],
            c_range: [0.1, 1.0],
            load_factor: 0.7,
            d_budget: 1.0,
            couple_y: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sp1Instance {
    dims: ProblemDims,
    pub s: Array2<f64>,
    pub d_util: Array2<f64>,
    pub c: Array2<f64>,
    pub c_cap: Vec<f64>,
    pub d_cap: Vec<f64>,
    pub couple_y: bool,
    caps: Vec<CapacityConstraint>,
}

pub fn gen_sp1(n_users: usize, n_stations: usize, seed: u64, params: &Sp1Params) -> Result<Sp1Instance> {
    for r in [params.s_range, params.d_range, params.c_range] {
        if !(r[0] <= r[1]) || r[0] < 0.0 {
            return Err(Error::Config(format!("bad parameter range {r:?}")));
        }
    }
    if !(params.load_factor > 0.0) || !(params.d_budget > 0.0) {
        return Err(Error::Config("load factor and budget must be positive".into()));
    }
    ProblemDims::new(n_users, n_stations, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |r: [f64; 2]| {
        Array2::from_shape_simple_fn((n_users, n_stations), || {
            if r[0] == r[1] {
                r[0]
            } else {
                rng.random_range(r[0]..r[1])
            }
        })
    };
    let s = draw(params.s_range);
    let d_util = draw(params.d_range);
    let c = draw(params.c_range);
    let mean_c = 0.5 * (params.c_range[0] + params.c_range[1]);
    let cap = n_users as f64 * mean_c / (params.load_factor * n_stations as f64);
    Sp1Instance::new(
        s,
        d_util,
        c,
        vec![cap; n_stations],
        vec![params.d_budget; n_stations],
        params.couple_y,
    )
}

impl Sp1Instance {
    pub fn new(
        s: Array2<f64>,
        d_util: Array2<f64>,
        c: Array2<f64>,
        c_cap: Vec<f64>,
        d_cap: Vec<f64>,
        couple_y: bool,
    ) -> Result<Self> {
        let (n, m) = s.dim();
        let n_constraints = 2 * m + if couple_y { n * m } else { 0 };
        let dims = ProblemDims::new(n, m, n_constraints)?;
        check_shape("s", &s, (n, m))?;
        check_shape("d_util", &d_util, (n, m))?;
        check_shape("c", &c, (n, m))?;
        if c_cap.len() != m || d_cap.len() != m {
            return Err(Error::Dimension("budgets need one entry per column".into()));
        }
        if s.iter().any(|&v| v < 0.0) {
            return Err(Error::Dimension("s must be nonnegative".into()));
        }
        if c.iter().any(|&v| v < 0.0) {
            return Err(Error::Dimension("demands must be nonnegative".into()));
        }
        if c_cap.iter().chain(&d_cap).any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Dimension("budgets must be finite and nonnegative".into()));
        }
        let caps = vec![CapacityConstraint {
            demand: c.clone(),
            capacity: c_cap.clone(),
        }];
        Ok(Self {
            dims,
            s,
            d_util,
            c,
            c_cap,
            d_cap,
            couple_y,
            caps,
        })
    }

    fn x_part(&self, x: &Array2<f64>) -> f64 {
        Zip::from(&self.s)
            .and(x)
            .fold(0.0, |acc, &s, &x| acc + (s * x).ln_1p())
    }

    /// Allocation when every row may receive resources: each budget goes to the column's best row.
    fn free_allocation(&self) -> Array2<f64> {
        let mut y = Array2::zeros(self.dims.shape());
        for j in 0..self.dims.n_cols {
            let best = argmax(self.d_util.column(j).iter().copied());
            y[[best, j]] = self.d_cap[j];
        }
        y
    }
}

impl MixedProblem for Sp1Instance {
    fn dims(&self) -> ProblemDims {
        self.dims
    }

    fn objective(&self, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        self.x_part(x) + (&self.d_util * y).sum()
    }

    fn constraint_residuals(&self, x: &Array2<f64>, y: &Array2<f64>) -> Vec<f64> {
        let m = self.dims.n_cols;
        let mut g = Vec::with_capacity(self.dims.n_constraints);
        for j in 0..m {
            g.push(y.column(j).sum() - self.d_cap[j]);
        }
        for j in 0..m {
            g.push(self.c.column(j).dot(&x.column(j)) - self.c_cap[j]);
        }
        if self.couple_y {
            for ((i, j), &v) in y.indexed_iter() {
                g.push(v - self.d_cap[j] * x[[i, j]]);
            }
        }
        g
    }

    fn objective_gradient(&self, x: &Array2<f64>, _y: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let gx = Zip::from(&self.s).and(x).map_collect(|&s, &x| s / (1.0 + s * x));
        (gx, self.d_util.clone())
    }

    fn constraint_vjp(
        &self,
        _x: &Array2<f64>,
        _y: &Array2<f64>,
        weights: &[f64],
    ) -> (Array2<f64>, Array2<f64>) {
        let (n, m) = self.dims.shape();
        let mut gx = Array2::zeros((n, m));
        let mut gy = Array2::zeros((n, m));
        for i in 0..n {
            for j in 0..m {
                gy[[i, j]] = weights[j];
                gx[[i, j]] = weights[m + j] * self.c[[i, j]];
                if self.couple_y {
                    let w = weights[2 * m + i * m + j];
                    gy[[i, j]] += w;
                    gx[[i, j]] -= w * self.d_cap[j];
                }
            }
        }
        (gx, gy)
    }

    fn allocation_upper(&self) -> Array2<f64> {
        Array2::from_shape_fn(self.dims.shape(), |(_, j)| self.d_cap[j])
    }

    fn inner_solve(&self, x: &BinaryAssignment) -> Result<InnerSolution> {
        let (n, m) = self.dims.shape();
        if x.n_rows() != n || x.n_cols() != m {
            return Err(Error::Dimension("assignment shape does not match instance".into()));
        }
        let mut load = vec![0.0; m];
        for (i, &j) in x.columns().iter().enumerate() {
            load[j] += self.c[[i, j]];
        }
        if load.iter().zip(&self.c_cap).any(|(l, c)| l - c > FEASIBILITY_TOL) {
            return Err(Error::Infeasible);
        }
        let y = if self.couple_y {
            let mut y = Array2::zeros((n, m));
            for j in 0..m {
                let mut best: Option<usize> = None;
                for i in x.rows_of(j) {
                    if best.is_none_or(|b| self.d_util[[i, j]] > self.d_util[[b, j]]) {
                        best = Some(i);
                    }
                }
                if let Some(i) = best {
                    y[[i, j]] = self.d_cap[j];
                }
            }
            y
        } else {
            self.free_allocation()
        };
        let xm = x.to_matrix();
        Ok(InnerSolution {
            objective: self.objective(&xm, &y),
            allocation: ContinuousAllocation::new(y)?,
        })
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
        if self.couple_y {
            return relax::solve_relaxed_warm(self, fixed, cfg, warm);
        }
        cfg.validate()?;
        if fixed.len() != self.dims.n_rows || fixed.iter().flatten().any(|&j| j >= self.dims.n_cols) {
            return Err(Error::Dimension("fixings do not match the instance".into()));
        }
        if feasibility::relaxation_obviously_infeasible(self, fixed) {
            return Err(Error::Infeasible);
        }
        let start = warm
            .map(|w| w.multipliers.clone())
            .filter(|p| p.len() == self.dims.n_cols && p.iter().all(|v| v.is_finite() && *v >= 0.0));
        CapacityDual { inst: self, fixed }.solve(cfg, start)
    }

    fn capacities(&self) -> &[CapacityConstraint] {
        &self.caps
    }
}

const MAX_PRICE: f64 = 1e12;

/// Maximizes `sum_j log(1 + s_j x_j) - a_j x_j` over the simplex by bisection on the row multiplier.
fn row_response(s: &[f64], a: &[f64], out: &mut [f64]) -> f64 {
    let m = s.len();
    if m == 1 {
        out[0] = 1.0;
        return s[0].ln_1p() - a[0];
    }
    let s_eff = |j: usize| s[j].max(1e-12);
    let fill = |nu: f64, out: &mut [f64]| -> f64 {
        let mut total = 0.0;
        for j in 0..m {
            let d = nu + a[j];
            let v = if d > 0.0 { (1.0 / d - 1.0 / s_eff(j)).clamp(0.0, 1.0) } else { 1.0 };
            out[j] = v;
            total += v;
        }
        total
    };
    let mut hi = (0..m).map(|j| s_eff(j) - a[j]).fold(f64::NEG_INFINITY, f64::max);
    let mut lo = (0..m).map(|j| s_eff(j) / (1.0 + s_eff(j)) - a[j]).fold(f64::INFINITY, f64::min);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if fill(mid, out) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    let total = fill(0.5 * (lo + hi), out);
    if total > 0.0 {
        out.iter_mut().for_each(|v| *v /= total);
    } else {
        let best = argmax((0..m).map(|j| s[j] - a[j]));
        out[best] = 1.0;
    }
    (0..m).map(|j| (s[j] * out[j]).ln_1p() - a[j] * out[j]).sum()
}

/// Lagrangian dual of the uncoupled relaxation over the capacity prices.
///
/// The allocation part does not involve `x`, so only the `M` capacity
/// constraints are dualized; each row then has a closed-form best response.
/// Every nonnegative price vector gives a valid bound.
struct CapacityDual<'a> {
    inst: &'a Sp1Instance,
    fixed: &'a [Option<usize>],
}

struct CapacityEval {
    value: f64,
    grad: Vec<f64>,
    x: Array2<f64>,
}

impl CapacityDual<'_> {
    fn eval(&self, price: &[f64]) -> CapacityEval {
        let inst = self.inst;
        let (n, m) = inst.dims.shape();
        let mut x = Array2::zeros((n, m));
        let mut value: f64 = price.iter().zip(&inst.c_cap).map(|(p, c)| p * c).sum();
        let mut a = vec![0.0; m];
        let mut row = vec![0.0; m];
        for i in 0..n {
            match self.fixed[i] {
                Some(j) => {
                    x[[i, j]] = 1.0;
                    value += inst.s[[i, j]].ln_1p() - price[j] * inst.c[[i, j]];
                }
                None => {
                    for j in 0..m {
                        a[j] = price[j] * inst.c[[i, j]];
                    }
                    let s = inst.s.row(i);
                    value += row_response(s.as_slice().expect("standard layout"), &a, &mut row);
                    x.row_mut(i).iter_mut().zip(&row).for_each(|(d, v)| *d = *v);
                }
            }
        }
        let grad = (0..m)
            .map(|j| inst.c_cap[j] - inst.c.column(j).dot(&x.column(j)))
            .collect();
        CapacityEval { value, grad, x }
    }

    fn solve(&self, cfg: &RelaxConfig, start: Option<Vec<f64>>) -> Result<RelaxedSolution> {
        let inst = self.inst;
        let m = inst.dims.n_cols;
        let mut price = start.unwrap_or_else(|| vec![0.0; m]);
        let mut cur = self.eval(&price);
        let scale = inst.c_cap.iter().fold(1.0f64, |acc, &c| acc.max(c));
        let tol = cfg.tolerance * scale;
        let mut step = 1.0;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < cfg.max_iterations {
            let stationarity = price
                .iter()
                .zip(&cur.grad)
                .map(|(&p, &g)| ((p - g).max(0.0) - p).abs())
                .fold(0.0, f64::max);
            if stationarity <= tol {
                converged = true;
                break;
            }
            iterations += 1;
            loop {
                let trial: Vec<f64> = price
                    .iter()
                    .zip(&cur.grad)
                    .map(|(&p, &g)| (p - step * g).max(0.0))
                    .collect();
                let next = self.eval(&trial);
                let (mut moved, mut predicted) = (0.0, 0.0);
                for ((t, p), g) in trial.iter().zip(&price).zip(&cur.grad) {
                    moved += (t - p) * (t - p);
                    predicted += g * (t - p);
                }
                if next.value <= cur.value + predicted + moved / (2.0 * step) + 1e-13 * cur.value.abs().max(1.0) {
                    price = trial;
                    cur = next;
                    step *= 2.0;
                    break;
                }
                step *= 0.5;
                if step < 1e-20 {
                    break;
                }
            }
            if step < 1e-20 {
                break;
            }
            if price.iter().any(|&p| p >= MAX_PRICE) {
                return Err(Error::Infeasible);
            }
        }
        if !cur.value.is_finite() {
            return Err(Error::Numerical("capacity dual is not finite".into()));
        }
        let y = self.inst.free_allocation();
        let offset = (&inst.d_util * &y).sum();
        let x = relax::clean_rows(cur.x);
        let value = inst.objective(&x, &y);
        let violation = inst.constraint_residuals(&x, &y).into_iter().fold(0.0, f64::max);
        Ok(RelaxedSolution {
            x_tilde: RelaxedAssignment::new(x)?,
            y: ContinuousAllocation::new(y)?,
            value,
            bound: cur.value + offset,
            certified: true,
            converged,
            iterations,
            violation_history: vec![violation],
            multipliers: price,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn budget_goes_to_best_row() {
        let p = Sp1Instance::new(
            array![[0.0], [0.0]],
            array![[3.0], [5.0]],
            array![[0.1], [0.1]],
            vec![1.0],
            vec![4.0],
            false,
        )
        .unwrap();
        let x = BinaryAssignment::new(vec![0, 0], 1).unwrap();
        let sol = p.inner_solve(&x).unwrap();
        assert_eq!(sol.allocation.matrix(), &array![[0.0], [4.0]]);
        // s = 0 makes the log terms vanish
        assert!((sol.objective - 20.0).abs() < 1e-12);
    }

    #[test]
    fn capacity_violation_is_infeasible() {
        let p = Sp1Instance::new(
            array![[1.0], [1.0]],
            array![[1.0], [1.0]],
            array![[0.6], [0.6]],
            vec![1.0],
            vec![1.0],
            false,
        )
        .unwrap();
        let x = BinaryAssignment::new(vec![0, 0], 1).unwrap();
        assert!(matches!(p.inner_solve(&x), Err(Error::Infeasible)));
    }

    #[test]
    fn one_column_relaxation_is_forced() {
        let p = Sp1Instance::new(
            array![[1.5], [0.7]],
            array![[1.2], [0.9]],
            array![[0.3], [0.4]],
            vec![1.0],
            vec![1.0],
            false,
        )
        .unwrap();
        let sol = p.relaxed_solve(&[None, None], &RelaxConfig::default()).unwrap();
        let expected = 2.5f64.ln() + 1.7f64.ln() + 1.2;
        assert_eq!(sol.x_tilde.matrix(), &array![[1.0], [1.0]]);
        assert!((sol.value - expected).abs() < 1e-9);

        let tight = Sp1Instance::new(p.s.clone(), p.d_util.clone(), p.c.clone(), vec![0.5], vec![1.0], false).unwrap();
        assert!(matches!(
            tight.relaxed_solve(&[None, None], &RelaxConfig::default()),
            Err(Error::Infeasible)
        ));
    }

    #[test]
    fn generator_is_seeded_and_sized() {
        let p = Sp1Params::default();
        let a = gen_sp1(8, 4, 3, &p).unwrap();
        let b = gen_sp1(8, 4, 3, &p).unwrap();
        assert_eq!(a, b);
        assert!(a.s.iter().all(|&v| (0.5..2.0).contains(&v)));
        assert!(a.c.iter().all(|&v| (0.1..1.0).contains(&v)));
        let expected_cap = 8.0 * 0.55 / (0.7 * 4.0);
        assert!(a.c_cap.iter().all(|&c| (c - expected_cap).abs() < 1e-12));
        assert_ne!(a, gen_sp1(8, 4, 4, &p).unwrap());
    }

    #[test]
    fn coupled_variant_only_feeds_associated_rows() {
        let p = Sp1Instance::new(
            array![[1.0, 1.0], [1.0, 1.0]],
            array![[1.0, 3.0], [2.0, 1.0]],
            array![[0.1, 0.1], [0.1, 0.1]],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            true,
        )
        .unwrap();
        let x = BinaryAssignment::new(vec![0, 0], 2).unwrap();
        let sol = p.inner_solve(&x).unwrap();
        assert_eq!(sol.allocation.matrix(), &array![[0.0, 0.0], [1.0, 0.0]]);
        let g = p.constraint_residuals(&x.to_matrix(), sol.allocation.matrix());
        assert!(g.iter().all(|&v| v <= 1e-12));
    }
}
