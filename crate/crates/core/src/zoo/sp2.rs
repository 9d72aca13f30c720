//! Joint association and bandwidth allocation with log utility.
//!
//! ```text
//! max  sum_ij log(x_ij y_ij r_ij),   r_ij = log2(1 + gamma_ij)
//! s.t. sum_j x_ij y_ij r_ij <= Q   (per user),   sum_i y_ij <= C   (per station)
//! ```
//!
//! Only associated pairs enter the objective. Bandwidth `y` is in MHz, so
//! `y r` is a rate in Mbit/s. [`QosMode::Floor`] flips the per-user rate
//! constraint to `>= Q`, a minimum-rate variant that is not the printed model.
//!
//! The relaxation uses the perspective `x log(y r / x)`, which is jointly
//! concave and agrees with the objective on binary rows. It is solved through
//! its dual over per-station bandwidth prices: for fixed prices each pair has a
//! closed-form bandwidth per unit of association, and each free row picks its
//! best station, smoothed by a log-sum-exp that is driven towards zero.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_shape, spectral_efficiency, Geometry, LinkBudgetParams};
use crate::error::{Error, Result};
use crate::feasibility;
use crate::problem::{
    BinaryAssignment, CapacityConstraint, ContinuousAllocation, InnerSolution, MixedProblem,
    ProblemDims, FEASIBILITY_TOL,
};
use crate::relax::{clean_rows, RelaxConfig, RelaxedSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QosMode {
    /// Each user's rate is capped at `Q`, as printed.
    #[default]
    Cap,
    /// Each user's rate must reach at least `Q`.
    Floor,
}

impl std::str::FromStr for QosMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cap" => Ok(QosMode::Cap),
            "floor" => Ok(QosMode::Floor),
            other => Err(Error::Config(format!("unknown qos mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sp2Instance {
    dims: ProblemDims,
    pub gamma: Array2<f64>,
    pub rate: Array2<f64>,
    pub q: f64,
    pub bandwidth: f64,
    pub mode: QosMode,
    pub geometry: Option<Geometry>,
    pub link: LinkBudgetParams,
    /// Pairs whose distance was clamped to 1 m when deriving `gamma`.
    pub clamped_pairs: usize,
    caps: Vec<CapacityConstraint>,
}

/// Places `n_stations` stations and `n_users` users uniformly in a square sized by the station density.
pub fn gen_sp2(
    n_users: usize,
    n_stations: usize,
    params: &LinkBudgetParams,
    q: f64,
    seed: u64,
) -> Result<Sp2Instance> {
    params.validate()?;
    ProblemDims::new(n_users, n_stations, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geometry = Geometry::sample(n_users, n_stations, params.area_side_m(n_stations), &mut rng);
    Sp2Instance::from_geometry(geometry, *params, q, QosMode::Cap)
}

impl Sp2Instance {
    pub fn from_geometry(geometry: Geometry, link: LinkBudgetParams, q: f64, mode: QosMode) -> Result<Self> {
        link.validate()?;
        let (gamma, clamped) = geometry.gamma(&link);
        let mut inst = Self::from_gamma(gamma, q, link.bandwidth_mhz, mode)?;
        inst.geometry = Some(geometry);
        inst.link = link;
        inst.clamped_pairs = clamped;
        Ok(inst)
    }

    pub fn from_gamma(gamma: Array2<f64>, q: f64, bandwidth: f64, mode: QosMode) -> Result<Self> {
        let (n, m) = gamma.dim();
        let dims = ProblemDims::new(n, m, n * m + m)?;
        check_shape("gamma", &gamma, (n, m))?;
        if gamma.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::Dimension("gamma must be positive".into()));
        }
        if !(q > 0.0 && q.is_finite()) || !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config("Q and C must be positive".into()));
        }
        let rate = spectral_efficiency(&gamma);
        let mut inst = Self {
            dims,
            gamma,
            rate,
            q,
            bandwidth,
            mode,
            geometry: None,
            link: LinkBudgetParams {
                bandwidth_mhz: bandwidth,
                ..LinkBudgetParams::default()
            },
            clamped_pairs: 0,
            caps: Vec::new(),
        };
        inst.set_mode(mode);
        Ok(inst)
    }

    /// Builds an instance straight from spectral efficiencies `r`.
    pub fn from_rates(rate: Array2<f64>, q: f64, bandwidth: f64, mode: QosMode) -> Result<Self> {
        let gamma = rate.mapv(|r| r.exp2() - 1.0);
        let mut inst = Self::from_gamma(gamma, q, bandwidth, mode)?;
        inst.rate = rate;
        inst.set_mode(mode);
        Ok(inst)
    }

    pub fn with_mode(mut self, mode: QosMode) -> Self {
        self.set_mode(mode);
        self
    }

    fn set_mode(&mut self, mode: QosMode) {
        self.mode = mode;
        self.caps = match mode {
            QosMode::Cap => Vec::new(),
            QosMode::Floor => vec![CapacityConstraint {
                demand: self.rate.mapv(|r| self.q / r),
                capacity: vec![self.bandwidth; self.dims.n_cols],
            }],
        };
    }

    /// Bandwidth per unit of association for pair `(i, j)` at station price `mu`.
    fn unit_bandwidth(&self, r: f64, mu: f64) -> f64 {
        let level = self.q / r;
        match self.mode {
            QosMode::Cap => level.min(1.0 / mu),
            QosMode::Floor => level.max(1.0 / mu),
        }
    }
}

/// Exact per-station allocation maximizing `sum log(y_i r_i)` with `sum y_i <= budget`.
///
/// In cap mode `y_i <= q / r_i` and unused bandwidth stays idle once every cap
/// binds; in floor mode `y_i >= q / r_i` and an overloaded station is infeasible.
pub fn station_allocation(rates: &[f64], q: f64, budget: f64, mode: QosMode) -> Result<Vec<f64>> {
    let n = rates.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let levels: Vec<f64> = rates.iter().map(|r| q / r).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut y = vec![0.0; n];
    match mode {
        QosMode::Cap => {
            order.sort_by(|&a, &b| levels[a].total_cmp(&levels[b]));
            let mut used = 0.0;
            for (k, &i) in order.iter().enumerate() {
                let share = (budget - used) / (n - k) as f64;
                if share <= levels[i] {
                    for &rest in &order[k..] {
                        y[rest] = share;
                    }
                    return Ok(y);
                }
                y[i] = levels[i];
                used += levels[i];
            }
            Ok(y)
        }
        QosMode::Floor => {
            let total: f64 = levels.iter().sum();
            if total > budget + FEASIBILITY_TOL {
                return Err(Error::Infeasible);
            }
            order.sort_by(|&a, &b| levels[b].total_cmp(&levels[a]));
            let mut used = 0.0;
            for (k, &i) in order.iter().enumerate() {
                let share = (budget - used) / (n - k) as f64;
                if share >= levels[i] {
                    for &rest in &order[k..] {
                        y[rest] = share;
                    }
                    return Ok(y);
                }
                y[i] = levels[i];
                used += levels[i];
            }
            Ok(y)
        }
    }
}

/// `x log(u / x)` with its limits at the boundary.
fn perspective(x: f64, u: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if u <= 0.0 {
        f64::NEG_INFINITY
    } else {
        x * (u / x).ln()
    }
}

impl MixedProblem for Sp2Instance {
    fn dims(&self) -> ProblemDims {
        self.dims
    }

    fn objective(&self, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let mut total = 0.0;
        for ((idx, &xv), &yv) in x.indexed_iter().zip(y.iter()) {
            total += perspective(xv, yv * self.rate[idx]);
        }
        total
    }

    fn constraint_residuals(&self, x: &Array2<f64>, y: &Array2<f64>) -> Vec<f64> {
        let (n, m) = self.dims.shape();
        let mut g = Vec::with_capacity(n * m + m);
        for ((idx, &xv), &yv) in x.indexed_iter().zip(y.iter()) {
            let served = yv * self.rate[idx];
            g.push(match self.mode {
                QosMode::Cap => served - self.q * xv,
                QosMode::Floor => self.q * xv - served,
            });
        }
        for j in 0..m {
            g.push(y.column(j).sum() - self.bandwidth);
        }
        g
    }

    fn objective_gradient(&self, x: &Array2<f64>, y: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut gx = Array2::zeros(x.dim());
        let mut gy = Array2::zeros(y.dim());
        for ((i, j), &xv) in x.indexed_iter() {
            let r = self.rate[[i, j]];
            let xs = xv.max(1e-300);
            let u = (y[[i, j]] * r).max(1e-300);
            gx[[i, j]] = (u / xs).ln() - 1.0;
            gy[[i, j]] = r * xs / u;
        }
        (gx, gy)
    }

    fn constraint_vjp(
        &self,
        _x: &Array2<f64>,
        _y: &Array2<f64>,
        weights: &[f64],
    ) -> (Array2<f64>, Array2<f64>) {
        let (n, m) = self.dims.shape();
        let sign = match self.mode {
            QosMode::Cap => 1.0,
            QosMode::Floor => -1.0,
        };
        let mut gx = Array2::zeros((n, m));
        let mut gy = Array2::zeros((n, m));
        for i in 0..n {
            for j in 0..m {
                let w = weights[i * m + j];
                gy[[i, j]] = sign * w * self.rate[[i, j]] + weights[n * m + j];
                gx[[i, j]] = -sign * w * self.q;
            }
        }
        (gx, gy)
    }

    fn allocation_upper(&self) -> Array2<f64> {
        Array2::from_elem(self.dims.shape(), self.bandwidth)
    }

    fn inner_solve(&self, x: &BinaryAssignment) -> Result<InnerSolution> {
        let (n, m) = self.dims.shape();
        if x.n_rows() != n || x.n_cols() != m {
            return Err(Error::Dimension("assignment shape does not match instance".into()));
        }
        let mut y = Array2::zeros((n, m));
        let mut objective = 0.0;
        for j in 0..m {
            let users: Vec<usize> = x.rows_of(j).collect();
            let rates: Vec<f64> = users.iter().map(|&i| self.rate[[i, j]]).collect();
            let alloc = station_allocation(&rates, self.q, self.bandwidth, self.mode)?;
            for ((&i, &r), &b) in users.iter().zip(&rates).zip(&alloc) {
                if !(b > 0.0) {
                    return Err(Error::Infeasible);
                }
                y[[i, j]] = b;
                objective += (b * r).ln();
            }
        }
        Ok(InnerSolution {
            allocation: ContinuousAllocation::new(y)?,
            objective,
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
        cfg.validate()?;
        if fixed.len() != self.dims.n_rows {
            return Err(Error::Dimension("one fixing per row expected".into()));
        }
        if feasibility::relaxation_obviously_infeasible(self, fixed) {
            return Err(Error::Infeasible);
        }
        let start = warm
            .map(|w| w.multipliers.clone())
            .filter(|mu| mu.len() == self.dims.n_cols && mu.iter().all(|&v| v > 0.0));
        DualSolver::new(self, fixed).solve(cfg, start)
    }

    fn capacities(&self) -> &[CapacityConstraint] {
        &self.caps
    }
}

const SMOOTHING: [f64; 4] = [1.0, 1e-1, 1e-2, 1e-3];
const MIN_PRICE: f64 = 1e-12;
const MAX_PRICE: f64 = 1e12;

#[derive(Clone)]
struct DualEval {
    value: f64,
    /// `dD/dmu`.
    grad: Vec<f64>,
    probs: Array2<f64>,
    unit: Array2<f64>,
}

struct DualSolver<'a> {
    inst: &'a Sp2Instance,
    fixed: &'a [Option<usize>],
}

impl<'a> DualSolver<'a> {
    fn new(inst: &'a Sp2Instance, fixed: &'a [Option<usize>]) -> Self {
        Self { inst, fixed }
    }

    /// Smoothed dual `D_tau(mu)`; `tau = 0` gives the exact dual function.
    fn eval(&self, mu: &[f64], tau: f64) -> DualEval {
        let inst = self.inst;
        let (n, m) = inst.dims.shape();
        let mut unit = Array2::zeros((n, m));
        let mut kappa = Array2::zeros((n, m));
        for ((i, j), r) in inst.rate.indexed_iter() {
            let t = inst.unit_bandwidth(*r, mu[j]);
            unit[[i, j]] = t;
            kappa[[i, j]] = (r * t).ln() - mu[j] * t;
        }
        let mut value = inst.bandwidth * mu.iter().sum::<f64>();
        let mut probs = Array2::zeros((n, m));
        for i in 0..n {
            match self.fixed[i] {
                Some(j) => {
                    value += kappa[[i, j]];
                    probs[[i, j]] = 1.0;
                }
                None => {
                    let row = kappa.row(i);
                    let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if tau > 0.0 {
                        let mut z = 0.0;
                        for j in 0..m {
                            let e = ((row[j] - top) / tau).exp();
                            probs[[i, j]] = e;
                            z += e;
                        }
                        value += top + tau * z.ln();
                        probs.row_mut(i).mapv_inplace(|p| p / z);
                    } else {
                        value += top;
                        let best = crate::problem::argmax(row.iter().copied());
                        probs[[i, best]] = 1.0;
                    }
                }
            }
        }
        let mut grad = vec![inst.bandwidth; m];
        for (((_, j), _), (&p, &t)) in probs.indexed_iter().zip(probs.iter().zip(unit.iter())) {
            grad[j] -= p * t;
        }
        DualEval {
            value,
            grad,
            probs,
            unit,
        }
    }

    fn initial_prices(&self) -> Vec<f64> {
        let (n, m) = self.inst.dims.shape();
        let share = (n as f64 / m as f64).max(1.0);
        vec![(share / self.inst.bandwidth).clamp(MIN_PRICE, MAX_PRICE); m]
    }

    /// Accelerated projected gradient on the prices with backtracking and restarts, one smoothing level.
    fn minimize(&self, mu: &mut Vec<f64>, tau: f64, tol: f64, budget: usize) -> Result<(usize, bool)> {
        let project = |v: f64| v.clamp(MIN_PRICE, MAX_PRICE);
        let mut cur = self.eval(mu, tau);
        let mut prev = mu.clone();
        let mut momentum = 1.0f64;
        let mut step = 1.0 / self.inst.bandwidth;
        let mut iterations = 0;
        while iterations < budget {
            iterations += 1;
            let stationarity = mu
                .iter()
                .zip(&cur.grad)
                .map(|(&p, &g)| (project(p - g) - p).abs())
                .fold(0.0, f64::max);
            if stationarity <= tol {
                return Ok((iterations, true));
            }
            let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / next_momentum;
            let look: Vec<f64> = mu.iter().zip(&prev).map(|(&p, &q)| project(p + beta * (p - q))).collect();
            let at_look = if beta > 0.0 { self.eval(&look, tau) } else { cur.clone() };
            let (base, base_eval) = if at_look.value.is_finite() { (look, at_look) } else { (mu.clone(), cur.clone()) };
            let accepted = loop {
                let trial: Vec<f64> = base.iter().zip(&base_eval.grad).map(|(&p, &g)| project(p - step * g)).collect();
                let next = self.eval(&trial, tau);
                let (mut moved, mut predicted) = (0.0, 0.0);
                for ((t, p), g) in trial.iter().zip(&base).zip(&base_eval.grad) {
                    moved += (t - p) * (t - p);
                    predicted += g * (t - p);
                }
                let slack = 1e-14 * base_eval.value.abs();
                if next.value.is_finite() && next.value <= base_eval.value + predicted + moved / (2.0 * step) + slack {
                    break Some((trial, next));
                }
                step *= 0.5;
                if step < 1e-30 {
                    break None;
                }
            };
            let Some((trial, next)) = accepted else {
                return Ok((iterations, false));
            };
            if beta > 0.0 && next.value > cur.value {
                // restart from the last iterate without momentum
                momentum = 1.0;
                prev = mu.clone();
                continue;
            }
            if beta == 0.0 && next.value >= cur.value - 1e-15 * cur.value.abs() {
                // no progress left at double precision
                return Ok((iterations, true));
            }
            prev = std::mem::replace(mu, trial);
            cur = next;
            momentum = next_momentum;
            step *= 1.2;
            if mu.iter().any(|&p| p >= MAX_PRICE) {
                return Err(Error::Infeasible);
            }
        }
        Ok((iterations, false))
    }

    fn solve(&self, cfg: &RelaxConfig, start: Option<Vec<f64>>) -> Result<RelaxedSolution> {
        let inst = self.inst;
        // warm prices already sit near the sharpest level's optimum
        let levels = if start.is_some() { &SMOOTHING[SMOOTHING.len() - 1..] } else { &SMOOTHING[..] };
        let mut mu = start.unwrap_or_else(|| self.initial_prices());
        let mut iterations = 0;
        let mut converged = false;
        let tol = cfg.tolerance.max(1e-9);
        for (k, &tau) in levels.iter().enumerate() {
            let last = k + 1 == levels.len();
            let level_tol = if last { tol } else { tol.max(1e-4) };
            let budget = cfg.max_iterations.saturating_sub(iterations).max(1);
            let (used, ok) = self.minimize(&mut mu, tau, level_tol, budget)?;
            iterations += used;
            converged = ok && last;
        }
        let tau = *SMOOTHING.last().unwrap();
        let smooth = self.eval(&mu, tau);
        let exact = self.eval(&mu, 0.0);
        if !exact.value.is_finite() {
            return Err(Error::Numerical("dual function is not finite".into()));
        }
        let x = clean_rows(smooth.probs);
        let mut y = &x * &smooth.unit;
        if inst.mode == QosMode::Cap {
            // scaling a station down keeps every rate cap satisfied
            for j in 0..inst.dims.n_cols {
                let load = y.column(j).sum();
                if load > inst.bandwidth {
                    y.column_mut(j).mapv_inplace(|v| v * inst.bandwidth / load);
                }
            }
        }
        let value = inst.objective(&x, &y);
        let violation = inst
            .constraint_residuals(&x, &y)
            .into_iter()
            .fold(0.0, f64::max);
        Ok(RelaxedSolution {
            x_tilde: crate::problem::RelaxedAssignment::new(x)?,
            y: ContinuousAllocation::new(y)?,
            value,
            bound: exact.value.min(smooth.value),
            certified: true,
            converged,
            iterations,
            violation_history: vec![violation],
            multipliers: mu,
        })
    }
}
