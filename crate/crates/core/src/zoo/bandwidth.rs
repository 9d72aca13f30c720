//! Throughput maximization with per-user minimum rates.
//!
//! ```text
//! max  sum_ij x_ij y_ij r_ij
//! s.t. sum_j x_ij y_ij r_ij >= D_i,   sum_i x_ij y_ij <= W_j
//! ```
//!
//! The bilinear terms are handled with link constraints `y_ij <= W_j x_ij`,
//! which make the relaxation a linear program over `(x, y)`.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_shape, spectral_efficiency, Geometry, LinkBudgetParams};
use crate::error::{Error, Result};
use crate::problem::{
    BinaryAssignment, CapacityConstraint, ContinuousAllocation, InnerSolution, MixedProblem,
    ProblemDims, FEASIBILITY_TOL,
};

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthInstance {
    dims: ProblemDims,
    pub gamma: Array2<f64>,
    pub rate: Array2<f64>,
    pub min_rates: Vec<f64>,
    pub budgets: Vec<f64>,
    pub geometry: Option<Geometry>,
    pub link: LinkBudgetParams,
    caps: Vec<CapacityConstraint>,
}

pub fn gen_bandwidth(
    n_users: usize,
    n_stations: usize,
    seed: u64,
    min_rates: &[f64],
    params: &LinkBudgetParams,
) -> Result<BandwidthInstance> {
    params.validate()?;
    ProblemDims::new(n_users, n_stations, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geometry = Geometry::sample(n_users, n_stations, params.area_side_m(n_stations), &mut rng);
    BandwidthInstance::from_geometry(geometry, *params, min_rates.to_vec())
}

impl BandwidthInstance {
    pub fn from_geometry(geometry: Geometry, link: LinkBudgetParams, min_rates: Vec<f64>) -> Result<Self> {
        link.validate()?;
        let (gamma, _) = geometry.gamma(&link);
        let m = gamma.ncols();
        let mut inst = Self::from_gamma(gamma, min_rates, vec![link.bandwidth_mhz; m])?;
        inst.geometry = Some(geometry);
        inst.link = link;
        Ok(inst)
    }

    pub fn from_gamma(gamma: Array2<f64>, min_rates: Vec<f64>, budgets: Vec<f64>) -> Result<Self> {
        let (n, m) = gamma.dim();
        let dims = ProblemDims::new(n, m, n * m + m + n)?;
        check_shape("gamma", &gamma, (n, m))?;
        if gamma.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::Dimension("gamma must be positive".into()));
        }
        if min_rates.len() != n || min_rates.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
            return Err(Error::Dimension("need one finite nonnegative minimum rate per user".into()));
        }
        if budgets.len() != m || budgets.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::Dimension("need one positive budget per station".into()));
        }
        let rate = spectral_efficiency(&gamma);
        let demand = Array2::from_shape_fn((n, m), |(i, j)| min_rates[i] / rate[[i, j]]);
        let caps = vec![CapacityConstraint {
            demand,
            capacity: budgets.clone(),
        }];
        Ok(Self {
            dims,
            gamma,
            rate,
            min_rates,
            link: LinkBudgetParams {
                bandwidth_mhz: budgets[0],
                ..LinkBudgetParams::default()
            },
            budgets,
            geometry: None,
            caps,
        })
    }

    /// The same instance without minimum-rate requirements.
    pub fn without_min_rates(&self) -> Self {
        let mut out = Self::from_gamma(self.gamma.clone(), vec![0.0; self.dims.n_rows], self.budgets.clone())
            .expect("valid instance stays valid");
        out.geometry = self.geometry.clone();
        out.link = self.link;
        out
    }
}

impl MixedProblem for BandwidthInstance {
    fn dims(&self) -> ProblemDims {
        self.dims
    }

    fn objective(&self, _x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        (y * &self.rate).sum()
    }

    fn constraint_residuals(&self, x: &Array2<f64>, y: &Array2<f64>) -> Vec<f64> {
        let (n, m) = self.dims.shape();
        let mut g = Vec::with_capacity(self.dims.n_constraints);
        for ((i, j), &v) in y.indexed_iter() {
            g.push(v - self.budgets[j] * x[[i, j]]);
        }
        for j in 0..m {
            g.push(y.column(j).sum() - self.budgets[j]);
        }
        for i in 0..n {
            g.push(self.min_rates[i] - y.row(i).dot(&self.rate.row(i)));
        }
        g
    }

    fn objective_gradient(&self, x: &Array2<f64>, _y: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        (Array2::zeros(x.dim()), self.rate.clone())
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
                let link = weights[i * m + j];
                gx[[i, j]] = -link * self.budgets[j];
                gy[[i, j]] = link + weights[n * m + j] - weights[n * m + m + i] * self.rate[[i, j]];
            }
        }
        (gx, gy)
    }

    fn allocation_upper(&self) -> Array2<f64> {
        Array2::from_shape_fn(self.dims.shape(), |(_, j)| self.budgets[j])
    }

    /// Meets every minimum rate, then gives the leftover to the station's fastest user.
    fn inner_solve(&self, x: &BinaryAssignment) -> Result<InnerSolution> {
        let (n, m) = self.dims.shape();
        if x.n_rows() != n || x.n_cols() != m {
            return Err(Error::Dimension("assignment shape does not match instance".into()));
        }
        let mut y = Array2::zeros((n, m));
        for j in 0..m {
            let users: Vec<usize> = x.rows_of(j).collect();
            let Some(&first) = users.first() else { continue };
            let mut used = 0.0;
            let mut fastest = first;
            for &i in &users {
                y[[i, j]] = self.min_rates[i] / self.rate[[i, j]];
                used += y[[i, j]];
                if self.rate[[i, j]] > self.rate[[fastest, j]] {
                    fastest = i;
                }
            }
            if used > self.budgets[j] + FEASIBILITY_TOL {
                return Err(Error::Infeasible);
            }
            y[[fastest, j]] += (self.budgets[j] - used).max(0.0);
        }
        Ok(InnerSolution {
            objective: (&y * &self.rate).sum(),
            allocation: ContinuousAllocation::new(y)?,
        })
    }

    fn capacities(&self) -> &[CapacityConstraint] {
        &self.caps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_pair_takes_the_whole_band() {
        let p = BandwidthInstance::from_gamma(array![[3.0]], vec![0.0], vec![10.0]).unwrap();
        let sol = p.inner_solve(&BinaryAssignment::new(vec![0], 1).unwrap()).unwrap();
        assert_eq!(sol.allocation.matrix()[[0, 0]], 10.0);
        assert!((sol.objective - 10.0 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn unmeetable_minimum_is_infeasible() {
        let p = BandwidthInstance::from_gamma(array![[1.0, 1.0]], vec![50.0], vec![10.0, 10.0]).unwrap();
        for c in 0..2 {
            let x = BinaryAssignment::new(vec![c], 2).unwrap();
            assert!(matches!(p.inner_solve(&x), Err(Error::Infeasible)));
        }
    }

    #[test]
    fn leftover_goes_to_fastest_user() {
        let p = BandwidthInstance::from_gamma(array![[1.0], [3.0]], vec![1.0, 1.0], vec![10.0]).unwrap();
        let sol = p.inner_solve(&BinaryAssignment::new(vec![0, 0], 1).unwrap()).unwrap();
        let y = sol.allocation.matrix();
        assert!((y[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((y[[1, 0]] - 9.0).abs() < 1e-12);
        let g = p.constraint_residuals(&array![[1.0], [1.0]], y);
        assert!(g.iter().all(|&v| v <= 1e-12));
    }
}
