//! Benchmark problem families and the wireless link model they share.

pub mod bandwidth;
pub mod sp1;
pub mod sp2;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{
    BinaryAssignment, CapacityConstraint, InnerSolution, MixedProblem, ProblemDims, SearchState,
};
use crate::relax::{RelaxConfig, RelaxedSolution};

pub use bandwidth::{gen_bandwidth, BandwidthInstance};
pub use sp1::{gen_sp1, Sp1Instance, Sp1Params};
pub use sp2::{gen_sp2, QosMode, Sp2Instance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudgetParams {
    pub tx_power_dbm: f64,
    pub noise_dbm: f64,
    pub pathloss_a: f64,
    pub pathloss_b: f64,
    pub bs_density_per_km2: f64,
    pub bandwidth_mhz: f64,
}

impl Default for LinkBudgetParams {
    fn default() -> Self {
        Self {
            tx_power_dbm: 20.0,
            noise_dbm: -114.0,
            pathloss_a: 34.0,
            pathloss_b: 40.0,
            bs_density_per_km2: 16.0,
            bandwidth_mhz: 20.0,
        }
    }
}

impl LinkBudgetParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tx_power_dbm > self.noise_dbm) {
            return Err(Error::Config("transmit power must exceed noise power".into()));
        }
        if !(self.pathloss_b > 0.0) {
            return Err(Error::Config("path loss slope must be positive".into()));
        }
        if !(self.bs_density_per_km2 > 0.0) {
            return Err(Error::Config("station density must be positive".into()));
        }
        if !(self.bandwidth_mhz > 0.0) {
            return Err(Error::Config("bandwidth must be positive".into()));
        }
        Ok(())
    }

    /// Side of the square holding `n_stations` at the configured density, in meters.
    pub fn area_side_m(&self, n_stations: usize) -> f64 {
        (n_stations as f64 / self.bs_density_per_km2).sqrt() * 1000.0
    }
}

/// Linear SNR at `distance_m`: `10^((P_r - L(d) - P_n) / 10)` with `L(d) = a + b log10 d`.
///
/// Distances below 1 m are clamped to 1 m.
pub fn link_gamma(params: &LinkBudgetParams, distance_m: f64) -> f64 {
    link_gamma_checked(params, distance_m).0
}

/// [`link_gamma`] plus whether the distance had to be clamped.
pub fn link_gamma_checked(params: &LinkBudgetParams, distance_m: f64) -> (f64, bool) {
    let clamped = !(distance_m >= 1.0);
    let d = if clamped { 1.0 } else { distance_m };
    let loss = params.pathloss_a + params.pathloss_b * d.log10();
    let snr_db = params.tx_power_dbm - loss - params.noise_dbm;
    (10f64.powf(snr_db / 10.0), clamped)
}

/// Station and user positions in a square area, meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub side_m: f64,
    pub stations: Vec<[f64; 2]>,
    pub users: Vec<[f64; 2]>,
}

impl Geometry {
    pub fn sample(n_users: usize, n_stations: usize, side_m: f64, rng: &mut ChaCha8Rng) -> Self {
        let point = |rng: &mut ChaCha8Rng| [rng.random::<f64>() * side_m, rng.random::<f64>() * side_m];
        let stations = (0..n_stations).map(|_| point(rng)).collect();
        let users = (0..n_users).map(|_| point(rng)).collect();
        Self {
            side_m,
            stations,
            users,
        }
    }

    pub fn distance(&self, user: usize, station: usize) -> f64 {
        let [ux, uy] = self.users[user];
        let [sx, sy] = self.stations[station];
        (ux - sx).hypot(uy - sy)
    }

    /// SNR matrix and the number of user-station pairs closer than 1 m.
    pub fn gamma(&self, params: &LinkBudgetParams) -> (Array2<f64>, usize) {
        let mut clamped = 0;
        let g = Array2::from_shape_fn((self.users.len(), self.stations.len()), |(i, j)| {
            let (g, c) = link_gamma_checked(params, self.distance(i, j));
            clamped += c as usize;
            g
        });
        (g, clamped)
    }
}

/// Spectral efficiency `log2(1 + gamma)`.
pub fn spectral_efficiency(gamma: &Array2<f64>) -> Array2<f64> {
    gamma.mapv(|g| g.ln_1p() / std::f64::consts::LN_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Sp1,
    Sp2,
    Bandwidth,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sp1" => Ok(Family::Sp1),
            "sp2" => Ok(Family::Sp2),
            "bandwidth" => Ok(Family::Bandwidth),
            other => Err(Error::Config(format!("unknown family `{other}`"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Sp1 => "sp1",
            Family::Sp2 => "sp2",
            Family::Bandwidth => "bandwidth",
        })
    }
}

/// Any zoo instance, for code that picks the family at run time.
#[derive(Debug, Clone)]
pub enum Instance {
    Sp1(Sp1Instance),
    Sp2(Sp2Instance),
    Bandwidth(BandwidthInstance),
}

impl Instance {
    pub fn family(&self) -> Family {
        match self {
            Instance::Sp1(_) => Family::Sp1,
            Instance::Sp2(_) => Family::Sp2,
            Instance::Bandwidth(_) => Family::Bandwidth,
        }
    }

    fn inner(&self) -> &dyn MixedProblem {
        match self {
            Instance::Sp1(p) => p,
            Instance::Sp2(p) => p,
            Instance::Bandwidth(p) => p,
        }
    }
}

impl MixedProblem for Instance {
    fn dims(&self) -> ProblemDims {
        self.inner().dims()
    }
    fn objective(&self, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        self.inner().objective(x, y)
    }
    fn constraint_residuals(&self, x: &Array2<f64>, y: &Array2<f64>) -> Vec<f64> {
        self.inner().constraint_residuals(x, y)
    }
    fn objective_gradient(&self, x: &Array2<f64>, y: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        self.inner().objective_gradient(x, y)
    }
    fn constraint_vjp(
        &self,
        x: &Array2<f64>,
        y: &Array2<f64>,
        weights: &[f64],
    ) -> (Array2<f64>, Array2<f64>) {
        self.inner().constraint_vjp(x, y, weights)
    }
    fn allocation_upper(&self) -> Array2<f64> {
        self.inner().allocation_upper()
    }
    fn inner_solve(&self, x: &BinaryAssignment) -> Result<InnerSolution> {
        self.inner().inner_solve(x)
    }
    fn relaxed_solve(&self, fixed: &[Option<usize>], cfg: &RelaxConfig) -> Result<RelaxedSolution> {
        self.inner().relaxed_solve(fixed, cfg)
    }
    fn relaxed_solve_warm(
        &self,
        fixed: &[Option<usize>],
        cfg: &RelaxConfig,
        warm: Option<&RelaxedSolution>,
    ) -> Result<RelaxedSolution> {
        self.inner().relaxed_solve_warm(fixed, cfg, warm)
    }
    fn capacities(&self) -> &[CapacityConstraint] {
        self.inner().capacities()
    }
    fn consistency_hint(&self, state: &SearchState, action_col: usize) -> bool {
        self.inner().consistency_hint(state, action_col)
    }
}

pub(crate) fn check_shape(name: &str, a: &Array2<f64>, shape: (usize, usize)) -> Result<()> {
    if a.dim() != shape {
        return Err(Error::Dimension(format!(
            "{name} has shape {:?}, expected {:?}",
            a.dim(),
            shape
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Dimension(format!("{name} has non-finite entries")));
    }
    Ok(())
}
