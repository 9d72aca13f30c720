use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::error::{Error, Result};
use crate::problem::MixedProblem;
use crate::zoo::{
    gen_bandwidth, gen_sp1, gen_sp2, BandwidthInstance, Family, Geometry, Instance, LinkBudgetParams,
    QosMode, Sp1Instance, Sp1Params, Sp2Instance,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Relative tolerance when checking stored SNRs against the geometry.
const GAMMA_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDims {
    pub n_rows: usize,
    pub n_cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sp1Parameters {
    pub s: Vec<Vec<f64>>,
    pub d_util: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub c_cap: Vec<f64>,
    pub d_cap: Vec<f64>,
    pub couple_y: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sp2Parameters {
    pub q: f64,
    pub bandwidth: f64,
    pub mode: QosMode,
    /// Stored for inspection; re-derived from the geometry when one is present.
    pub gamma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthParameters {
    pub min_rates: Vec<f64>,
    pub budgets: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Parameters {
    Sp1(Sp1Parameters),
    Sp2(Sp2Parameters),
    Bandwidth(BandwidthParameters),
}

/// Self-contained JSON description of a zoo instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub schema_version: u32,
    pub family: Family,
    pub dims: FileDims,
    pub seed: Option<u64>,
    pub parameters: Parameters,
    pub geometry: Option<Geometry>,
    pub link_budget: Option<LinkBudgetParams>,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(name: &str, rows: &[Vec<f64>], shape: (usize, usize)) -> Result<Array2<f64>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(Error::Format(format!("{name} does not have shape {shape:?}")));
    }
    let flat = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec(shape, flat).map_err(|e| Error::Format(e.to_string()))
}

fn check_gamma(stored: &Array2<f64>, derived: &Array2<f64>) -> Result<()> {
    for (a, b) in stored.iter().zip(derived) {
        if (a - b).abs() > GAMMA_TOL * b.abs().max(1e-300) {
            return Err(Error::Format(format!(
                "stored gamma {a} disagrees with the geometry ({b})"
            )));
        }
    }
    Ok(())
}

/// Samples an instance of `family`.
///
/// `q` is the per-user rate cap for `sp2` (default 0.5) and the per-user
/// minimum rate for `bandwidth` (default 1.0); `sp1` ignores it.
pub fn generate(family: Family, n: usize, m: usize, q: Option<f64>, seed: u64) -> Result<Instance> {
    let link = LinkBudgetParams::default();
    Ok(match family {
        Family::Sp1 => Instance::Sp1(gen_sp1(n, m, seed, &Sp1Params::default())?),
        Family::Sp2 => Instance::Sp2(gen_sp2(n, m, &link, q.unwrap_or(0.5), seed)?),
        Family::Bandwidth => {
            Instance::Bandwidth(gen_bandwidth(n, m, seed, &vec![q.unwrap_or(1.0); n], &link)?)
        }
    })
}

impl InstanceFile {
    pub fn from_instance(instance: &Instance, seed: Option<u64>) -> Self {
        let (n_rows, n_cols) = instance.dims().shape();
        let (parameters, geometry, link_budget) = match instance {
            Instance::Sp1(p) => (
                Parameters::Sp1(Sp1Parameters {
                    s: rows(&p.s),
                    d_util: rows(&p.d_util),
                    c: rows(&p.c),
                    c_cap: p.c_cap.clone(),
                    d_cap: p.d_cap.clone(),
                    couple_y: p.couple_y,
                }),
                None,
                None,
            ),
            Instance::Sp2(p) => (
                Parameters::Sp2(Sp2Parameters {
                    q: p.q,
                    bandwidth: p.bandwidth,
                    mode: p.mode,
                    gamma: rows(&p.gamma),
                }),
                p.geometry.clone(),
                p.geometry.as_ref().map(|_| p.link),
            ),
            Instance::Bandwidth(p) => (
                Parameters::Bandwidth(BandwidthParameters {
                    min_rates: p.min_rates.clone(),
                    budgets: p.budgets.clone(),
                    gamma: rows(&p.gamma),
                }),
                p.geometry.clone(),
                p.geometry.as_ref().map(|_| p.link),
            ),
        };
        Self {
            schema_version: SCHEMA_VERSION,
            family: instance.family(),
            dims: FileDims { n_rows, n_cols },
            seed,
            parameters,
            geometry,
            link_budget,
        }
    }

    pub fn to_instance(&self) -> Result<Instance> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported schema version {}",
                self.schema_version
            )));
        }
        let shape = (self.dims.n_rows, self.dims.n_cols);
        let derived = |g: &Geometry| -> Result<(LinkBudgetParams, Array2<f64>)> {
            let link = self
                .link_budget
                .ok_or_else(|| Error::Format("geometry without link_budget".into()))?;
            if g.users.len() != shape.0 || g.stations.len() != shape.1 {
                return Err(Error::Format("geometry does not match dims".into()));
            }
            Ok((link, g.gamma(&link).0))
        };
        let instance = match (&self.family, &self.parameters) {
            (Family::Sp1, Parameters::Sp1(p)) => Instance::Sp1(Sp1Instance::new(
                matrix("s", &p.s, shape)?,
                matrix("d_util", &p.d_util, shape)?,
                matrix("c", &p.c, shape)?,
                p.c_cap.clone(),
                p.d_cap.clone(),
                p.couple_y,
            )?),
            (Family::Sp2, Parameters::Sp2(p)) => {
                let stored = matrix("gamma", &p.gamma, shape)?;
                Instance::Sp2(match &self.geometry {
                    Some(g) => {
                        let (link, gamma) = derived(g)?;
                        check_gamma(&stored, &gamma)?;
                        if link.bandwidth_mhz != p.bandwidth {
                            return Err(Error::Format("bandwidth disagrees with link_budget".into()));
                        }
                        Sp2Instance::from_geometry(g.clone(), link, p.q, p.mode)?
                    }
                    None => Sp2Instance::from_gamma(stored, p.q, p.bandwidth, p.mode)?,
                })
            }
            (Family::Bandwidth, Parameters::Bandwidth(p)) => {
                let stored = matrix("gamma", &p.gamma, shape)?;
                Instance::Bandwidth(match &self.geometry {
                    Some(g) => {
                        let (link, gamma) = derived(g)?;
                        check_gamma(&stored, &gamma)?;
                        let mut inst = BandwidthInstance::from_geometry(g.clone(), link, p.min_rates.clone())?;
                        if inst.budgets != p.budgets {
                            inst = BandwidthInstance::from_gamma(gamma, p.min_rates.clone(), p.budgets.clone())?;
                            inst.geometry = Some(g.clone());
                        }
                        inst
                    }
                    None => BandwidthInstance::from_gamma(stored, p.min_rates.clone(), p.budgets.clone())?,
                })
            }
            (family, _) => {
                return Err(Error::Format(format!("parameters do not match family {family}")));
            }
        };
        Ok(instance)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn save_instance(instance: &Instance, seed: Option<u64>, path: &Path) -> Result<()> {
    InstanceFile::from_instance(instance, seed).save(path)
}

pub fn load_instance(path: &Path) -> Result<Instance> {
    InstanceFile::load(path)?.to_instance()
}
