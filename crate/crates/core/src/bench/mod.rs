//! Experiment harness: instance files, single runs with traces, sweeps and comparisons.

mod instance_file;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use instance_file::{
    generate, load_instance, save_instance, BandwidthParameters, FileDims, InstanceFile, Parameters,
    Sp1Parameters, Sp2Parameters, SCHEMA_VERSION,
};

use crate::analysis::median;
use crate::baselines::{branch_and_bound, oracle_enumerate, pure_rl, BnbConfig};
use crate::error::{Error, Result};
use crate::problem::MixedProblem;
use crate::search::{self, SearchConfig, SolveTrace, TracePoint};
use crate::zoo::{Family, Instance};

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Hybrid,
    Rl,
    Bnb,
    Oracle,
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hybrid" => Ok(Algorithm::Hybrid),
            "rl" => Ok(Algorithm::Rl),
            "bnb" => Ok(Algorithm::Bnb),
            "oracle" => Ok(Algorithm::Oracle),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Hybrid => "hybrid",
            Algorithm::Rl => "rl",
            Algorithm::Bnb => "bnb",
            Algorithm::Oracle => "oracle",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Infeasible,
    Exhausted,
    Failed,
}

impl RunStatus {
    /// Process exit code for a single run.
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Ok => 0,
            RunStatus::Infeasible => 2,
            RunStatus::Exhausted => 3,
            RunStatus::Failed => 1,
        }
    }
}

/// One solver run on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub instance_path: PathBuf,
    pub algorithm: Algorithm,
    pub search: SearchConfig,
    pub seed: u64,
    pub time_limit_s: f64,
    pub output_dir: PathBuf,
}

impl RunSpec {
    pub fn new(instance_path: PathBuf, algorithm: Algorithm, output_dir: PathBuf) -> Self {
        Self {
            instance_path,
            algorithm,
            search: SearchConfig::default(),
            seed: 0,
            time_limit_s: 500.0,
            output_dir,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.time_limit_s > 0.0) {
            return Err(Error::Config("time limit must be positive".into()));
        }
        Ok(())
    }

    fn search_config(&self) -> SearchConfig {
        SearchConfig {
            time_limit: self.time_limit_s,
            seed: self.seed,
            ..self.search
        }
    }
}

/// Final record of a run, written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: Algorithm,
    pub instance: String,
    pub family: Family,
    pub n_rows: usize,
    pub n_cols: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub objective: Option<f64>,
    pub normalized: Option<f64>,
    pub root_bound: Option<f64>,
    /// Episodes, nodes or enumerated assignments.
    pub steps: usize,
    pub wall_time_s: f64,
    pub termination_reason: String,
    pub incomplete: bool,
    pub assignment: Option<Vec<usize>>,
    pub config: serde_json::Value,
    pub error: Option<String>,
}

pub struct RunResult {
    pub summary: Summary,
    pub trace: Option<SolveTrace>,
}

/// Runs `algorithm` on an in-memory instance.
pub fn run_algorithm(
    instance: &Instance,
    instance_name: &str,
    algorithm: Algorithm,
    search: &SearchConfig,
) -> RunResult {
    let start = Instant::now();
    let (n_rows, n_cols) = instance.dims().shape();
    let bnb = BnbConfig {
        time_limit: search.time_limit,
        relax: search.relax,
        ..BnbConfig::default()
    };
    let config = match algorithm {
        Algorithm::Bnb => serde_json::to_value(bnb),
        Algorithm::Oracle => Ok(serde_json::Value::Null),
        _ => serde_json::to_value(search),
    }
    .unwrap_or(serde_json::Value::Null);
    let mut summary = Summary {
        algorithm,
        instance: instance_name.to_string(),
        family: instance.family(),
        n_rows,
        n_cols,
        seed: search.seed,
        status: RunStatus::Ok,
        objective: None,
        normalized: None,
        root_bound: None,
        steps: 0,
        wall_time_s: 0.0,
        termination_reason: String::new(),
        incomplete: false,
        assignment: None,
        config,
        error: None,
    };

    let outcome = match algorithm {
        Algorithm::Hybrid => search::solve(instance, search).map(|o| (o.record, o.trace, o.root_bound)),
        Algorithm::Rl => pure_rl(instance, search).map(|o| (o.record, o.trace, o.root_bound)),
        Algorithm::Bnb => branch_and_bound(instance, &bnb).map(|o| (o.record, o.trace, o.root_bound)),
        Algorithm::Oracle => oracle_enumerate(instance).map(|o| {
            let elapsed = start.elapsed().as_secs_f64();
            let trace = SolveTrace {
                points: vec![TracePoint {
                    elapsed_s: elapsed,
                    step: o.evaluated,
                    best_objective: o.record.objective,
                    best_normalized: o.record.normalized,
                }],
                termination: search::Termination::Completed,
                steps: o.evaluated,
                elapsed_s: elapsed,
                relax_solves: 1,
                prior_fallbacks: 0,
                incomplete: false,
            };
            let bound = crate::relax::root_bound(instance, &search.relax).unwrap_or(f64::NAN);
            (o.record, trace, bound)
        }),
    };
    summary.wall_time_s = start.elapsed().as_secs_f64();
    let trace = match outcome {
        Ok((record, trace, bound)) => {
            summary.objective = Some(record.objective);
            summary.normalized = Some(record.normalized);
            summary.root_bound = Some(bound);
            summary.steps = trace.steps;
            summary.termination_reason = trace.termination.to_string();
            summary.incomplete = trace.incomplete;
            summary.assignment = Some(record.binary.columns().to_vec());
            Some(trace)
        }
        Err(Error::Exhausted { trace }) => {
            summary.status = RunStatus::Exhausted;
            summary.steps = trace.steps;
            summary.termination_reason = trace.termination.to_string();
            summary.incomplete = true;
            Some(trace)
        }
        Err(Error::InstanceInfeasible) => {
            summary.status = RunStatus::Infeasible;
            summary.termination_reason = "infeasible".into();
            None
        }
        Err(e) => {
            summary.status = RunStatus::Failed;
            summary.termination_reason = "error".into();
            summary.error = Some(e.to_string());
            None
        }
    };
    RunResult { summary, trace }
}

/// Trace rows kept in files: every improvement, every 100th step, and the last point.
pub fn thin_trace(points: &[TracePoint]) -> Vec<TracePoint> {
    let mut out: Vec<TracePoint> = Vec::new();
    for (k, p) in points.iter().enumerate() {
        let improved = out.last().is_none_or(|q| p.best_objective > q.best_objective);
        if improved || p.step % 100 == 0 || k + 1 == points.len() {
            out.push(*p);
        }
    }
    out
}

pub fn trace_csv(points: &[TracePoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["elapsed_s", "step", "best_objective", "best_normalized"])?;
    for p in points {
        w.serialize((p.elapsed_s, p.step, p.best_objective, p.best_normalized))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TracePoint>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let (elapsed_s, step, best_objective, best_normalized): (f64, usize, f64, f64) = row?;
        out.push(TracePoint {
            elapsed_s,
            step,
            best_objective,
            best_normalized,
        });
    }
    Ok(out)
}

fn write_run(dir: &Path, result: &RunResult) -> Result<()> {
    if let Some(trace) = &result.trace {
        write_atomic(&dir.join("trace.csv"), &trace_csv(&thin_trace(&trace.points))?)?;
    }
    let mut json = serde_json::to_string_pretty(&result.summary)?;
    json.push('\n');
    write_atomic(&dir.join("summary.json"), json.as_bytes())
}

/// Loads the instance, runs the solver and writes `trace.csv` and `summary.json` to the output directory.
pub fn cmd_solve(spec: &RunSpec) -> Result<Summary> {
    spec.validate()?;
    let instance = load_instance(&spec.instance_path)?;
    let name = spec
        .instance_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let result = run_algorithm(&instance, &name, spec.algorithm, &spec.search_config());
    write_run(&spec.output_dir, &result)?;
    Ok(result.summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub family: Family,
    pub n_list: Vec<usize>,
    pub n_cols: usize,
    pub q: Option<f64>,
    pub seeds: Vec<u64>,
    pub algorithms: Vec<Algorithm>,
    pub search: SearchConfig,
    pub out_dir: PathBuf,
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub family: Family,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub status: RunStatus,
    pub objective: Option<f64>,
    pub normalized: Option<f64>,
    pub steps: usize,
    pub termination: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub n: usize,
    pub algorithm: Algorithm,
    pub runs: usize,
    pub feasible: usize,
    /// Median over runs, counting runs without a feasible solution as 0.
    pub median_normalized: f64,
}

/// Generates one instance per `(N, seed)` and runs every algorithm on it, in parallel.
///
/// Writes `instances/`, `runs/<name>_<algo>/`, `summary.csv` (one row per run,
/// sorted) and `medians.csv`. Failed runs are recorded and the sweep goes on.
/// Wall times are left out of the tables so that identical sweeps with episode
/// budgets produce identical tables; they remain in each run's `summary.json`.
pub fn cmd_sweep(spec: &SweepSpec) -> Result<(Vec<SweepRow>, Vec<MedianRow>)> {
    if spec.n_list.is_empty() || spec.seeds.is_empty() || spec.algorithms.is_empty() {
        return Err(Error::Config("sweep needs at least one N, seed and algorithm".into()));
    }
    let mut instances = Vec::new();
    for &n in &spec.n_list {
        for &seed in &spec.seeds {
            let name = format!("{}_n{}_m{}_s{}", spec.family, n, spec.n_cols, seed);
            let inst = generate(spec.family, n, spec.n_cols, spec.q, seed)?;
            save_instance(&inst, Some(seed), &spec.out_dir.join("instances").join(format!("{name}.json")))?;
            instances.push((n, seed, name, inst));
        }
    }
    let jobs: Vec<(usize, Algorithm)> = (0..instances.len())
        .flat_map(|k| spec.algorithms.iter().map(move |&a| (k, a)))
        .collect();
    let mut rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(k, algorithm)| {
            let (n, seed, name, inst) = &instances[k];
            let cfg = SearchConfig {
                seed: *seed,
                ..spec.search
            };
            let result = run_algorithm(inst, name, algorithm, &cfg);
            let dir = spec.out_dir.join("runs").join(format!("{name}_{algorithm}"));
            let mut row = SweepRow {
                family: spec.family,
                n: *n,
                m: spec.n_cols,
                seed: *seed,
                algorithm,
                status: result.summary.status,
                objective: result.summary.objective,
                normalized: result.summary.normalized,
                steps: result.summary.steps,
                termination: result.summary.termination_reason.clone(),
            };
            if let Err(e) = write_run(&dir, &result) {
                row.status = RunStatus::Failed;
                row.termination = format!("write failed: {e}");
            }
            row
        })
        .collect();
    rows.sort_by(|a, b| (a.n, a.seed, a.algorithm).cmp(&(b.n, b.seed, b.algorithm)));

    let mut groups: BTreeMap<(usize, Algorithm), Vec<&SweepRow>> = BTreeMap::new();
    for r in &rows {
        groups.entry((r.n, r.algorithm)).or_default().push(r);
    }
    let medians: Vec<MedianRow> = groups
        .into_iter()
        .map(|((n, algorithm), rs)| {
            let values: Vec<f64> = rs.iter().map(|r| r.normalized.unwrap_or(0.0)).collect();
            MedianRow {
                n,
                algorithm,
                runs: rs.len(),
                feasible: rs.iter().filter(|r| r.normalized.is_some()).count(),
                median_normalized: median(&values).unwrap_or(0.0),
            }
        })
        .collect();

    write_atomic(&spec.out_dir.join("summary.csv"), &to_csv(&rows)?)?;
    write_atomic(&spec.out_dir.join("medians.csv"), &to_csv(&medians)?)?;
    Ok((rows, medians))
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Collects every `summary.json` under `paths` (files or directories).
pub fn collect_summaries(paths: &[PathBuf]) -> Result<Vec<Summary>> {
    fn walk(path: &Path, out: &mut Vec<Summary>) -> Result<()> {
        if path.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            entries.sort();
            for e in entries {
                walk(&e, out)?;
            }
        } else if path.file_name().is_some_and(|n| n == "summary.json") {
            out.push(serde_json::from_str(&std::fs::read_to_string(path)?)?);
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in paths {
        if p.is_file() {
            out.push(serde_json::from_str(&std::fs::read_to_string(p)?)?);
        } else {
            walk(p, &mut out)?;
        }
    }
    Ok(out)
}

/// Per-instance table of normalized values by algorithm, followed by per-algorithm medians.
pub fn cmd_compare(summaries: &[Summary]) -> String {
    let algorithms: Vec<Algorithm> = {
        let mut a: Vec<Algorithm> = summaries.iter().map(|s| s.algorithm).collect();
        a.sort();
        a.dedup();
        a
    };
    let mut by_instance: BTreeMap<&str, BTreeMap<Algorithm, Option<f64>>> = BTreeMap::new();
    for s in summaries {
        by_instance.entry(&s.instance).or_default().insert(s.algorithm, s.normalized);
    }
    let mut out = String::from("instance");
    for a in &algorithms {
        out.push_str(&format!("\t{a}"));
    }
    out.push('\n');
    let cell = |v: Option<&Option<f64>>| match v {
        Some(Some(x)) => format!("{x:.4}"),
        Some(None) => "none".to_string(),
        None => "-".to_string(),
    };
    for (name, row) in &by_instance {
        out.push_str(name);
        for a in &algorithms {
            out.push('\t');
            out.push_str(&cell(row.get(a)));
        }
        out.push('\n');
    }
    out.push_str("median");
    for a in &algorithms {
        let values: Vec<f64> = summaries
            .iter()
            .filter(|s| s.algorithm == *a)
            .map(|s| s.normalized.unwrap_or(0.0))
            .collect();
        out.push_str(&format!("\t{:.4}", median(&values).unwrap_or(0.0)));
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(step: usize, obj: f64) -> TracePoint {
        TracePoint {
            elapsed_s: step as f64 * 1e-3,
            step,
            best_objective: obj,
            best_normalized: obj / 10.0,
        }
    }

    #[test]
    fn thinning_keeps_improvements_and_hundreds() {
        let pts: Vec<TracePoint> = (1..=250)
            .map(|k| point(k, if k < 50 { 1.0 } else { 2.0 }))
            .collect();
        let steps: Vec<usize> = thin_trace(&pts).iter().map(|p| p.step).collect();
        assert_eq!(steps, vec![1, 50, 100, 200, 250]);
    }

    #[test]
    fn trace_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![point(1, 1.0), point(2, 1.5)];
        let path = dir.path().join("t.csv");
        write_atomic(&path, &trace_csv(&pts).unwrap()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("elapsed_s,step,best_objective,best_normalized\n"));
        assert_eq!(read_trace_csv(&path).unwrap(), pts);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in [Algorithm::Hybrid, Algorithm::Rl, Algorithm::Bnb, Algorithm::Oracle] {
            assert_eq!(a.to_string().parse::<Algorithm>().unwrap(), a);
        }
        assert!("dqn".parse::<Algorithm>().is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(RunStatus::Ok.exit_code(), 0);
        assert_eq!(RunStatus::Infeasible.exit_code(), 2);
        assert_eq!(RunStatus::Exhausted.exit_code(), 3);
    }
}
