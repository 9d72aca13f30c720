use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use relaxrl::bench::{
    cmd_compare, cmd_solve, cmd_sweep, collect_summaries, generate, save_instance, Algorithm, RunSpec,
    SweepSpec,
};
use relaxrl::zoo::Family;
use relaxrl::SearchConfig;

#[derive(Parser)]
#[command(name = "relaxrl", version, about = "Relaxation-guided RL for 0-1 mixed problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SearchArgs {
    /// Wall-clock budget per run, seconds.
    #[arg(long = "time-limit", default_value_t = 500.0)]
    time_limit: f64,
    #[arg(long, default_value_t = 50_000)]
    episodes: usize,
    /// Value-update learning rate.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Discount on bootstrapped targets.
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
}

impl SearchArgs {
    fn config(&self, seed: u64) -> SearchConfig {
        SearchConfig {
            time_limit: self.time_limit,
            max_episodes: self.episodes,
            learning_rate: self.alpha,
            discount: self.gamma,
            seed,
            ..SearchConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample an instance and write it as JSON.
    Generate {
        family: Family,
        #[arg(short = 'n', long)]
        n: usize,
        #[arg(short = 'm', long)]
        m: usize,
        /// Rate cap (sp2) or minimum rate (bandwidth).
        #[arg(long)]
        q: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one solver on an instance file.
    Solve {
        instance: PathBuf,
        #[arg(long, default_value = "hybrid")]
        algo: Algorithm,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        search: SearchArgs,
        /// Output directory for trace.csv and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate instances over a range of N and run several solvers on each.
    Sweep {
        family: Family,
        /// Comma-separated list of N.
        #[arg(short = 'n', long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(short = 'm', long)]
        m: usize,
        #[arg(long)]
        q: Option<f64>,
        /// Comma-separated seeds.
        #[arg(long = "seed", value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Comma-separated algorithms.
        #[arg(long = "algo", value_delimiter = ',', default_value = "hybrid,rl,bnb")]
        algos: Vec<Algorithm>,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate normalized values from summary.json files or run directories.
    Compare {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> relaxrl::Result<i32> {
    match cli.command {
        Command::Generate { family, n, m, q, seed, out } => {
            let inst = generate(family, n, m, q, seed)?;
            save_instance(&inst, Some(seed), &out)?;
            println!("wrote {}", out.display());
            Ok(0)
        }
        Command::Solve { instance, algo, seed, search, out } => {
            let spec = RunSpec {
                instance_path: instance,
                algorithm: algo,
                search: search.config(seed),
                seed,
                time_limit_s: search.time_limit,
                output_dir: out,
            };
            let summary = cmd_solve(&spec)?;
            match (summary.objective, summary.normalized) {
                (Some(o), Some(r)) => println!(
                    "{}: objective {o:.6}, normalized {r:.4}, {} steps, {:.2}s, {}",
                    summary.algorithm, summary.steps, summary.wall_time_s, summary.termination_reason
                ),
                _ => println!("{}: {}", summary.algorithm, summary.termination_reason),
            }
            if let Some(e) = &summary.error {
                eprintln!("error: {e}");
            }
            Ok(summary.status.exit_code())
        }
        Command::Sweep { family, n, m, q, seeds, algos, search, out } => {
            let spec = SweepSpec {
                family,
                n_list: n,
                n_cols: m,
                q,
                seeds,
                algorithms: algos,
                search: search.config(0),
                out_dir: out.clone(),
            };
            let (_, medians) = cmd_sweep(&spec)?;
            for r in medians {
                println!("N={:<4} {:<7} median {:.4} ({}/{} feasible)", r.n, r.algorithm, r.median_normalized, r.feasible, r.runs);
            }
            println!("tables in {}", out.display());
            Ok(0)
        }
        Command::Compare { paths } => {
            let summaries = collect_summaries(&paths)?;
            print!("{}", cmd_compare(&summaries));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                relaxrl::Error::InstanceInfeasible => 2,
                relaxrl::Error::Exhausted { .. } => 3,
                _ => 1,
            })
        }
    }
}
