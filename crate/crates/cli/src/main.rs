//! `inbo`: simulate path ensembles, run single traces or whole experiments,
//! and validate problems. Summaries go to stdout as JSON; failures print
//! `{"error": <category>, "message": …}` to stderr and exit with status 1.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use inbo::bench::{
    bitten_torus_problem, build_problem_kernel, load_domain, run_experiment, sea_problem,
    trace_file_name, ushape_problem, Method, Models, Problem, RunConfig,
};
use inbo::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "inbo",
    version,
    about = "Intrinsic Bayesian optimisation benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `ushape`, `bitten_torus`, `sea`, or `BOUNDARY.csv,GRID.csv`.
    #[arg(long)]
    problem: String,
    /// JSON run configuration; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for cached path ensembles.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulates and caches the ensembles of every inducing point.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Runs one method for one seed and writes its trace CSV.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Method,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs methods over seeds `1..=seeds` and writes the report files.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "in_bo,tra_bo")]
        methods: Vec<Method>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Loads a problem and a configuration and checks their invariants.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

fn open(path: &str) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{path}: {e}"))))
}

fn load_problem(spec: &str) -> Result<Problem> {
    match spec {
        "ushape" => Ok(ushape_problem()),
        "bitten_torus" | "torus" => Ok(bitten_torus_problem()),
        "sea" => Ok(sea_problem()),
        files => {
            let Some((boundary, grid)) = files.split_once(',') else {
                return Err(Error::Input(format!(
                    "unknown problem {files:?}; expected ushape, bitten_torus, sea or BOUNDARY.csv,GRID.csv"
                )));
            };
            let name = Path::new(grid)
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("domain");
            load_domain(name, open(boundary)?, open(grid)?)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        reason: e.to_string(),
    })
}

fn setup(common: &Common) -> Result<(Problem, RunConfig)> {
    let problem = load_problem(&common.problem)?;
    let mut cfg = load_config(common.config.as_deref())?;
    if common.cache.is_some() {
        cfg.cache_dir.clone_from(&common.cache);
    }
    cfg.validate(&problem)?;
    Ok((problem, cfg))
}

fn execute(command: Command) -> Result<serde_json::Value> {
    match command {
        Command::Simulate { common } => {
            let (problem, cfg) = setup(&common)?;
            let Some(cache) = cfg.cache_dir.as_deref() else {
                return Err(Error::Input(
                    "simulate needs --cache or cache_dir in the config".into(),
                ));
            };
            let started = Instant::now();
            let kernel = build_problem_kernel(&problem, &cfg.bm_config(&problem), Some(cache))?;
            Ok(json!({
                "problem": problem.name,
                "inducing_points": kernel.m(),
                "time_grid": kernel.t_grid(),
                "cache": cache,
                "seconds": started.elapsed().as_secs_f64(),
            }))
        }
        Command::Run {
            common,
            method,
            seed,
            out,
        } => {
            let (problem, cfg) = setup(&common)?;
            let trace =
                Models::build(&problem, &[method], &cfg)?.run(&problem, method, &cfg, seed)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join(trace_file_name(method, seed));
            trace.write_csv(File::create(&path)?)?;
            let best = trace.best();
            Ok(json!({
                "problem": problem.name,
                "method": method,
                "seed": seed,
                "best_index": best.best_index,
                "best_value": best.best_value,
                "found_optimum": best.best_index == problem.true_optimum_index(),
                "trace": path,
            }))
        }
        Command::Experiment {
            common,
            methods,
            seeds,
            out,
        } => {
            let (problem, cfg) = setup(&common)?;
            let report = run_experiment(&problem, &methods, seeds, &cfg)?;
            report.write_all(&out)?;
            let summaries: Vec<_> = report
                .methods()
                .into_iter()
                .map(|m| {
                    let s = report.summary(m);
                    json!({
                        "method": m,
                        "runs": s.runs,
                        "failed": s.failed,
                        "success_rate": s.success_rate,
                        "relaxed_success_rate": s.relaxed_success_rate,
                    })
                })
                .collect();
            Ok(json!({ "problem": problem.name, "out": out, "methods": summaries }))
        }
        Command::Validate { common } => {
            let (problem, _) = setup(&common)?;
            let (lo, hi) = problem.value_range();
            Ok(json!({
                "problem": problem.name,
                "grid_points": problem.n(),
                "inducing_points": problem.inducing.len(),
                "value_range": [lo, hi],
                "true_optimum_index": problem.true_optimum_index(),
                "tied_maxima": problem.values.iter().filter(|&&v| v == hi).count(),
                "valid": true,
            }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!(
                "{}",
                json!({ "error": e.category(), "message": e.to_string() })
            );
            ExitCode::FAILURE
        }
    }
}
