use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Problem;
use crate::bm_sim::{simulate_cached, BMConfig};
use crate::bo::{self, BOConfig, BOTrace, IntrinsicSurrogate, RbfSurrogate};
use crate::error::{Error, Result};
use crate::heat_kernel::{DensityEstimator, KernelBuilder, KernelEstimate};
use crate::sparse_gp::rbf::RbfGp;
use crate::sparse_gp::{HyperGrid, Hyperparameters, IntrinsicGp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    InBo,
    TraBo,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::InBo => "in_bo",
            Method::TraBo => "tra_bo",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in_bo" => Ok(Method::InBo),
            "tra_bo" => Ok(Method::TraBo),
            other => Err(Error::input(format!(
                "unknown method {other:?}; expected in_bo or tra_bo"
            ))),
        }
    }
}

pub const DEFAULT_KZZ_RCOND: f64 = 1e-2;

/// Settings shared by every run of an experiment. All fields are optional in
/// JSON; unset problem-specific values fall back to the problem's defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Brownian-motion settings; the problem's defaults when unset.
    pub bm: Option<BMConfig>,
    pub n_iterations: usize,
    /// Initial design size; the problem's default when unset.
    pub n_init: Option<usize>,
    /// Absolute PI margin; relative to the observed range when unset.
    pub epsilon: Option<f64>,
    pub epsilon_relative: f64,
    pub hyper_grid: HyperGrid,
    /// RBF length-scale candidates; square roots of the BM time grid when unset.
    pub rbf_length_scales: Option<Vec<f64>>,
    /// Directory for cached path ensembles.
    pub cache_dir: Option<PathBuf>,
    /// Relative eigenvalue cutoff for inverting `K_zz`; 0 selects Cholesky.
    pub kzz_rcond: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bo = BOConfig::default();
        Self {
            bm: None,
            n_iterations: bo.n_iterations,
            n_init: None,
            epsilon: bo.epsilon,
            epsilon_relative: bo.epsilon_relative,
            hyper_grid: HyperGrid::default(),
            rbf_length_scales: None,
            cache_dir: None,
            kzz_rcond: DEFAULT_KZZ_RCOND,
        }
    }
}

impl RunConfig {
    pub fn bm_config(&self, problem: &Problem) -> BMConfig {
        self.bm
            .clone()
            .unwrap_or_else(|| problem.bm_defaults.clone())
    }

    pub fn bo_config(&self, problem: &Problem, seed: u64) -> BOConfig {
        BOConfig {
            n_iterations: self.n_iterations,
            epsilon: self.epsilon,
            epsilon_relative: self.epsilon_relative,
            n_init: self.n_init.unwrap_or(problem.n_init),
            seed,
        }
    }

    pub fn length_scales(&self, problem: &Problem) -> Vec<f64> {
        self.rbf_length_scales.clone().unwrap_or_else(|| {
            self.bm_config(problem)
                .time_grid
                .iter()
                .filter(|&&t| t > 0.0)
                .map(|t| t.sqrt())
                .collect()
        })
    }

    pub fn validate(&self, problem: &Problem) -> Result<()> {
        self.bm_config(problem).validate()?;
        self.bo_config(problem, 0).validate(problem.n())?;
        self.hyper_grid.validate()?;
        let ls = self.length_scales(problem);
        if ls.is_empty() || ls.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::input(
                "RBF length-scales must be positive and finite",
            ));
        }
        if !(0.0..1.0).contains(&self.kzz_rcond) {
            return Err(Error::input(format!(
                "kzz_rcond must lie in [0, 1), got {}",
                self.kzz_rcond
            )));
        }
        Ok(())
    }
}

/// Simulates (or loads) one ensemble per inducing point and estimates the
/// heat kernel between inducing points and the full grid.
pub fn build_problem_kernel(
    problem: &Problem,
    bm: &BMConfig,
    cache_dir: Option<&Path>,
) -> Result<KernelEstimate> {
    if problem.inducing.is_empty() {
        return Err(Error::input(format!(
            "problem {} has no inducing points",
            problem.name
        )));
    }
    let estimator = DensityEstimator::new(&problem.spec, &problem.grid, problem.volumes()?)?;
    let mut builder =
        KernelBuilder::new(bm.time_grid.clone(), problem.inducing.clone(), problem.n());
    for &z in &problem.inducing {
        let start_index = u32::try_from(z).map_err(|_| Error::input("grid index exceeds u32"))?;
        let ensemble = simulate_cached(cache_dir, &problem.spec, problem.grid[z], start_index, bm)?;
        builder.push(&estimator, &ensemble)?;
    }
    builder.finish()
}

/// Fitted surrogates for a problem, built once and shared by all runs.
pub struct Models {
    pub intrinsic: Option<IntrinsicGp>,
    pub rbf: Option<RbfGp>,
}

impl Models {
    pub fn build(problem: &Problem, methods: &[Method], cfg: &RunConfig) -> Result<Self> {
        cfg.validate(problem)?;
        let intrinsic = if methods.contains(&Method::InBo) {
            let kernel =
                build_problem_kernel(problem, &cfg.bm_config(problem), cfg.cache_dir.as_deref())?;
            Some(IntrinsicGp::with_rcond(kernel, cfg.kzz_rcond))
        } else {
            None
        };
        let rbf = if methods.contains(&Method::TraBo) {
            Some(RbfGp::new(problem.ambient_coords())?)
        } else {
            None
        };
        Ok(Self { intrinsic, rbf })
    }

    pub fn run(
        &self,
        problem: &Problem,
        method: Method,
        cfg: &RunConfig,
        seed: u64,
    ) -> Result<BOTrace> {
        let bo_cfg = cfg.bo_config(problem, seed);
        let missing = || Error::input(format!("no {method} model was built"));
        match method {
            Method::InBo => {
                let gp = self.intrinsic.as_ref().ok_or_else(missing)?;
                bo::run(
                    &IntrinsicSurrogate {
                        gp,
                        grid: cfg.hyper_grid.clone(),
                    },
                    &problem.values,
                    &bo_cfg,
                )
            }
            Method::TraBo => {
                let gp = self.rbf.as_ref().ok_or_else(missing)?;
                let s = RbfSurrogate {
                    gp,
                    length_scales: cfg.length_scales(problem),
                    grid: cfg.hyper_grid.clone(),
                };
                bo::run(&s, &problem.values, &bo_cfg)
            }
        }
    }
}

/// Outcome of one (method, seed) run.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedOutcome {
    pub method: Method,
    pub seed: u64,
    pub initial: Vec<usize>,
    pub result: std::result::Result<BOTrace, String>,
}

impl SeedOutcome {
    pub fn trace(&self) -> Option<&BOTrace> {
        self.result.as_ref().ok()
    }

    pub fn best_value(&self) -> Option<f64> {
        self.trace().map(|t| t.best().best_value)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    pub failed: usize,
    pub success_rate: f64,
    pub relaxed_success_rate: f64,
    pub mean_best_value: f64,
    pub min_best_value: f64,
    pub max_best_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub problem: String,
    pub optimum_index: usize,
    /// Incumbent values at or above this count as a relaxed success.
    pub relaxed_threshold: f64,
    pub outcomes: Vec<SeedOutcome>,
}

impl ExperimentReport {
    pub fn found_optimum(&self, o: &SeedOutcome) -> bool {
        o.trace()
            .is_some_and(|t| t.best().best_index == self.optimum_index)
    }

    pub fn relaxed_success(&self, o: &SeedOutcome) -> bool {
        o.best_value().is_some_and(|v| v >= self.relaxed_threshold)
    }

    pub fn outcomes_for(&self, method: Method) -> impl Iterator<Item = &SeedOutcome> {
        self.outcomes.iter().filter(move |o| o.method == method)
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self.outcomes.iter().map(|o| o.method).collect();
        m.sort();
        m.dedup();
        m
    }

    /// Fraction of runs that ended on the true optimum. Failed runs count as misses.
    pub fn success_rate(&self, method: Method) -> f64 {
        rate(self.outcomes_for(method).map(|o| self.found_optimum(o)))
    }

    pub fn relaxed_success_rate(&self, method: Method) -> f64 {
        rate(self.outcomes_for(method).map(|o| self.relaxed_success(o)))
    }

    pub fn summary(&self, method: Method) -> MethodSummary {
        let values: Vec<f64> = self
            .outcomes_for(method)
            .filter_map(SeedOutcome::best_value)
            .collect();
        MethodSummary {
            method,
            runs: self.outcomes_for(method).count(),
            failed: self
                .outcomes_for(method)
                .filter(|o| o.result.is_err())
                .count(),
            success_rate: self.success_rate(method),
            relaxed_success_rate: self.relaxed_success_rate(method),
            mean_best_value: values.iter().sum::<f64>() / values.len().max(1) as f64,
            min_best_value: values.iter().copied().fold(f64::INFINITY, f64::min),
            max_best_value: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// One row per run: `method,seed,best_value,found_optimum,n_evals_to_optimum`.
    pub fn write_report_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "method",
            "seed",
            "best_value",
            "found_optimum",
            "n_evals_to_optimum",
        ])
        .map_err(csv_io)?;
        for o in &self.outcomes {
            let evals = o.trace().and_then(|t| t.evals_to(self.optimum_index));
            out.write_record([
                o.method.to_string(),
                o.seed.to_string(),
                o.best_value().map(|v| v.to_string()).unwrap_or_default(),
                self.found_optimum(o).to_string(),
                evals.map(|e| e.to_string()).unwrap_or_default(),
            ])
            .map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "method",
            "runs",
            "failed",
            "success_rate",
            "relaxed_success_rate",
            "mean_best_value",
            "min_best_value",
            "max_best_value",
        ])
        .map_err(csv_io)?;
        for m in self.methods() {
            let s = self.summary(m);
            out.write_record([
                m.to_string(),
                s.runs.to_string(),
                s.failed.to_string(),
                s.success_rate.to_string(),
                s.relaxed_success_rate.to_string(),
                s.mean_best_value.to_string(),
                s.min_best_value.to_string(),
                s.max_best_value.to_string(),
            ])
            .map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Per-run diagnostics: initial design, error message, final hyperparameters
    /// and clamped-variance counts.
    pub fn diagnostics_json(&self) -> serde_json::Value {
        let runs: Vec<serde_json::Value> = self
            .outcomes
            .iter()
            .map(|o| {
                let (error, hyper, clamped): (Option<&str>, Option<&Hyperparameters>, usize) =
                    match &o.result {
                        Ok(t) => (None, t.hyperparameters.last(), t.clamped_variances),
                        Err(e) => (Some(e.as_str()), None, 0),
                    };
                serde_json::json!({
                    "method": o.method,
                    "seed": o.seed,
                    "initial_indices": o.initial,
                    "error": error,
                    "final_hyperparameters": hyper,
                    "clamped_variances": clamped,
                })
            })
            .collect();
        serde_json::json!({
            "problem": self.problem,
            "optimum_index": self.optimum_index,
            "relaxed_threshold": self.relaxed_threshold,
            "runs": runs,
        })
    }

    /// Writes `report.csv`, `summary.csv`, `diagnostics.json` and one
    /// `trace_{method}_seed{k}.csv` per successful run into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_report_csv(std::fs::File::create(dir.join("report.csv"))?)?;
        self.write_summary_csv(std::fs::File::create(dir.join("summary.csv"))?)?;
        let diag = serde_json::to_string_pretty(&self.diagnostics_json())
            .map_err(std::io::Error::other)?;
        std::fs::write(dir.join("diagnostics.json"), diag + "\n")?;
        for o in &self.outcomes {
            if let Some(t) = o.trace() {
                t.write_csv(std::fs::File::create(
                    dir.join(trace_file_name(o.method, o.seed)),
                )?)?;
            }
        }
        Ok(())
    }
}

pub fn trace_file_name(method: Method, seed: u64) -> String {
    format!("trace_{method}_seed{seed}.csv")
}

fn rate(flags: impl Iterator<Item = bool>) -> f64 {
    let (hits, n) = flags.fold((0usize, 0usize), |(h, n), f| (h + usize::from(f), n + 1));
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Runs every method on seeds `1..=n_seeds`. Runs are independent and
/// execute in parallel; a failing run is recorded in the report rather than
/// aborting the experiment.
pub fn run_experiment(
    problem: &Problem,
    methods: &[Method],
    n_seeds: u64,
    cfg: &RunConfig,
) -> Result<ExperimentReport> {
    if methods.is_empty() {
        return Err(Error::input("no methods requested"));
    }
    let models = Models::build(problem, methods, cfg)?;
    run_with_models(problem, &models, methods, n_seeds, cfg)
}

/// [`run_experiment`] with surrogates that were already built.
pub fn run_with_models(
    problem: &Problem,
    models: &Models,
    methods: &[Method],
    n_seeds: u64,
    cfg: &RunConfig,
) -> Result<ExperimentReport> {
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();
    let jobs: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| (1..=n_seeds).map(move |s| (m, s)))
        .collect();
    let outcomes = jobs
        .into_par_iter()
        .map(|(method, seed)| {
            let bo_cfg = cfg.bo_config(problem, seed);
            let initial = bo::initial_design(problem.n(), bo_cfg.n_init, seed).unwrap_or_default();
            let result = models
                .run(problem, method, cfg, seed)
                .map_err(|e| e.to_string());
            SeedOutcome {
                method,
                seed,
                initial,
                result,
            }
        })
        .collect();
    let (lo, hi) = problem.value_range();
    Ok(ExperimentReport {
        problem: problem.name.clone(),
        optimum_index: problem.true_optimum_index(),
        relaxed_threshold: lo + 0.99 * (hi - lo),
        outcomes,
    })
}
