//! Bayesian optimisation over a finite grid with the probability-of-improvement
//! acquisition.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::sparse_gp::rbf::RbfGp;
use crate::sparse_gp::{
    HyperGrid, Hyperparameters, IntrinsicGp, IntrinsicHyper, Posterior, RbfHyper, TrainingSet,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BOConfig {
    pub n_iterations: usize,
    /// Absolute PI margin. When unset, `epsilon_relative × (max y − min y)` is
    /// used, recomputed every iteration.
    pub epsilon: Option<f64>,
    pub epsilon_relative: f64,
    pub n_init: usize,
    pub seed: u64,
}

impl Default for BOConfig {
    fn default() -> Self {
        Self {
            n_iterations: 30,
            epsilon: None,
            epsilon_relative: 0.01,
            n_init: 3,
            seed: 0,
        }
    }
}

impl BOConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.n_init == 0 {
            return Err(Error::input("n_init must be at least 1"));
        }
        if self.n_init + self.n_iterations > n {
            return Err(Error::input(format!(
                "n_init + n_iterations = {} exceeds the grid size {n}",
                self.n_init + self.n_iterations
            )));
        }
        if let Some(e) = self.epsilon {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::input(format!(
                    "epsilon must be non-negative, got {e}"
                )));
            }
        }
        if !(self.epsilon_relative.is_finite() && self.epsilon_relative >= 0.0) {
            return Err(Error::input("epsilon_relative must be non-negative"));
        }
        Ok(())
    }

    fn epsilon_for(&self, y: &[f64]) -> f64 {
        self.epsilon.unwrap_or_else(|| {
            let (lo, hi) = y
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            self.epsilon_relative * (hi - lo)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 0 for the initial design, then 1, 2, …
    pub iteration: usize,
    pub grid_index: usize,
    pub y: f64,
    pub best_index: usize,
    pub best_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BOTrace {
    pub records: Vec<TraceRecord>,
    /// Hyperparameters used to choose each iteration's point.
    pub hyperparameters: Vec<Hyperparameters>,
    /// Negative predictive variances clamped to zero, summed over iterations.
    pub clamped_variances: usize,
}

impl BOTrace {
    pub fn initial_indices(&self) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| r.iteration == 0)
            .map(|r| r.grid_index)
            .collect()
    }

    pub fn best(&self) -> &TraceRecord {
        self.records
            .last()
            .expect("a trace always holds the initial design")
    }

    /// Evaluations (initial design included) until `index` became the incumbent.
    pub fn evals_to(&self, index: usize) -> Option<usize> {
        self.records
            .iter()
            .position(|r| r.best_index == index)
            .map(|p| p + 1)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "grid_index", "y", "best_index", "best_value"])
            .map_err(csv_io)?;
        for r in &self.records {
            out.write_record([
                r.iteration.to_string(),
                r.grid_index.to_string(),
                r.y.to_string(),
                r.best_index.to_string(),
                r.best_value.to_string(),
            ])
            .map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `ln Φ(z)`, accurate far into the lower tail where `Φ` underflows.
pub fn log_normal_cdf(z: f64) -> f64 {
    if z > -30.0 {
        return normal_cdf(z).ln();
    }
    // Asymptotic series of the Mills ratio.
    let z2 = z * z;
    let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
    -0.5 * z2 - (-z).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
}

fn pi_z(mean: f64, var: f64, f_best: f64, epsilon: f64) -> (f64, f64) {
    (mean - f_best - epsilon, var.max(0.0).sqrt())
}

/// Probability of improvement by more than `epsilon` over `f_best` at every
/// grid point. Points with zero predictive spread score 1 when their mean
/// clears the margin and 0 otherwise.
pub fn pi_scores(post: &Posterior, f_best: f64, epsilon: f64) -> Vec<f64> {
    post.mean
        .iter()
        .zip(&post.variance)
        .map(|(&m, &v)| match pi_z(m, v, f_best, epsilon) {
            (gap, sd) if sd > 0.0 => normal_cdf(gap / sd),
            (gap, _) => f64::from(u8::from(gap > 0.0)),
        })
        .collect()
}

/// `ln` of [`pi_scores`]. Ranks candidates identically but keeps them apart
/// where the scores themselves underflow to zero.
pub fn pi_log_scores(post: &Posterior, f_best: f64, epsilon: f64) -> Vec<f64> {
    post.mean
        .iter()
        .zip(&post.variance)
        .map(|(&m, &v)| match pi_z(m, v, f_best, epsilon) {
            (gap, sd) if sd > 0.0 => log_normal_cdf(gap / sd),
            (gap, _) if gap > 0.0 => 0.0,
            _ => f64::NEG_INFINITY,
        })
        .collect()
}

/// Highest-scoring unvisited index; ties go to the lowest index.
pub fn select_next(scores: &[f64], visited: &[bool]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if visited.get(i).copied().unwrap_or(false) {
            continue;
        }
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best.ok_or(Error::Exhaustion)
}

/// Indices of the initial design: `n_init` distinct grid points drawn
/// uniformly from a generator seeded with `seed`.
pub fn initial_design(n: usize, n_init: usize, seed: u64) -> Result<Vec<usize>> {
    if n_init == 0 || n_init > n {
        return Err(Error::input(format!(
            "cannot draw {n_init} initial points from {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, n, n_init).into_vec())
}

/// A model that turns the current observations into a posterior over the grid.
pub trait Surrogate {
    fn n(&self) -> usize;

    /// Refits hyperparameters on `data` and predicts at every grid point.
    fn posterior(&self, data: &TrainingSet) -> Result<(Posterior, Hyperparameters)>;
}

/// Prior magnitude used while fewer than two observations exist.
fn single_point_magnitude(data: &TrainingSet) -> f64 {
    data.y().iter().map(|v| v * v).sum::<f64>().max(1.0)
}

pub struct IntrinsicSurrogate<'a> {
    pub gp: &'a IntrinsicGp,
    pub grid: HyperGrid,
}

impl Surrogate for IntrinsicSurrogate<'_> {
    fn n(&self) -> usize {
        self.gp.n()
    }

    fn posterior(&self, data: &TrainingSet) -> Result<(Posterior, Hyperparameters)> {
        let h = if data.len() >= 2 {
            self.gp.fit(data, &self.grid)?
        } else {
            let ts = self.gp.kernel().t_grid();
            let s = single_point_magnitude(data);
            IntrinsicHyper {
                t: ts[ts.len() / 2],
                sigma_h2: s,
                noise: s * self.grid.noise.0,
            }
        };
        let post = if data.len() >= 2 {
            self.gp.predict_centered(data, &h)?
        } else {
            self.gp.predict(data, &h)?
        };
        Ok((post, Hyperparameters::Intrinsic(h)))
    }
}

pub struct RbfSurrogate<'a> {
    pub gp: &'a RbfGp,
    pub length_scales: Vec<f64>,
    pub grid: HyperGrid,
}

impl Surrogate for RbfSurrogate<'_> {
    fn n(&self) -> usize {
        self.gp.n()
    }

    fn posterior(&self, data: &TrainingSet) -> Result<(Posterior, Hyperparameters)> {
        let h = if data.len() >= 2 {
            self.gp.fit(data, &self.length_scales, &self.grid)?
        } else {
            let s = single_point_magnitude(data);
            let l = self.length_scales[self.length_scales.len() / 2];
            RbfHyper {
                length_scale: l,
                sigma_r2: s,
                noise: s * self.grid.noise.0,
            }
        };
        let post = if data.len() >= 2 {
            self.gp.predict_centered(data, &h)?
        } else {
            self.gp.predict(data, &h)?
        };
        Ok((post, Hyperparameters::Rbf(h)))
    }
}

fn incumbent(data: &TrainingSet) -> (usize, f64) {
    data.indices()
        .iter()
        .zip(data.y())
        .fold((usize::MAX, f64::NEG_INFINITY), |b, (&i, &y)| {
            if y > b.1 {
                (i, y)
            } else {
                b
            }
        })
}

/// Runs the BO loop against the objective `values` (one per grid point).
pub fn run(surrogate: &dyn Surrogate, values: &[f64], cfg: &BOConfig) -> Result<BOTrace> {
    let n = surrogate.n();
    if values.len() != n {
        return Err(Error::input(format!(
            "{} objective values for {n} grid points",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("objective values must be finite"));
    }
    cfg.validate(n)?;
    let mut data = TrainingSet::empty();
    let mut visited = vec![false; n];
    let mut records = Vec::with_capacity(cfg.n_init + cfg.n_iterations);
    for i in initial_design(n, cfg.n_init, cfg.seed)? {
        data.push(i, values[i])?;
        visited[i] = true;
        let (best_index, best_value) = incumbent(&data);
        records.push(TraceRecord {
            iteration: 0,
            grid_index: i,
            y: values[i],
            best_index,
            best_value,
        });
    }
    let mut hyperparameters = Vec::with_capacity(cfg.n_iterations);
    let mut clamped_variances = 0;
    for iteration in 1..=cfg.n_iterations {
        let mut step = || -> Result<usize> {
            let (post, h) = surrogate.posterior(&data)?;
            clamped_variances += post.clamped;
            hyperparameters.push(h);
            let (_, f_best) = incumbent(&data);
            let scores = pi_scores(&post, f_best, cfg.epsilon_for(data.y()));
            select_next(&scores, &visited)
        };
        let next = step().map_err(|e| Error::Iteration {
            iteration,
            source: Box::new(e),
        })?;
        data.push(next, values[next])?;
        visited[next] = true;
        let (best_index, best_value) = incumbent(&data);
        records.push(TraceRecord {
            iteration,
            grid_index: next,
            y: values[next],
            best_index,
            best_value,
        });
    }
    Ok(BOTrace {
        records,
        hyperparameters,
        clamped_variances,
    })
}
