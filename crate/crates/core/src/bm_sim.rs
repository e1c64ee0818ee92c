//! Euler–Maruyama simulation of Brownian motion on a manifold, in chart
//! coordinates, with reflection at the boundary.
//!
//! Reflection follows the reject-and-resample scheme: a step whose proposal
//! leaves the domain is discarded and redrawn without advancing time.
//! Every path draws from its own ChaCha stream keyed by
//! `(seed, start index, path index)`, so results do not depend on scheduling.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{contains, sde_coefficients, IntrinsicPoint, ManifoldSpec, SdeCoefficients};

/// Upper bound on the number of Euler steps per path.
pub const MAX_STEPS: f64 = 1e7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BMConfig {
    pub n_paths: usize,
    pub step_dt: f64,
    /// Strictly increasing snapshot times, each an integer multiple of `step_dt`.
    pub time_grid: Vec<f64>,
    pub seed: u64,
    pub max_reflect_attempts: u32,
}

impl Default for BMConfig {
    fn default() -> Self {
        Self {
            n_paths: 1000,
            step_dt: 1e-3,
            time_grid: vec![0.01, 0.1, 1.0],
            seed: 0,
            max_reflect_attempts: 10_000,
        }
    }
}

impl BMConfig {
    /// `count` log-spaced snapshot times over `[lo, hi]`, snapped to multiples
    /// of `step_dt` (never below one step) with duplicates removed.
    pub fn log_spaced_times(lo: f64, hi: f64, count: usize, step_dt: f64) -> Vec<f64> {
        let mut steps: Vec<u64> = (0..count)
            .map(|k| {
                let f = if count > 1 {
                    k as f64 / (count - 1) as f64
                } else {
                    1.0
                };
                let t = lo * (hi / lo).powf(f);
                ((t / step_dt).round() as u64).max(1)
            })
            .collect();
        steps.dedup();
        steps.into_iter().map(|s| s as f64 * step_dt).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::input("n_paths must be positive"));
        }
        if !(self.step_dt.is_finite() && self.step_dt > 0.0) {
            return Err(Error::input(format!(
                "step_dt must be positive, got {}",
                self.step_dt
            )));
        }
        if self.max_reflect_attempts == 0 {
            return Err(Error::input("max_reflect_attempts must be positive"));
        }
        if self.time_grid.is_empty() {
            return Err(Error::input("time_grid is empty"));
        }
        if self.time_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::input("time_grid must be strictly increasing"));
        }
        if self.time_grid.iter().any(|&t| !(t.is_finite() && t >= 0.0)) {
            return Err(Error::input(
                "time_grid entries must be finite and non-negative",
            ));
        }
        let last = self.time_grid[self.time_grid.len() - 1];
        if last / self.step_dt > MAX_STEPS {
            return Err(Error::input(format!(
                "t_K / step_dt = {} exceeds {MAX_STEPS:e}",
                last / self.step_dt
            )));
        }
        self.snapshot_steps().map(|_| ())
    }

    /// Step counts at which each snapshot is taken.
    pub fn snapshot_steps(&self) -> Result<Vec<u64>> {
        self.time_grid
            .iter()
            .map(|&t| {
                let n = t / self.step_dt;
                let r = n.round();
                if (n - r).abs() > 1e-6 * r.max(1.0) {
                    Err(Error::input(format!(
                        "snapshot time {t} is not a multiple of step_dt {}",
                        self.step_dt
                    )))
                } else {
                    Ok(r as u64)
                }
            })
            .collect()
    }
}

/// Positions of `N` paths from one start point, recorded at every snapshot time.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    start: IntrinsicPoint,
    start_index: u32,
    config: BMConfig,
    /// Row-major `K × N`.
    positions: Vec<IntrinsicPoint>,
}

impl PathEnsemble {
    pub fn start(&self) -> IntrinsicPoint {
        self.start
    }

    pub fn start_index(&self) -> u32 {
        self.start_index
    }

    pub fn config(&self) -> &BMConfig {
        &self.config
    }

    pub fn times(&self) -> &[f64] {
        &self.config.time_grid
    }

    pub fn n_paths(&self) -> usize {
        self.config.n_paths
    }

    /// Positions at the `k`-th snapshot time.
    pub fn row(&self, k: usize) -> &[IntrinsicPoint] {
        let n = self.config.n_paths;
        &self.positions[k * n..(k + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[IntrinsicPoint]> {
        self.positions.chunks(self.config.n_paths)
    }

    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.times()
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * s.abs().max(1.0))
            .ok_or(Error::Lookup(t))
    }
}

/// Wraps precomputed positions (row-major `K × N`) as an ensemble.
///
/// # Panics
/// If the number of positions is not `time_grid.len() * n_paths`.
pub fn ensemble_from_positions(
    start: IntrinsicPoint,
    start_index: u32,
    config: BMConfig,
    positions: Vec<IntrinsicPoint>,
) -> PathEnsemble {
    assert_eq!(
        positions.len(),
        config.time_grid.len() * config.n_paths,
        "ensemble shape mismatch"
    );
    PathEnsemble {
        start,
        start_index,
        config,
        positions,
    }
}

/// Positions stored for snapshot time `t`, which must be on the ensemble's time grid.
pub fn snapshot(ensemble: &PathEnsemble, t: f64) -> Result<&[IntrinsicPoint]> {
    Ok(ensemble.row(ensemble.time_index(t)?))
}

fn path_rng(seed: u64, start_index: u32, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((start_index as u64) << 40) ^ path as u64);
    rng
}

fn simulate_path(
    spec: &ManifoldSpec,
    start: IntrinsicPoint,
    start_index: u32,
    path: usize,
    cfg: &BMConfig,
    steps: &[u64],
) -> Result<Vec<IntrinsicPoint>> {
    let mut rng = path_rng(cfg.seed, start_index, path);
    let sqrt_dt = cfg.step_dt.sqrt();
    let flat = matches!(spec, ManifoldSpec::ConstrainedPlane { .. });
    let mut flat_coef = None;
    let mut x = start;
    let mut out = Vec::with_capacity(steps.len());
    let mut done = 0u64;
    for &target in steps {
        while done < target {
            let SdeCoefficients { drift, diffusion } = match flat_coef {
                Some(c) => c,
                None => {
                    let c = sde_coefficients(spec, x)?;
                    if flat {
                        flat_coef = Some(c);
                    }
                    c
                }
            };
            let base = [
                x.0[0] + drift[0] * cfg.step_dt,
                x.0[1] + drift[1] * cfg.step_dt,
            ];
            let mut rejected = 0u32;
            x = loop {
                let xi0: f64 = StandardNormal.sample(&mut rng);
                let xi1: f64 = StandardNormal.sample(&mut rng);
                let proposal = IntrinsicPoint([
                    base[0] + sqrt_dt * (diffusion[(0, 0)] * xi0 + diffusion[(0, 1)] * xi1),
                    base[1] + sqrt_dt * (diffusion[(1, 0)] * xi0 + diffusion[(1, 1)] * xi1),
                ]);
                if let Some(p) = spec.accept_step(proposal) {
                    break p;
                }
                rejected += 1;
                if rejected >= cfg.max_reflect_attempts {
                    return Err(Error::Reflection {
                        start_index,
                        path,
                        step: done,
                    });
                }
            };
            done += 1;
        }
        out.push(x);
    }
    Ok(out)
}

/// Simulates `cfg.n_paths` paths from `start`. `start_index` identifies the
/// start point among several (e.g. inducing points) and selects the RNG streams.
pub fn simulate_ensemble(
    spec: &ManifoldSpec,
    start: IntrinsicPoint,
    start_index: u32,
    cfg: &BMConfig,
) -> Result<PathEnsemble> {
    cfg.validate()?;
    if !contains(spec, start) {
        return Err(Error::Domain {
            coords: start.0.to_vec(),
            reason: "start point is not in the domain".into(),
        });
    }
    let start = spec.reduce(start);
    let steps = cfg.snapshot_steps()?;
    let paths: Vec<Vec<IntrinsicPoint>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| simulate_path(spec, start, start_index, p, cfg, &steps))
        .collect::<Result<_>>()?;
    let (k, n) = (steps.len(), cfg.n_paths);
    let mut positions = vec![start; k * n];
    for (p, path) in paths.into_iter().enumerate() {
        for (row, x) in path.into_iter().enumerate() {
            positions[row * n + p] = x;
        }
    }
    Ok(PathEnsemble {
        start,
        start_index,
        config: cfg.clone(),
        positions,
    })
}

// ---------------------------------------------------------------------------
// Ensemble cache

const CACHE_MAGIC: &[u8; 8] = b"INBOENS1";
const CACHE_HEADER: usize = 8 + 32 + 4 + 4 + 8 + 16;

/// Content hash of everything that determines an ensemble.
pub fn ensemble_hash(
    spec: &ManifoldSpec,
    start: IntrinsicPoint,
    start_index: u32,
    cfg: &BMConfig,
) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"inbo-ensemble-v1\n");
    h.update(spec_fingerprint(spec).as_bytes());
    h.update(format!("\nstart={:?}/{start_index}\n", spec.reduce(start).0).as_bytes());
    h.update(
        serde_json::to_string(cfg)
            .expect("config serialises")
            .as_bytes(),
    );
    h.finalize().into()
}

/// Canonical text form of a manifold; floats use their round-trip representation.
pub fn spec_fingerprint(spec: &ManifoldSpec) -> String {
    match spec {
        ManifoldSpec::ConstrainedPlane { boundary: None } => "plane".to_string(),
        ManifoldSpec::ConstrainedPlane { boundary: Some(p) } => {
            format!("plane outer={:?} holes={:?}", p.outer(), p.holes())
        }
        ManifoldSpec::BittenTorus(t) => {
            format!(
                "torus R={:?} r={:?} bite={:?}",
                t.major(),
                t.minor(),
                t.bite()
            )
        }
    }
}

/// Raw contents of a cache file, before its hash is checked against a request.
#[derive(Clone, Debug, PartialEq)]
pub struct CachedEnsemble {
    pub hash: [u8; 32],
    pub start_index: u32,
    pub start: IntrinsicPoint,
    pub times: Vec<f64>,
    pub positions: Vec<IntrinsicPoint>,
}

pub fn encode_ensemble(ensemble: &PathEnsemble, hash: &[u8; 32]) -> Vec<u8> {
    let k = ensemble.times().len();
    let n = ensemble.n_paths();
    let mut out = Vec::with_capacity(CACHE_HEADER + 8 * k + 16 * k * n);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(hash);
    out.extend_from_slice(&ensemble.start_index.to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for c in ensemble.start.0 {
        out.extend_from_slice(&c.to_le_bytes());
    }
    for t in ensemble.times() {
        out.extend_from_slice(&t.to_le_bytes());
    }
    for p in &ensemble.positions {
        out.extend_from_slice(&p.0[0].to_le_bytes());
        out.extend_from_slice(&p.0[1].to_le_bytes());
    }
    out
}

struct ByteReader<'a> {
    bytes: &'a [u8],
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.bytes.len() < n {
            return None;
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Some(head)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Parses a cache file. Sizes are checked against the input length before
/// anything is allocated.
pub fn decode_ensemble(bytes: &[u8]) -> std::result::Result<CachedEnsemble, String> {
    let mut r = ByteReader { bytes };
    let truncated = || "truncated cache file".to_string();
    if r.take(8).ok_or_else(truncated)? != CACHE_MAGIC {
        return Err("bad magic".into());
    }
    let hash: [u8; 32] = r.take(32).ok_or_else(truncated)?.try_into().unwrap();
    let start_index = r.u32().ok_or_else(truncated)?;
    let k = r.u32().ok_or_else(truncated)? as u64;
    let n = r.u64().ok_or_else(truncated)?;
    let start = IntrinsicPoint([
        r.f64().ok_or_else(truncated)?,
        r.f64().ok_or_else(truncated)?,
    ]);
    let expected = k
        .checked_mul(n)
        .and_then(|kn| kn.checked_mul(16))
        .and_then(|b| b.checked_add(8 * k))
        .ok_or("size overflow")?;
    if expected != r.bytes.len() as u64 {
        return Err(format!(
            "payload is {} bytes, header implies {expected}",
            r.bytes.len()
        ));
    }
    if k == 0 || n == 0 {
        return Err("empty ensemble".into());
    }
    let times = (0..k).map(|_| r.f64().unwrap()).collect();
    let positions = (0..k * n)
        .map(|_| IntrinsicPoint([r.f64().unwrap(), r.f64().unwrap()]))
        .collect();
    Ok(CachedEnsemble {
        hash,
        start_index,
        start,
        times,
        positions,
    })
}

pub fn cache_file_name(hash: &[u8; 32]) -> String {
    format!("ensemble-{}.bin", hex::encode(&hash[..16]))
}

pub fn save_ensemble(path: &Path, spec: &ManifoldSpec, ensemble: &PathEnsemble) -> Result<()> {
    let hash = ensemble_hash(spec, ensemble.start, ensemble.start_index, &ensemble.config);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_ensemble(ensemble, &hash))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a cached ensemble, failing unless its stored hash matches the
/// hash of the requested `(spec, start, cfg)`.
pub fn load_ensemble(
    path: &Path,
    spec: &ManifoldSpec,
    start: IntrinsicPoint,
    start_index: u32,
    cfg: &BMConfig,
) -> Result<PathEnsemble> {
    let cache_err = |reason: String| Error::Cache {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = fs::read(path)?;
    let cached = decode_ensemble(&bytes).map_err(cache_err)?;
    let expected = ensemble_hash(spec, start, start_index, cfg);
    if cached.hash != expected {
        return Err(cache_err(format!(
            "content hash mismatch: file has {}, request needs {}",
            hex::encode(cached.hash),
            hex::encode(expected)
        )));
    }
    if cached.times != cfg.time_grid || cached.positions.len() != cfg.time_grid.len() * cfg.n_paths
    {
        return Err(cache_err("payload does not match its configuration".into()));
    }
    Ok(PathEnsemble {
        start: cached.start,
        start_index,
        config: cfg.clone(),
        positions: cached.positions,
    })
}

/// Loads from `dir` when a matching cache file exists, otherwise simulates
/// and stores the result.
pub fn simulate_cached(
    dir: Option<&Path>,
    spec: &ManifoldSpec,
    start: IntrinsicPoint,
    start_index: u32,
    cfg: &BMConfig,
) -> Result<PathEnsemble> {
    let Some(dir) = dir else {
        return simulate_ensemble(spec, start, start_index, cfg);
    };
    let path = dir.join(cache_file_name(&ensemble_hash(
        spec,
        start,
        start_index,
        cfg,
    )));
    if path.exists() {
        return load_ensemble(&path, spec, start, start_index, cfg);
    }
    let ensemble = simulate_ensemble(spec, start, start_index, cfg)?;
    fs::create_dir_all(dir)?;
    save_ensemble(&path, spec, &ensemble)?;
    Ok(ensemble)
}
