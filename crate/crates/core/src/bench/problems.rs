use std::f64::consts::{PI, TAU};
use std::io::Read;

use serde::Deserialize;

use super::inducing::select_inducing;
use crate::bm_sim::BMConfig;
use crate::error::{Error, Result};
use crate::geometry::csv_error;
use crate::geometry::{cell_volumes, contains, embed, IntrinsicPoint, ManifoldSpec, Polygon};

/// A benchmark: a grid on a manifold, the objective at every grid point and
/// the inducing subset that carries Brownian-motion simulations.
#[derive(Clone, Debug)]
pub struct Problem {
    pub name: String,
    pub spec: ManifoldSpec,
    pub grid: Vec<IntrinsicPoint>,
    pub values: Vec<f64>,
    pub inducing: Vec<usize>,
    /// Chart area of one grid cell; inferred from the grid spacing when unset.
    pub cell_area: Option<f64>,
    /// Size of the random initial design.
    pub n_init: usize,
    /// Simulation settings used unless a run overrides them.
    pub bm_defaults: BMConfig,
    true_optimum: usize,
}

impl Problem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        spec: ManifoldSpec,
        grid: Vec<IntrinsicPoint>,
        values: Vec<f64>,
        inducing: Vec<usize>,
        cell_area: Option<f64>,
        n_init: usize,
        bm_defaults: BMConfig,
    ) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Grid("problem grid is empty".into()));
        }
        if grid.len() != values.len() {
            return Err(Error::input(format!(
                "{} grid points but {} values",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = grid.iter().position(|&p| !contains(&spec, p)) {
            return Err(Error::Domain {
                coords: grid[i].0.to_vec(),
                reason: format!("grid point {i} is outside"),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "objective value at grid point {i} is not finite"
            )));
        }
        let mut seen = vec![false; grid.len()];
        for &z in &inducing {
            if z >= grid.len() || std::mem::replace(&mut seen[z], true) {
                return Err(Error::input(format!(
                    "inducing index {z} is out of range or repeated"
                )));
            }
        }
        if n_init == 0 || n_init > grid.len() {
            return Err(Error::input(format!(
                "n_init = {n_init} does not fit a grid of {}",
                grid.len()
            )));
        }
        bm_defaults.validate()?;
        let true_optimum = argmax(&values);
        Ok(Self {
            name: name.into(),
            spec,
            grid,
            values,
            inducing,
            cell_area,
            n_init,
            bm_defaults,
            true_optimum,
        })
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    /// Grid index of the maximum value, lowest index on ties.
    pub fn true_optimum_index(&self) -> usize {
        self.true_optimum
    }

    pub fn value_range(&self) -> (f64, f64) {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        (lo, self.values[self.true_optimum])
    }

    pub fn volumes(&self) -> Result<Vec<f64>> {
        cell_volumes(&self.spec, &self.grid, self.cell_area)
    }

    /// Grid points in the embedding space.
    pub fn ambient_coords(&self) -> Vec<Vec<f64>> {
        self.grid
            .iter()
            .map(|&p| {
                embed(&self.spec, p)
                    .expect("grid points are validated at construction")
                    .0
            })
            .collect()
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Affine map of `values` onto `[lo, hi]`.
pub fn rescale(values: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                lo + (v - min) / span * (hi - lo)
            } else {
                lo
            }
        })
        .collect()
}

/// `count` log-spaced snapshot times over `[1e-3, 0.1] × diameter²`.
pub fn default_time_grid(spec: &ManifoldSpec, step_dt: f64, count: usize) -> Vec<f64> {
    let d2 = spec.chart_diameter().map_or(1.0, |d| d * d);
    BMConfig::log_spaced_times(1e-3 * d2, 0.1 * d2, count, step_dt)
}

fn bm_defaults(spec: &ManifoldSpec, n_paths: usize, step_dt: f64) -> BMConfig {
    BMConfig {
        n_paths,
        step_dt,
        time_grid: default_time_grid(spec, step_dt, 30),
        seed: 1,
        max_reflect_attempts: 10_000,
    }
}

/// Vertices used to approximate each semicircular arc of the U-shape.
const ARC_SEGMENTS: usize = 48;
const USHAPE_SPACING: f64 = 0.1645;
/// Grid points closer than this fraction of the spacing to the boundary are dropped.
const BOUNDARY_MARGIN: f64 = 0.3;

/// Horseshoe boundary: inner radius 0.5, outer radius 1.5, arms of length 3
/// extending along +x, centred on the origin.
/// Weight of the signed offset from the centre line; positive offsets point outwards.
const USHAPE_OFFSET_WEIGHT: f64 = 0.7;

pub fn ushape_polygon() -> Polygon {
    let mut pts = vec![[3.0, -1.5], [3.0, -0.5], [0.0, -0.5]];
    for k in 1..ARC_SEGMENTS {
        let a = -PI / 2.0 - PI * k as f64 / ARC_SEGMENTS as f64;
        pts.push([0.5 * a.cos(), 0.5 * a.sin()]);
    }
    pts.extend([[0.0, 0.5], [3.0, 0.5], [3.0, 1.5], [0.0, 1.5]]);
    for k in 1..ARC_SEGMENTS {
        let a = PI / 2.0 + PI * k as f64 / ARC_SEGMENTS as f64;
        pts.push([1.5 * a.cos(), 1.5 * a.sin()]);
    }
    pts.push([0.0, -1.5]);
    Polygon::new(pts, vec![]).expect("U-shape polygon is simple")
}

/// Raw U-shape objective: arc length along the centre line (radius 1) from
/// the lower-arm tip, tilted towards the inner edge so that the inner corner
/// of the upper tip is the unique maximum.
pub fn ushape_objective(p: [f64; 2]) -> f64 {
    let [x, y] = p;
    let (s, offset) = if x >= 0.0 && y < 0.0 {
        (3.0 - x, -y - 1.0)
    } else if x >= 0.0 {
        (3.0 + PI + x, y - 1.0)
    } else {
        let angle = (-PI / 2.0 - y.atan2(x)).rem_euclid(TAU);
        (3.0 + angle, x.hypot(y) - 1.0)
    };
    s - USHAPE_OFFSET_WEIGHT * offset
}

/// Equally spaced interior points of the U-shape, with rows aligned on the
/// symmetry axis and columns offset from the arm tips.
pub fn ushape_grid(polygon: &Polygon) -> Vec<IntrinsicPoint> {
    let h = USHAPE_SPACING;
    let mut pts = Vec::new();
    for j in -12..=12 {
        for i in 0..40 {
            let p = [3.0 - 0.55 * h - i as f64 * h, j as f64 * h];
            if polygon.contains(p) && polygon.boundary_distance(p) >= BOUNDARY_MARGIN * h {
                pts.push(IntrinsicPoint(p));
            }
        }
    }
    pts
}

/// Horseshoe domain with 285 grid points and values rising from −6.19 at the
/// lower-arm tip to 6.19 at the upper-arm tip.
pub fn ushape_problem() -> Problem {
    let polygon = ushape_polygon();
    let grid = ushape_grid(&polygon);
    let values = rescale(
        &grid
            .iter()
            .map(|p| ushape_objective(p.0))
            .collect::<Vec<_>>(),
        -6.19,
        6.19,
    );
    let spec = ManifoldSpec::plane(polygon);
    let h2 = USHAPE_SPACING * USHAPE_SPACING;
    let volumes = vec![h2; grid.len()];
    let inducing = select_inducing(&spec, &grid, &volumes, 20);
    let bm = bm_defaults(&spec, 5000, 1e-3);
    Problem::new("ushape", spec, grid, values, inducing, Some(h2), 3, bm)
        .expect("U-shape problem is valid")
}

pub const TORUS_BITE_WIDTH: f64 = 0.2;
const TORUS_THETA_STEPS: usize = 20;
const TORUS_PHI_STEPS: usize = 30;

/// Bitten torus `R = 2, r = 1` with the sector `|φ| < 0.1` removed.
pub fn bitten_torus_spec() -> ManifoldSpec {
    ManifoldSpec::torus(2.0, 1.0, (-TORUS_BITE_WIDTH / 2.0, TORUS_BITE_WIDTH / 2.0))
        .expect("valid torus")
}

/// 600 grid points on a 20 × 30 `(θ, φ)` lattice over the unbitten part.
/// The objective is the signed arc length along each `φ` circle, measured
/// from the meridian opposite the bite, rescaled to [0.57, 5.50]. Both
/// extremes sit on the outer equator on either side of the bite, 1.2 apart
/// in the embedding.
pub fn bitten_torus_problem() -> Problem {
    let spec = bitten_torus_spec();
    let ManifoldSpec::BittenTorus(torus) = &spec else {
        unreachable!()
    };
    let d_theta = TAU / TORUS_THETA_STEPS as f64;
    let d_phi = torus.phi_span() / TORUS_PHI_STEPS as f64;
    let phi_mid = torus.phi_start() + torus.phi_span() / 2.0;
    let mut grid = Vec::new();
    let mut raw = Vec::new();
    for i in 0..TORUS_THETA_STEPS {
        for j in 0..TORUS_PHI_STEPS {
            let theta = i as f64 * d_theta;
            let phi = torus.phi_start() + (j as f64 + 0.5) * d_phi;
            grid.push(IntrinsicPoint::new(theta, phi));
            raw.push((torus.major() + torus.minor() * theta.cos()) * (phi - phi_mid));
        }
    }
    let values = rescale(&raw, 0.57, 5.50);
    let area = d_theta * d_phi;
    let volumes = cell_volumes(&spec, &grid, Some(area)).expect("regular lattice");
    let inducing = select_inducing(&spec, &grid, &volumes, 19);
    let bm = bm_defaults(&spec, 5000, 4e-3);
    Problem::new(
        "bitten_torus",
        spec,
        grid,
        values,
        inducing,
        Some(area),
        4,
        bm,
    )
    .expect("torus problem is valid")
}

/// One row of a grid file.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct GridRow {
    pub x: f64,
    pub y: f64,
    pub value: f64,
    pub is_inducing: u8,
}

/// Reads the `x,y,value,is_inducing` grid format.
pub fn read_grid_csv<R: Read>(reader: R) -> Result<Vec<GridRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<GridRow>().enumerate() {
        let row = rec.map_err(|e| csv_error(e, i + 2))?;
        let line = i + 2;
        if !(row.x.is_finite() && row.y.is_finite() && row.value.is_finite()) {
            return Err(Error::Parse {
                line,
                reason: "non-finite number".into(),
            });
        }
        if row.is_inducing > 1 {
            return Err(Error::Parse {
                line,
                reason: format!("is_inducing must be 0 or 1, got {}", row.is_inducing),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Builds a constrained-plane problem from a boundary file and a grid file.
/// Ingestion errors name the 1-based data row of the grid file.
pub fn load_domain<B: Read, G: Read>(name: &str, boundary: B, grid: G) -> Result<Problem> {
    let polygon = Polygon::from_csv_reader(boundary)?;
    let rows = read_grid_csv(grid)?;
    if rows.is_empty() {
        return Err(Error::Ingestion {
            row: 0,
            reason: "grid file has no rows".into(),
        });
    }
    for (i, r) in rows.iter().enumerate() {
        if !polygon.contains([r.x, r.y]) {
            return Err(Error::Ingestion {
                row: i + 1,
                reason: format!("point ({}, {}) is outside the boundary", r.x, r.y),
            });
        }
    }
    let grid: Vec<IntrinsicPoint> = rows.iter().map(|r| IntrinsicPoint::new(r.x, r.y)).collect();
    let values = rows.iter().map(|r| r.value).collect();
    let inducing: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_inducing == 1)
        .map(|(i, _)| i)
        .collect();
    if inducing.is_empty() {
        return Err(Error::Ingestion {
            row: 0,
            reason: "no grid row is marked as inducing".into(),
        });
    }
    let spec = ManifoldSpec::plane(polygon);
    cell_volumes(&spec, &grid, None)?;
    let bm = bm_defaults(&spec, 5000, 1e-3);
    Problem::new(name, spec, grid, values, inducing, None, 4, bm)
}

pub const SEA_BOUNDARY_CSV: &str = include_str!("../../data/sea_boundary.csv");
pub const SEA_GRID_CSV: &str = include_str!("../../data/sea_grid.csv");

/// The bundled two-basin sea (485 grid points, 42 inducing).
pub fn sea_problem() -> Problem {
    load_domain("sea", SEA_BOUNDARY_CSV.as_bytes(), SEA_GRID_CSV.as_bytes())
        .expect("bundled sea data is valid")
}
