//! Heat-kernel estimates from Brownian-motion path ensembles.
//!
//! The density at grid point `s_i` is `(k_i / N) / V(A_i)`, where `k_i` paths
//! sit in the cell `A_i` of `s_i` at time `t` and `V(A_i)` is its Riemannian
//! volume. Cells are the Voronoi cells of the grid in chart distance.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::bm_sim::PathEnsemble;
use crate::error::{Error, Result};
use crate::geometry::{IntrinsicPoint, ManifoldSpec, NearestGrid};

/// Assigns path positions to grid cells and converts counts to densities.
#[derive(Clone, Debug)]
pub struct DensityEstimator {
    index: NearestGrid,
    volumes: Vec<f64>,
}

impl DensityEstimator {
    pub fn new(spec: &ManifoldSpec, grid: &[IntrinsicPoint], volumes: Vec<f64>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::input("empty grid"));
        }
        if volumes.len() != grid.len() {
            return Err(Error::input(format!(
                "{} volumes for {} grid points",
                volumes.len(),
                grid.len()
            )));
        }
        if volumes.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::input("cell volumes must be positive"));
        }
        Ok(Self {
            index: NearestGrid::new(spec, grid),
            volumes,
        })
    }

    pub fn n(&self) -> usize {
        self.volumes.len()
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    /// Path counts per cell for a set of positions.
    pub fn counts(&self, positions: &[IntrinsicPoint]) -> Vec<u32> {
        let mut counts = vec![0u32; self.n()];
        for &p in positions {
            counts[self.index.nearest(p).0] += 1;
        }
        counts
    }

    /// Density row at snapshot time `t`.
    pub fn row(&self, ensemble: &PathEnsemble, t: f64) -> Result<Vec<f64>> {
        let k = ensemble.time_index(t)?;
        self.row_at(ensemble, k)
    }

    fn row_at(&self, ensemble: &PathEnsemble, k: usize) -> Result<Vec<f64>> {
        let positions = ensemble.row(k);
        if positions.is_empty() {
            return Err(Error::input("empty ensemble"));
        }
        let n_paths = positions.len() as f64;
        Ok(self
            .counts(positions)
            .into_iter()
            .zip(&self.volumes)
            .map(|(c, v)| (c as f64 / n_paths) / v)
            .collect())
    }

    /// Density rows for every snapshot time of the ensemble.
    pub fn rows(&self, ensemble: &PathEnsemble) -> Result<Vec<Vec<f64>>> {
        (0..ensemble.times().len())
            .into_par_iter()
            .map(|k| self.row_at(ensemble, k))
            .collect()
    }
}

/// Estimated transition density from the ensemble's start to every grid
/// point at time `t`.
pub fn estimate_density_row(
    spec: &ManifoldSpec,
    ensemble: &PathEnsemble,
    grid: &[IntrinsicPoint],
    volumes: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    DensityEstimator::new(spec, grid, volumes.to_vec())?.row(ensemble, t)
}

/// Heat-kernel matrices between inducing points and the full grid, one per
/// diffusion time.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelEstimate {
    t_grid: Vec<f64>,
    k_zz: Vec<DMatrix<f64>>,
    k_zr: Vec<DMatrix<f64>>,
    inducing: Vec<usize>,
    n: usize,
}

impl KernelEstimate {
    /// Assembles an estimate from raw `m × n` inducing-to-grid matrices, one per
    /// time. `K_zz` is taken from the inducing columns, then symmetrised and
    /// projected onto the PSD cone; `K_zr` is kept as given.
    pub fn from_matrices(
        t_grid: Vec<f64>,
        k_zr: Vec<DMatrix<f64>>,
        inducing: Vec<usize>,
    ) -> Result<Self> {
        if t_grid.is_empty() || t_grid.len() != k_zr.len() {
            return Err(Error::input(format!(
                "{} times but {} matrices",
                t_grid.len(),
                k_zr.len()
            )));
        }
        let m = inducing.len();
        if m == 0 {
            return Err(Error::input("no inducing points"));
        }
        let n = k_zr[0].ncols();
        let mut seen = vec![false; n];
        for &i in &inducing {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::input(format!(
                    "inducing index {i} is out of range or repeated"
                )));
            }
        }
        if k_zr.iter().any(|k| k.nrows() != m || k.ncols() != n) {
            return Err(Error::input("kernel matrices have inconsistent shapes"));
        }
        let k_zz = k_zr
            .iter()
            .map(|k| symmetrize_psd(&k.select_columns(&inducing)))
            .collect();
        Ok(Self {
            t_grid,
            k_zz,
            k_zr,
            inducing,
            n,
        })
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn inducing(&self) -> &[usize] {
        &self.inducing
    }

    pub fn m(&self) -> usize {
        self.inducing.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_zz(&self, k: usize) -> &DMatrix<f64> {
        &self.k_zz[k]
    }

    pub fn k_zr(&self, k: usize) -> &DMatrix<f64> {
        &self.k_zr[k]
    }

    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.t_grid
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * s.abs().max(1.0))
            .ok_or(Error::Lookup(t))
    }

    /// Writes every `K_zr` row as CSV: `t,inducing_index,g0,…,g{n-1}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t,inducing_index")?;
        for j in 0..self.n {
            write!(w, ",g{j}")?;
        }
        writeln!(w)?;
        for (t, k) in self.t_grid.iter().zip(&self.k_zr) {
            for (row, &z) in self.inducing.iter().enumerate() {
                write!(w, "{t},{z}")?;
                for j in 0..self.n {
                    write!(w, ",{}", k[(row, j)])?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Builds the kernel estimate from one ensemble per inducing point.
pub fn build_kernel(
    ensembles: &[PathEnsemble],
    estimator: &DensityEstimator,
    inducing: &[usize],
) -> Result<KernelEstimate> {
    if ensembles.is_empty() || ensembles.len() != inducing.len() {
        return Err(Error::input(format!(
            "{} ensembles for {} inducing points",
            ensembles.len(),
            inducing.len()
        )));
    }
    let mut builder = KernelBuilder::new(
        ensembles[0].times().to_vec(),
        inducing.to_vec(),
        estimator.n(),
    );
    for e in ensembles {
        builder.push(estimator, e)?;
    }
    builder.finish()
}

/// Accumulates density rows one ensemble at a time, so ensembles can be
/// dropped as soon as their rows are computed.
#[derive(Debug)]
pub struct KernelBuilder {
    t_grid: Vec<f64>,
    inducing: Vec<usize>,
    n: usize,
    rows: Vec<Vec<Vec<f64>>>,
}

impl KernelBuilder {
    pub fn new(t_grid: Vec<f64>, inducing: Vec<usize>, n: usize) -> Self {
        Self {
            t_grid,
            inducing,
            n,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, estimator: &DensityEstimator, ensemble: &PathEnsemble) -> Result<()> {
        if ensemble.times() != self.t_grid.as_slice() {
            return Err(Error::input("ensembles do not share a time grid"));
        }
        if estimator.n() != self.n {
            return Err(Error::input("estimator grid size does not match"));
        }
        if self.rows.len() >= self.inducing.len() {
            return Err(Error::input("more ensembles than inducing points"));
        }
        self.rows.push(estimator.rows(ensemble)?);
        Ok(())
    }

    pub fn finish(self) -> Result<KernelEstimate> {
        let m = self.inducing.len();
        if self.rows.len() != m {
            return Err(Error::input(format!(
                "{} ensembles for {m} inducing points",
                self.rows.len()
            )));
        }
        let k_zr = (0..self.t_grid.len())
            .map(|k| DMatrix::from_fn(m, self.n, |i, j| self.rows[i][k][j]))
            .collect();
        KernelEstimate::from_matrices(self.t_grid, k_zr, self.inducing)
    }
}

/// `(A + Aᵀ)/2` with negative eigenvalues clipped to zero.
pub fn symmetrize_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "symmetrize_psd needs a square matrix");
    let b = (a + a.transpose()) * 0.5;
    if b.nrows() == 0 {
        return b;
    }
    let eig = SymmetricEigen::new(b.clone());
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return b;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let c = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (&c + c.transpose()) * 0.5
}

fn check_positive(name: &str, v: f64, at: &[f64]) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            coords: at.to_vec(),
            reason: format!("{name} must be positive, got {v}"),
        })
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "points of different dimension");
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Heat kernel of `ℝ^d`: `(2πt)^{-d/2} exp(-‖s₀ - s‖² / 2t)`.
pub fn euclidean_heat_kernel(s0: &[f64], s: &[f64], t: f64) -> Result<f64> {
    check_positive("diffusion time", t, s0)?;
    let d = s0.len() as f64;
    Ok((2.0 * std::f64::consts::PI * t).powf(-d / 2.0)
        * (-squared_distance(s0, s) / (2.0 * t)).exp())
}

/// Squared-exponential kernel `σ² exp(-‖x₀ - x‖² / 2l²)`.
pub fn rbf_kernel(x0: &[f64], x: &[f64], length_scale: f64, magnitude: f64) -> Result<f64> {
    check_positive("length scale", length_scale, x0)?;
    check_positive("magnitude", magnitude, x0)?;
    Ok(magnitude * (-squared_distance(x0, x) / (2.0 * length_scale * length_scale)).exp())
}
