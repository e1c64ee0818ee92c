//! Surrogate models.
//!
//! [`IntrinsicGp`] is the sparse GP with the deterministic inducing
//! conditional: with `Σ = σ_h² K̂`, every covariance block is
//! `Q_AB = Σ_Az Σ_zz⁻¹ Σ_zB`. Per diffusion time the Cholesky factor `L` of
//! `K_zz` and `B = L⁻¹ K_zr` are computed once, after which
//! `Q_AB = σ_h² B_Aᵀ B_B` and all conditioning runs through `m × m` systems.
//!
//! [`rbf`] holds the exact Euclidean GP used as the baseline.

pub mod rbf;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heat_kernel::KernelEstimate;

/// Jitter multipliers (× trace(K_zz)/m) tried in turn before giving up.
pub const JITTER_LADDER: [f64; 3] = [1e-8, 1e-6, 1e-4];

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Observed grid indices and their values.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    indices: Vec<usize>,
    y: Vec<f64>,
}

impl TrainingSet {
    pub fn new(indices: Vec<usize>, y: Vec<f64>) -> Result<Self> {
        if indices.len() != y.len() {
            return Err(Error::input(format!(
                "{} indices for {} observations",
                indices.len(),
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("observations must be finite"));
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::input("training indices must be unique"));
        }
        Ok(Self { indices, y })
    }

    pub fn empty() -> Self {
        Self {
            indices: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.contains(&index)
    }

    pub fn push(&mut self, index: usize, y: f64) -> Result<()> {
        if self.contains(index) {
            return Err(Error::input(format!(
                "grid index {index} is already observed"
            )));
        }
        if !y.is_finite() {
            return Err(Error::input("observations must be finite"));
        }
        self.indices.push(index);
        self.y.push(y);
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        if self.y.is_empty() {
            0.0
        } else {
            self.y.iter().sum::<f64>() / self.y.len() as f64
        }
    }

    /// Population variance of the observations.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        if self.y.is_empty() {
            0.0
        } else {
            self.y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.y.len() as f64
        }
    }

    /// The same points with the sample mean subtracted.
    pub fn centered(&self) -> TrainingSet {
        let m = self.mean();
        TrainingSet {
            indices: self.indices.clone(),
            y: self.y.iter().map(|v| v - m).collect(),
        }
    }

    fn check_range(&self, n: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= n) {
            Some(i) => Err(Error::input(format!(
                "training index {i} outside a grid of {n} points"
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicHyper {
    /// Diffusion time; a member of the kernel's time grid.
    pub t: f64,
    pub sigma_h2: f64,
    pub noise: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfHyper {
    pub length_scale: f64,
    pub sigma_r2: f64,
    pub noise: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hyperparameters {
    Intrinsic(IntrinsicHyper),
    Rbf(RbfHyper),
}

/// Predictive mean and marginal variance at every grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// How many variances were negative and clamped to zero.
    pub clamped: usize,
}

impl Posterior {
    fn from_raw(mean: Vec<f64>, raw_variance: Vec<f64>) -> Self {
        let mut clamped = 0;
        let variance = raw_variance
            .into_iter()
            .map(|v| {
                if v < 0.0 {
                    clamped += 1;
                    0.0
                } else {
                    v
                }
            })
            .collect();
        Self {
            mean,
            variance,
            clamped,
        }
    }

    pub fn shifted(mut self, offset: f64) -> Self {
        for m in &mut self.mean {
            *m += offset;
        }
        self
    }
}

/// Log-spaced candidate values: `count` points over `[lo, hi] × scale`.
pub fn log_grid(lo: f64, hi: f64, count: usize, scale: f64) -> Vec<f64> {
    (0..count)
        .map(|k| {
            let f = if count > 1 {
                k as f64 / (count - 1) as f64
            } else {
                0.0
            };
            scale * lo * (hi / lo).powf(f)
        })
        .collect()
}

/// Candidate grids for the kernel magnitude and the noise variance, both
/// relative to the variance of the observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperGrid {
    /// `[lo, hi, count]` for the kernel magnitude, as multiples of var(y).
    pub magnitude: (f64, f64, usize),
    /// `[lo, hi, count]` for the noise variance, as multiples of var(y).
    pub noise: (f64, f64, usize),
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            magnitude: (1e-2, 1e4, 15),
            noise: (1e-6, 1.0, 10),
        }
    }
}

impl HyperGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi, n)) in [("magnitude", self.magnitude), ("noise", self.noise)] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite() && n >= 1) {
                return Err(Error::input(format!(
                    "invalid {name} grid ({lo}, {hi}, {n})"
                )));
            }
        }
        Ok(())
    }

    /// Scale used for the relative grids; falls back to 1 for data that is
    /// constant up to rounding.
    pub fn data_scale(data: &TrainingSet) -> f64 {
        let v = data.variance();
        let m = data.mean();
        if v.is_finite() && v > 1e-24 * (m * m).max(f64::MIN_POSITIVE) {
            v
        } else {
            1.0
        }
    }

    pub fn magnitudes(&self, scale: f64) -> Vec<f64> {
        log_grid(self.magnitude.0, self.magnitude.1, self.magnitude.2, scale)
    }

    pub fn noises(&self, scale: f64) -> Vec<f64> {
        log_grid(self.noise.0, self.noise.1, self.noise.2, scale)
    }
}

struct TimeFactor {
    /// `L⁻¹ K_zr`, `m × n`.
    b: DMatrix<f64>,
}

/// Sparse intrinsic GP over the grid of a [`KernelEstimate`].
pub struct IntrinsicGp {
    kernel: KernelEstimate,
    factors: Vec<std::result::Result<TimeFactor, String>>,
}

/// Cholesky factor of `a`, or of `a + jitter · I` with the jitter escalating
/// along [`JITTER_LADDER`] when `a` is numerically singular (a pivot below
/// `1e-12 · trace/m`).
pub fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let m = a.nrows();
    let scale = (a.trace() / m as f64).abs().max(f64::MIN_POSITIVE);
    if let Some(c) = Cholesky::new(a.clone()) {
        if c.l_dirty()
            .diagonal()
            .iter()
            .all(|d| d * d >= 1e-12 * scale)
        {
            return Ok(c);
        }
    }
    for mult in JITTER_LADDER {
        let mut j = a.clone();
        for i in 0..m {
            j[(i, i)] += mult * scale;
        }
        if let Some(c) = Cholesky::new(j) {
            return Ok(c);
        }
    }
    Err(Error::Conditioning(format!(
        "{m}×{m} matrix is not positive definite with jitter up to {:e} × trace/m",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

/// `Λ⁻½ Uᵀ K_zr` over the eigenpairs of `K_zz` with `λ > rcond · λ_max`.
fn truncated_factor(
    k_zz: &DMatrix<f64>,
    k_zr: &DMatrix<f64>,
    rcond: f64,
) -> std::result::Result<DMatrix<f64>, String> {
    let eig = SymmetricEigen::new(k_zz.clone());
    let top = eig.eigenvalues.max();
    if !(top > 0.0) {
        return Err("K_zz has no positive eigenvalue".into());
    }
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > rcond * top)
        .collect();
    let mut b = DMatrix::zeros(keep.len(), k_zr.ncols());
    for (row, &i) in keep.iter().enumerate() {
        let u = eig.eigenvectors.column(i);
        let scaled = (u.transpose() * k_zr) / eig.eigenvalues[i].sqrt();
        b.row_mut(row).copy_from(&scaled);
    }
    Ok(b)
}

impl IntrinsicGp {
    /// Inverts `K_zz` by Cholesky, with jitter only when it is singular.
    pub fn new(kernel: KernelEstimate) -> Self {
        Self::with_rcond(kernel, 0.0)
    }

    /// With `rcond > 0`, `K_zz` is instead pseudo-inverted with eigenvalues
    /// below `rcond · λ_max` discarded. Monte Carlo error in the estimated
    /// kernel otherwise swamps its small eigenvalues, and `Q_rr` at points
    /// off the inducing set grows without bound.
    pub fn with_rcond(kernel: KernelEstimate, rcond: f64) -> Self {
        let factors = (0..kernel.t_grid().len())
            .map(|k| {
                if rcond > 0.0 {
                    return truncated_factor(kernel.k_zz(k), kernel.k_zr(k), rcond)
                        .map(|b| TimeFactor { b });
                }
                let chol = cholesky_with_jitter(kernel.k_zz(k)).map_err(|e| e.to_string())?;
                let b = chol
                    .l()
                    .solve_lower_triangular(kernel.k_zr(k))
                    .ok_or("singular Cholesky factor")?;
                Ok(TimeFactor { b })
            })
            .collect();
        Self { kernel, factors }
    }

    pub fn kernel(&self) -> &KernelEstimate {
        &self.kernel
    }

    pub fn n(&self) -> usize {
        self.kernel.n()
    }

    fn factor(&self, t: f64) -> Result<&TimeFactor> {
        let k = self.kernel.time_index(t)?;
        self.factors[k]
            .as_ref()
            .map_err(|e| Error::Conditioning(format!("K_zz at t = {t}: {e}")))
    }

    /// `Q_AB = Σ_Az Σ_zz⁻¹ Σ_zB` for index sets `rows` and `cols`.
    pub fn q_cross(
        &self,
        t: f64,
        sigma_h2: f64,
        rows: &[usize],
        cols: &[usize],
    ) -> Result<DMatrix<f64>> {
        let f = self.factor(t)?;
        let n = self.n();
        if let Some(&i) = rows.iter().chain(cols).find(|&&i| i >= n) {
            return Err(Error::input(format!(
                "index {i} outside a grid of {n} points"
            )));
        }
        Ok(f.b.select_columns(rows).transpose() * f.b.select_columns(cols) * sigma_h2)
    }

    /// `log N(y | 0, Q_DD + σ²_noise I)`, through the Woodbury identity and the
    /// matrix determinant lemma on `M = σ_h² A Aᵀ + σ²_noise I` (`m × m`),
    /// where `A = B_D`. With zero noise the `|D| × |D|` covariance is factored
    /// directly and must be non-singular.
    pub fn log_marginal_likelihood(&self, data: &TrainingSet, h: &IntrinsicHyper) -> Result<f64> {
        check_intrinsic(h)?;
        if data.is_empty() {
            return Err(Error::input(
                "log marginal likelihood needs at least one observation",
            ));
        }
        data.check_range(self.n())?;
        let a = self.factor(h.t)?.b.select_columns(data.indices());
        let y = DVector::from_column_slice(data.y());
        let d = data.len() as f64;
        if h.noise == 0.0 {
            let c = a.transpose() * &a * h.sigma_h2;
            let chol = Cholesky::new(c)
                .ok_or_else(|| Error::Conditioning("noise-free Q_DD is singular".into()))?;
            let alpha = chol.solve(&y);
            let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            return Ok(-0.5 * (y.dot(&alpha) + logdet + d * LN_2PI));
        }
        let m = a.nrows();
        let mut mm = &a * a.transpose() * h.sigma_h2;
        for i in 0..m {
            mm[(i, i)] += h.noise;
        }
        let chol = Cholesky::new(mm)
            .ok_or_else(|| Error::Conditioning("Woodbury system is singular".into()))?;
        let ay = &a * &y;
        let quad = (y.dot(&y) - h.sigma_h2 * ay.dot(&chol.solve(&ay))) / h.noise;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
            + (d - m as f64) * h.noise.ln();
        Ok(-0.5 * (quad + logdet + d * LN_2PI))
    }

    /// Evaluates the log marginal likelihood for every `(σ_h², σ²_noise)` pair
    /// at one diffusion time, from a single eigendecomposition of `A Aᵀ`.
    /// Returns `lml[noise][magnitude]`.
    fn lml_sweep(
        &self,
        k: usize,
        data: &TrainingSet,
        magnitudes: &[f64],
        noises: &[f64],
    ) -> Option<Vec<Vec<f64>>> {
        let f = self.factors[k].as_ref().ok()?;
        let a = f.b.select_columns(data.indices());
        let y = DVector::from_column_slice(data.y());
        let eig = SymmetricEigen::new(&a * a.transpose());
        let w = eig.eigenvectors.transpose() * (&a * &y);
        let lambdas: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();
        let yy = y.dot(&y);
        let d = data.len() as f64;
        let m = lambdas.len() as f64;
        Some(
            noises
                .iter()
                .map(|&noise| {
                    magnitudes
                        .iter()
                        .map(|&s| {
                            let mut corr = 0.0;
                            let mut logdet = (d - m) * noise.ln();
                            for (l, wk) in lambdas.iter().zip(w.iter()) {
                                let den = s * l + noise;
                                corr += wk * wk / den;
                                logdet += den.ln();
                            }
                            let quad = (yy - s * corr) / noise;
                            -0.5 * (quad + logdet + d * LN_2PI)
                        })
                        .collect()
                })
                .collect(),
        )
    }

    /// Grid search for `(t, σ_h², σ²_noise)` maximising the approximate
    /// marginal likelihood of the centred observations. Ties go to the smaller
    /// `t`, then the smaller noise.
    pub fn fit(&self, data: &TrainingSet, grid: &HyperGrid) -> Result<IntrinsicHyper> {
        if data.len() < 2 {
            return Err(Error::input("fitting needs at least two observations"));
        }
        grid.validate()?;
        data.check_range(self.n())?;
        let centered = data.centered();
        let scale = HyperGrid::data_scale(data);
        let magnitudes = grid.magnitudes(scale);
        let noises = grid.noises(scale);
        let mut best: Option<(f64, IntrinsicHyper)> = None;
        for (k, &t) in self.kernel.t_grid().iter().enumerate() {
            let Some(table) = self.lml_sweep(k, &centered, &magnitudes, &noises) else {
                continue;
            };
            for (row, &noise) in table.iter().zip(&noises) {
                for (&lml, &sigma_h2) in row.iter().zip(&magnitudes) {
                    if lml.is_finite() && best.is_none_or(|(b, _)| lml > b) {
                        best = Some((lml, IntrinsicHyper { t, sigma_h2, noise }));
                    }
                }
            }
        }
        best.map(|(_, h)| h)
            .ok_or_else(|| Error::Fit("no hyperparameter candidate could be evaluated".into()))
    }

    /// Predictive mean and variance at every grid point (zero prior mean).
    ///
    /// With noise, `mean = σ_h² Bᵀ M⁻¹ A y` and `var_r = σ_h² σ²_noise b_rᵀ M⁻¹ b_r`.
    /// Without noise the `|D| × |D|` matrix `σ_h² AᵀA` is factored instead.
    pub fn predict(&self, data: &TrainingSet, h: &IntrinsicHyper) -> Result<Posterior> {
        check_intrinsic(h)?;
        if data.is_empty() {
            return Err(Error::input("prediction needs at least one observation"));
        }
        data.check_range(self.n())?;
        let b = &self.factor(h.t)?.b;
        let a = b.select_columns(data.indices());
        let y = DVector::from_column_slice(data.y());
        let s = h.sigma_h2;
        if h.noise == 0.0 {
            let chol = Cholesky::new(a.transpose() * &a * s)
                .ok_or_else(|| Error::Conditioning("noise-free Q_DD is singular".into()))?;
            let mean = (b.transpose() * (&a * chol.solve(&y))) * s;
            let p = a.transpose() * b * s;
            let v = chol
                .l()
                .solve_lower_triangular(&p)
                .ok_or_else(|| Error::Conditioning("singular factor".into()))?;
            let var = (0..self.n())
                .map(|r| s * b.column(r).norm_squared() - v.column(r).norm_squared())
                .collect();
            return Ok(Posterior::from_raw(mean.iter().copied().collect(), var));
        }
        let m = a.nrows();
        let mut mm = &a * a.transpose() * s;
        for i in 0..m {
            mm[(i, i)] += h.noise;
        }
        let chol = Cholesky::new(mm)
            .ok_or_else(|| Error::Conditioning("Woodbury system is singular".into()))?;
        let mean = b.transpose() * chol.solve(&(&a * &y)) * s;
        let v = chol
            .l()
            .solve_lower_triangular(b)
            .ok_or_else(|| Error::Conditioning("singular factor".into()))?;
        let var = (0..self.n())
            .map(|r| s * h.noise * v.column(r).norm_squared())
            .collect();
        Ok(Posterior::from_raw(mean.iter().copied().collect(), var))
    }

    /// [`predict`](Self::predict) on centred observations, with the sample mean
    /// added back to the predictive mean.
    pub fn predict_centered(&self, data: &TrainingSet, h: &IntrinsicHyper) -> Result<Posterior> {
        Ok(self.predict(&data.centered(), h)?.shifted(data.mean()))
    }
}

fn check_intrinsic(h: &IntrinsicHyper) -> Result<()> {
    if !(h.sigma_h2.is_finite() && h.sigma_h2 > 0.0) {
        return Err(Error::input(format!(
            "σ_h² must be positive, got {}",
            h.sigma_h2
        )));
    }
    if !(h.noise.is_finite() && h.noise >= 0.0) {
        return Err(Error::input(format!(
            "noise variance must be non-negative, got {}",
            h.noise
        )));
    }
    Ok(())
}
