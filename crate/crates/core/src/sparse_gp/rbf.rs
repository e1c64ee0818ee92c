//! Exact GP with a squared-exponential kernel on Euclidean coordinates.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::{HyperGrid, Posterior, RbfHyper, TrainingSet, LN_2PI};
use crate::error::{Error, Result};

/// Exact RBF-kernel GP over a fixed set of candidate points.
#[derive(Clone, Debug)]
pub struct RbfGp {
    coords: Vec<Vec<f64>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl RbfGp {
    pub fn new(coords: Vec<Vec<f64>>) -> Result<Self> {
        let dim = coords.first().map_or(0, Vec::len);
        if coords.is_empty() || dim == 0 || coords.iter().any(|c| c.len() != dim) {
            return Err(Error::input(
                "RBF coordinates must be non-empty and share one dimension",
            ));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::input("RBF coordinates must be finite"));
        }
        Ok(Self { coords })
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[Vec<f64>] {
        &self.coords
    }

    /// Unit-magnitude kernel block between index sets.
    fn block(&self, rows: &[usize], cols: &[usize], l: f64) -> DMatrix<f64> {
        let inv = 0.5 / (l * l);
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
            (-sq_dist(&self.coords[rows[i]], &self.coords[cols[j]]) * inv).exp()
        })
    }

    fn factor(&self, data: &TrainingSet, h: &RbfHyper) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        check(h)?;
        if data.is_empty() {
            return Err(Error::input("the RBF GP needs at least one observation"));
        }
        if let Some(&i) = data.indices().iter().find(|&&i| i >= self.n()) {
            return Err(Error::input(format!(
                "training index {i} outside a grid of {} points",
                self.n()
            )));
        }
        let mut k = self.block(data.indices(), data.indices(), h.length_scale) * h.sigma_r2;
        for i in 0..data.len() {
            k[(i, i)] += h.noise;
        }
        Cholesky::new(k).ok_or_else(|| Error::Conditioning("K + σ²_noise I is singular".into()))
    }

    pub fn log_marginal_likelihood(&self, data: &TrainingSet, h: &RbfHyper) -> Result<f64> {
        let chol = self.factor(data, h)?;
        let y = DVector::from_column_slice(data.y());
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(-0.5 * (y.dot(&chol.solve(&y)) + logdet + data.len() as f64 * LN_2PI))
    }

    pub fn predict(&self, data: &TrainingSet, h: &RbfHyper) -> Result<Posterior> {
        let chol = self.factor(data, h)?;
        let y = DVector::from_column_slice(data.y());
        let all: Vec<usize> = (0..self.n()).collect();
        let k_dr = self.block(data.indices(), &all, h.length_scale) * h.sigma_r2;
        let mean = k_dr.transpose() * chol.solve(&y);
        let v = chol
            .l()
            .solve_lower_triangular(&k_dr)
            .ok_or_else(|| Error::Conditioning("singular factor".into()))?;
        let var = (0..self.n())
            .map(|r| h.sigma_r2 - v.column(r).norm_squared())
            .collect();
        Ok(Posterior::from_raw(mean.iter().copied().collect(), var))
    }

    pub fn predict_centered(&self, data: &TrainingSet, h: &RbfHyper) -> Result<Posterior> {
        Ok(self.predict(&data.centered(), h)?.shifted(data.mean()))
    }

    /// Grid search over `length_scales × magnitudes × noises` on centred data,
    /// one eigendecomposition per length-scale. Ties go to the smaller
    /// length-scale, then the smaller noise.
    pub fn fit(
        &self,
        data: &TrainingSet,
        length_scales: &[f64],
        grid: &HyperGrid,
    ) -> Result<RbfHyper> {
        if data.len() < 2 {
            return Err(Error::input("fitting needs at least two observations"));
        }
        grid.validate()?;
        if length_scales.is_empty() || length_scales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::input("length-scales must be positive and finite"));
        }
        if let Some(&i) = data.indices().iter().find(|&&i| i >= self.n()) {
            return Err(Error::input(format!(
                "training index {i} outside a grid of {} points",
                self.n()
            )));
        }
        let centered = data.centered();
        let scale = HyperGrid::data_scale(data);
        let magnitudes = grid.magnitudes(scale);
        let noises = grid.noises(scale);
        let y = DVector::from_column_slice(centered.y());
        let d = data.len() as f64;
        let mut best: Option<(f64, RbfHyper)> = None;
        for &l in length_scales {
            let eig = SymmetricEigen::new(self.block(data.indices(), data.indices(), l));
            let w = eig.eigenvectors.transpose() * &y;
            let lambdas: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
            for &noise in &noises {
                for &s in &magnitudes {
                    let mut quad = 0.0;
                    let mut logdet = 0.0;
                    for (lam, wk) in lambdas.iter().zip(w.iter()) {
                        let den = s * lam + noise;
                        quad += wk * wk / den;
                        logdet += den.ln();
                    }
                    let lml = -0.5 * (quad + logdet + d * LN_2PI);
                    if lml.is_finite() && best.is_none_or(|(b, _)| lml > b) {
                        best = Some((
                            lml,
                            RbfHyper {
                                length_scale: l,
                                sigma_r2: s,
                                noise,
                            },
                        ));
                    }
                }
            }
        }
        best.map(|(_, h)| h)
            .ok_or_else(|| Error::Fit("no RBF hyperparameter candidate could be evaluated".into()))
    }
}

/// Posterior of an exact RBF GP at `coords`, conditioned on `data`.
pub fn predict_rbf(coords: &[Vec<f64>], data: &TrainingSet, h: &RbfHyper) -> Result<Posterior> {
    RbfGp::new(coords.to_vec())?.predict(data, h)
}

fn check(h: &RbfHyper) -> Result<()> {
    if !(h.length_scale.is_finite() && h.length_scale > 0.0) {
        return Err(Error::input(format!(
            "length-scale must be positive, got {}",
            h.length_scale
        )));
    }
    if !(h.sigma_r2.is_finite() && h.sigma_r2 > 0.0) {
        return Err(Error::input(format!(
            "σ_r² must be positive, got {}",
            h.sigma_r2
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

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, step: f64) -> RbfGp {
        RbfGp::new((0..n).map(|i| vec![i as f64 * step]).collect()).unwrap()
    }

    #[test]
    fn single_point_interpolates() {
        let gp = line(3, 1.0);
        let d = TrainingSet::new(vec![1], vec![2.5]).unwrap();
        let h = RbfHyper {
            length_scale: 1.0,
            sigma_r2: 1.0,
            noise: 0.0,
        };
        let p = gp.predict(&d, &h).unwrap();
        assert!((p.mean[1] - 2.5).abs() < 1e-12);
        assert!(p.variance[1] < 1e-12);
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let gp = RbfGp::new(vec![vec![0.0, 0.0], vec![100.0, 0.0]]).unwrap();
        let d = TrainingSet::new(vec![0], vec![3.0]).unwrap();
        let h = RbfHyper {
            length_scale: 1.0,
            sigma_r2: 2.0,
            noise: 1e-3,
        };
        let p = gp.predict(&d, &h).unwrap();
        assert!(p.mean[1].abs() < 1e-12);
        assert!((p.variance[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn close_points_across_a_gap_are_highly_correlated() {
        let gp = RbfGp::new(vec![vec![0.0, -0.25], vec![0.0, 0.25]]).unwrap();
        let h = RbfHyper {
            length_scale: 2.0,
            sigma_r2: 1.0,
            noise: 0.0,
        };
        let k = gp.block(&[0], &[1], h.length_scale)[(0, 0)];
        assert!(k > 0.9, "{k}");
        let d = TrainingSet::new(vec![0], vec![1.0]).unwrap();
        assert!(gp.predict(&d, &h).unwrap().mean[1] > 0.9);
    }

    #[test]
    fn lml_matches_dense_formula() {
        let gp = line(5, 0.7);
        let d = TrainingSet::new(vec![0, 2, 4], vec![0.3, -1.0, 0.5]).unwrap();
        let h = RbfHyper {
            length_scale: 0.9,
            sigma_r2: 1.3,
            noise: 0.1,
        };
        let k = DMatrix::from_fn(3, 3, |i, j| {
            let r = (d.indices()[i] as f64 - d.indices()[j] as f64) * 0.7;
            1.3 * (-r * r / (2.0 * 0.81)).exp() + if i == j { 0.1 } else { 0.0 }
        });
        let y = DVector::from_column_slice(d.y());
        let inv = k.clone().try_inverse().unwrap();
        let want = -0.5 * ((y.transpose() * inv * &y)[0] + k.determinant().ln() + 3.0 * LN_2PI);
        assert!((gp.log_marginal_likelihood(&d, &h).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn fit_prefers_long_length_scale_for_smooth_data() {
        let gp = line(30, 0.1);
        let idx: Vec<usize> = (0..30).step_by(3).collect();
        let y: Vec<f64> = idx.iter().map(|&i| (i as f64 * 0.1).sin()).collect();
        let d = TrainingSet::new(idx, y).unwrap();
        let h = gp.fit(&d, &[0.01, 1.0], &HyperGrid::default()).unwrap();
        assert_eq!(h.length_scale, 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(RbfGp::new(vec![]).is_err());
        assert!(RbfGp::new(vec![vec![0.0], vec![0.0, 1.0]]).is_err());
        let gp = line(3, 1.0);
        let d = TrainingSet::new(vec![0], vec![1.0]).unwrap();
        assert!(gp.fit(&d, &[1.0], &HyperGrid::default()).is_err());
        let bad = RbfHyper {
            length_scale: 0.0,
            sigma_r2: 1.0,
            noise: 0.0,
        };
        assert!(matches!(gp.predict(&d, &bad), Err(Error::Input(_))));
    }
}
