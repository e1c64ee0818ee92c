//! Domains and manifolds described by a single global chart.
//!
//! Two kinds are supported: a planar domain bounded by a polygon (chart and
//! embedding are both the identity), and a torus with a removed azimuthal
//! sector. Everything here is a pure function of immutable inputs.

mod nearest;
mod polygon;
mod torus;

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};

pub use nearest::NearestGrid;
pub(crate) use polygon::csv_error;
pub use polygon::{signed_area, Polygon, BOUNDARY_TOLERANCE};
pub use torus::BittenTorus;

/// Determinants at or below this are treated as a degenerate metric.
pub const SINGULAR_DET: f64 = 1e-14;

/// Relative spread of nearest-neighbour spacings tolerated by [`cell_volumes`].
pub const GRID_SPACING_TOLERANCE: f64 = 0.05;

/// Local chart coordinates; `(x, y)` for planar domains, `(θ, φ)` for the torus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntrinsicPoint(pub [f64; 2]);

impl IntrinsicPoint {
    pub fn new(a: f64, b: f64) -> Self {
        Self([a, b])
    }

    pub fn coords(&self) -> [f64; 2] {
        self.0
    }

    fn is_finite(&self) -> bool {
        self.0[0].is_finite() && self.0[1].is_finite()
    }
}

/// A point in the ambient Euclidean space (`ℝ²` or `ℝ³`).
#[derive(Clone, Debug, PartialEq)]
pub struct AmbientPoint(pub Vec<f64>);

impl AmbientPoint {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn distance(&self, other: &AmbientPoint) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricTensor {
    pub g: Matrix2<f64>,
    pub det_g: f64,
    pub inv_g: Matrix2<f64>,
}

/// Drift (per unit diffusion time) and diffusion matrix of Brownian motion in chart coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdeCoefficients {
    pub drift: Vector2<f64>,
    pub diffusion: Matrix2<f64>,
}

#[derive(Clone, Debug)]
pub enum ManifoldSpec {
    /// A planar domain. `boundary: None` is the unbounded plane.
    ConstrainedPlane {
        boundary: Option<Arc<Polygon>>,
    },
    BittenTorus(BittenTorus),
}

impl ManifoldSpec {
    pub fn plane(boundary: Polygon) -> Self {
        ManifoldSpec::ConstrainedPlane {
            boundary: Some(Arc::new(boundary)),
        }
    }

    pub fn unbounded_plane() -> Self {
        ManifoldSpec::ConstrainedPlane { boundary: None }
    }

    pub fn torus(major: f64, minor: f64, bite: (f64, f64)) -> Result<Self> {
        Ok(ManifoldSpec::BittenTorus(BittenTorus::new(
            major, minor, bite,
        )?))
    }

    pub fn intrinsic_dim(&self) -> usize {
        2
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            ManifoldSpec::ConstrainedPlane { .. } => 2,
            ManifoldSpec::BittenTorus(_) => 3,
        }
    }

    /// Which chart coordinates wrap around with period 2π.
    pub fn periodic(&self) -> [bool; 2] {
        match self {
            ManifoldSpec::ConstrainedPlane { .. } => [false, false],
            ManifoldSpec::BittenTorus(t) => [true, t.phi_is_periodic()],
        }
    }

    /// Reduces angular coordinates into the declared ranges; identity on the plane.
    pub fn reduce(&self, x: IntrinsicPoint) -> IntrinsicPoint {
        match self {
            ManifoldSpec::ConstrainedPlane { .. } => x,
            ManifoldSpec::BittenTorus(t) => {
                IntrinsicPoint([x.0[0].rem_euclid(TAU), t.reduce_phi(x.0[1])])
            }
        }
    }

    /// Chart displacement `b - a`, wrapped to `(-π, π]` along periodic coordinates.
    pub fn chart_delta(&self, a: IntrinsicPoint, b: IntrinsicPoint) -> [f64; 2] {
        let periodic = self.periodic();
        let mut d = [b.0[0] - a.0[0], b.0[1] - a.0[1]];
        for k in 0..2 {
            if periodic[k] {
                d[k] = wrap_angle(d[k]);
            }
        }
        d
    }

    pub fn chart_distance(&self, a: IntrinsicPoint, b: IntrinsicPoint) -> f64 {
        let d = self.chart_delta(a, b);
        d[0].hypot(d[1])
    }

    fn check_chart(&self, x: IntrinsicPoint) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::Domain {
                coords: x.0.to_vec(),
                reason: "non-finite coordinate".into(),
            });
        }
        if let ManifoldSpec::BittenTorus(t) = self {
            if !t.phi_is_periodic() {
                let offset = t.reduce_phi(x.0[1]) - t.phi_start();
                if offset > t.phi_span() + BOUNDARY_TOLERANCE && offset < TAU - BOUNDARY_TOLERANCE {
                    return Err(Error::Domain {
                        coords: x.0.to_vec(),
                        reason: "φ lies inside the removed sector".into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Chart extent as `(lower, upper)` corners; `None` for the unbounded plane.
    pub fn chart_bounds(&self) -> Option<([f64; 2], [f64; 2])> {
        match self {
            ManifoldSpec::ConstrainedPlane { boundary } => {
                boundary.as_ref().map(|p| p.bounding_box())
            }
            ManifoldSpec::BittenTorus(t) => {
                Some(([0.0, t.phi_start()], [TAU, t.phi_start() + t.phi_span()]))
            }
        }
    }

    /// Diagonal of the chart extent, the length scale used for default time grids.
    pub fn chart_diameter(&self) -> Option<f64> {
        self.chart_bounds()
            .map(|(lo, hi)| (hi[0] - lo[0]).hypot(hi[1] - lo[1]))
    }

    /// Admits a single simulation step. On the torus the bite is a wall: a step
    /// is rejected when its unreduced `φ` leaves the admissible range, even if
    /// the reduced angle would land on the far side of the bite.
    pub fn accept_step(&self, proposal: IntrinsicPoint) -> Option<IntrinsicPoint> {
        match self {
            ManifoldSpec::ConstrainedPlane { boundary } => match boundary {
                Some(p) if !p.contains(proposal.0) => None,
                _ => Some(proposal),
            },
            ManifoldSpec::BittenTorus(t) => {
                let phi = proposal.0[1];
                if !t.phi_is_periodic() {
                    let lo = t.phi_start() - BOUNDARY_TOLERANCE;
                    let hi = t.phi_start() + t.phi_span() + BOUNDARY_TOLERANCE;
                    if !(lo..=hi).contains(&phi) {
                        return None;
                    }
                }
                Some(self.reduce(proposal))
            }
        }
    }
}

/// Wraps an angle difference to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

pub fn embed(spec: &ManifoldSpec, x: IntrinsicPoint) -> Result<AmbientPoint> {
    spec.check_chart(x)?;
    Ok(match spec {
        ManifoldSpec::ConstrainedPlane { .. } => AmbientPoint(x.0.to_vec()),
        ManifoldSpec::BittenTorus(t) => AmbientPoint(t.embed(x.0[0], x.0[1]).to_vec()),
    })
}

fn metric_parts(spec: &ManifoldSpec, x: IntrinsicPoint) -> (Matrix2<f64>, [Matrix2<f64>; 2]) {
    match spec {
        ManifoldSpec::ConstrainedPlane { .. } => (Matrix2::identity(), [Matrix2::zeros(); 2]),
        ManifoldSpec::BittenTorus(t) => t.metric_with_derivatives(x.0[0]),
    }
}

fn finish_metric(x: IntrinsicPoint, g: Matrix2<f64>) -> Result<MetricTensor> {
    let det_g = g.determinant();
    if !(det_g > SINGULAR_DET) {
        return Err(Error::Singularity {
            coords: x.0.to_vec(),
            det: det_g,
        });
    }
    let inv_g = Matrix2::new(g[(1, 1)], -g[(0, 1)], -g[(1, 0)], g[(0, 0)]) / det_g;
    Ok(MetricTensor { g, det_g, inv_g })
}

pub fn metric_tensor(spec: &ManifoldSpec, x: IntrinsicPoint) -> Result<MetricTensor> {
    spec.check_chart(x)?;
    finish_metric(x, metric_parts(spec, x).0)
}

/// Symmetric square root of a symmetric positive definite 2×2 matrix.
pub fn sqrt_spd2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let s = m.determinant().max(0.0).sqrt();
    let t = (m.trace() + 2.0 * s).sqrt();
    (m + Matrix2::identity() * s) / t
}

/// Brownian-motion SDE coefficients from the metric:
/// `drift_i = ½ G^{-1/2} Σ_j ∂_j (g^{ij} G^{1/2})`, expanded as
/// `½ Σ_j (∂_j g⁻¹)_{ij} + ¼ Σ_j (g⁻¹)_{ij} tr(g⁻¹ ∂_j g)`, and
/// `diffusion = (g⁻¹)^{1/2}`.
pub fn sde_coefficients(spec: &ManifoldSpec, x: IntrinsicPoint) -> Result<SdeCoefficients> {
    spec.check_chart(x)?;
    if let ManifoldSpec::ConstrainedPlane { .. } = spec {
        return Ok(SdeCoefficients {
            drift: Vector2::zeros(),
            diffusion: Matrix2::identity(),
        });
    }
    let (g, dg) = metric_parts(spec, x);
    let m = finish_metric(x, g)?;
    let mut drift = Vector2::zeros();
    for (j, dg_j) in dg.iter().enumerate() {
        let d_inv = -(m.inv_g * dg_j * m.inv_g);
        let tr = (m.inv_g * dg_j).trace();
        for i in 0..2 {
            drift[i] += 0.5 * d_inv[(i, j)] + 0.25 * m.inv_g[(i, j)] * tr;
        }
    }
    Ok(SdeCoefficients {
        drift,
        diffusion: sqrt_spd2(&m.inv_g),
    })
}

/// Interior membership: inside the outer ring and outside every hole for
/// planar domains, outside the removed sector for the torus. Points within
/// [`BOUNDARY_TOLERANCE`] of the boundary count as interior.
pub fn contains(spec: &ManifoldSpec, x: IntrinsicPoint) -> bool {
    if !x.is_finite() {
        return false;
    }
    match spec {
        ManifoldSpec::ConstrainedPlane { boundary } => {
            boundary.as_ref().is_none_or(|p| p.contains(x.0))
        }
        ManifoldSpec::BittenTorus(_) => spec.check_chart(x).is_ok(),
    }
}

/// Riemannian volume of each grid point's cell by the midpoint rule,
/// `a · sqrt(det g(x_i))`. The chart-cell area `a` defaults to the squared
/// minimal nearest-neighbour chart distance.
pub fn cell_volumes(
    spec: &ManifoldSpec,
    grid: &[IntrinsicPoint],
    cell_area: Option<f64>,
) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Grid("empty grid".into()));
    }
    if let Some(a) = cell_area {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::Grid(format!("cell area must be positive, got {a}")));
        }
    }
    let area = if grid.len() >= 2 {
        let nn = nearest_neighbour_distances(spec, grid);
        let lo = nn.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = nn.iter().copied().fold(0.0, f64::max);
        if !(lo > 0.0) {
            return Err(Error::Grid("duplicate grid points".into()));
        }
        if hi / lo - 1.0 > GRID_SPACING_TOLERANCE {
            return Err(Error::Grid(format!(
                "grid spacing is not uniform: nearest-neighbour distances range over [{lo}, {hi}]"
            )));
        }
        cell_area.unwrap_or(lo * lo)
    } else {
        cell_area
            .ok_or_else(|| Error::Grid("a single-point grid needs an explicit cell area".into()))?
    };
    grid.iter()
        .map(|&x| Ok(area * metric_tensor(spec, x)?.det_g.sqrt()))
        .collect()
}

fn nearest_neighbour_distances(spec: &ManifoldSpec, grid: &[IntrinsicPoint]) -> Vec<f64> {
    let index = NearestGrid::new(spec, grid);
    grid.iter()
        .enumerate()
        .map(|(i, &x)| index.nearest_excluding(x, i).1)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn torus() -> ManifoldSpec {
        ManifoldSpec::torus(2.0, 1.0, (3.0, 3.3)).unwrap()
    }

    fn ushape() -> ManifoldSpec {
        ManifoldSpec::plane(crate::bench::ushape_polygon())
    }

    fn assert_mat(a: &Matrix2<f64>, b: &Matrix2<f64>, tol: f64) {
        assert!((a - b).abs().max() <= tol, "{a} vs {b}");
    }

    #[test]
    fn embed_examples() {
        let t = ManifoldSpec::torus(2.0, 1.0, (0.0, 0.0)).unwrap();
        let p = embed(&t, IntrinsicPoint::new(0.0, 0.0)).unwrap();
        assert_eq!(p.0, vec![3.0, 0.0, 0.0]);
        let p = embed(&t, IntrinsicPoint::new(FRAC_PI_2, 0.0)).unwrap();
        assert!(
            (p.0[0] - 2.0).abs() < 1e-15 && p.0[1].abs() < 1e-15 && (p.0[2] - 1.0).abs() < 1e-15
        );
        let p = embed(&ushape(), IntrinsicPoint::new(0.3, -1.2)).unwrap();
        assert_eq!(p.0, vec![0.3, -1.2]);
    }

    #[test]
    fn embed_rejects_points_outside_chart() {
        assert!(matches!(
            embed(&torus(), IntrinsicPoint::new(0.0, 3.1)),
            Err(Error::Domain { .. })
        ));
        assert!(matches!(
            embed(&ushape(), IntrinsicPoint::new(f64::NAN, 0.0)),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn metric_examples() {
        let m = metric_tensor(&torus(), IntrinsicPoint::new(0.0, 1.0)).unwrap();
        assert_mat(&m.g, &Matrix2::new(1.0, 0.0, 0.0, 9.0), 0.0);
        assert_eq!(m.det_g, 9.0);
        let m = metric_tensor(&torus(), IntrinsicPoint::new(FRAC_PI_2, 1.0)).unwrap();
        assert_mat(&m.g, &Matrix2::new(1.0, 0.0, 0.0, 4.0), 1e-15);
        let m = metric_tensor(&ushape(), IntrinsicPoint::new(0.3, -1.2)).unwrap();
        assert_eq!(m.g, Matrix2::identity());
        assert_eq!(m.inv_g, Matrix2::identity());
    }

    #[test]
    fn sde_examples() {
        let c = sde_coefficients(&ushape(), IntrinsicPoint::new(1.0, 1.0)).unwrap();
        assert_eq!(c.drift, Vector2::zeros());
        assert_eq!(c.diffusion, Matrix2::identity());

        let c = sde_coefficients(&torus(), IntrinsicPoint::new(0.0, 1.0)).unwrap();
        assert!(c.drift.abs().max() < 1e-15);
        assert_mat(&c.diffusion, &Matrix2::new(1.0, 0.0, 0.0, 1.0 / 3.0), 1e-15);

        let c = sde_coefficients(&torus(), IntrinsicPoint::new(FRAC_PI_2, 1.0)).unwrap();
        assert!((c.drift[0] + 0.25).abs() < 1e-15, "{}", c.drift[0]);
        assert_eq!(c.drift[1], 0.0);
    }

    /// Drift evaluated straight from `½ G^{-1/2} Σ_j ∂_j (g^{ij} G^{1/2})`,
    /// with the derivative taken by central differences of the metric.
    fn drift_by_finite_differences(spec: &ManifoldSpec, x: IntrinsicPoint) -> Vector2<f64> {
        let h = 1e-5;
        let field = |p: IntrinsicPoint| {
            let m = metric_tensor(spec, p).unwrap();
            m.inv_g * m.det_g.sqrt()
        };
        let det = metric_tensor(spec, x).unwrap().det_g;
        let mut drift = Vector2::zeros();
        for j in 0..2 {
            let mut plus = x;
            let mut minus = x;
            plus.0[j] += h;
            minus.0[j] -= h;
            let d = (field(plus) - field(minus)) / (2.0 * h);
            for i in 0..2 {
                drift[i] += 0.5 * d[(i, j)] / det.sqrt();
            }
        }
        drift
    }

    #[test]
    fn torus_drift_matches_finite_difference_oracle() {
        let spec = torus();
        for &theta in &[FRAC_PI_2, 0.4, 2.0, 4.5] {
            let x = IntrinsicPoint::new(theta, 1.0);
            let analytic = sde_coefficients(&spec, x).unwrap().drift;
            let fd = drift_by_finite_differences(&spec, x);
            assert!(
                (analytic - fd).abs().max() < 1e-8,
                "θ = {theta}: {analytic} vs {fd}"
            );
        }
    }

    #[test]
    fn contains_examples() {
        let u = ushape();
        assert!(contains(&u, IntrinsicPoint::new(1.5, -1.0)));
        assert!(!contains(&u, IntrinsicPoint::new(1.5, 0.0)));
        assert!(!contains(&torus(), IntrinsicPoint::new(0.0, 3.1)));
        assert!(contains(&torus(), IntrinsicPoint::new(0.0, 3.5)));
        assert!(contains(&torus(), IntrinsicPoint::new(-7.0, 3.0)));
        assert!(contains(
            &ManifoldSpec::unbounded_plane(),
            IntrinsicPoint::new(1e6, -1e6)
        ));
    }

    #[test]
    fn bite_is_a_wall_for_steps() {
        let spec = torus();
        let t = match &spec {
            ManifoldSpec::BittenTorus(t) => *t,
            _ => unreachable!(),
        };
        let start = t.phi_start();
        assert!(spec
            .accept_step(IntrinsicPoint::new(0.0, start + 0.01))
            .is_some());
        assert!(spec
            .accept_step(IntrinsicPoint::new(0.0, start - 0.01))
            .is_none());
        let end = start + t.phi_span();
        assert!(spec
            .accept_step(IntrinsicPoint::new(0.0, end + 0.01))
            .is_none());
        let stepped = spec
            .accept_step(IntrinsicPoint::new(-0.1, start + 1.0))
            .unwrap();
        assert!((stepped.0[0] - (TAU - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn cell_volume_examples() {
        let grid: Vec<_> = (0..5)
            .flat_map(|i| {
                (0..5)
                    .map(move |j| IntrinsicPoint::new(1.0 + 0.1 * i as f64, -1.2 + 0.1 * j as f64))
            })
            .collect();
        for v in cell_volumes(&ushape(), &grid, None).unwrap() {
            assert!((v - 0.01).abs() < 1e-12);
        }

        let spec = ManifoldSpec::torus(2.0, 1.0, (0.0, 0.0)).unwrap();
        let a = 0.25 * 0.25;
        let grid = [IntrinsicPoint::new(0.0, 1.0), IntrinsicPoint::new(PI, 1.0)];
        let v = cell_volumes(&spec, &grid, Some(a)).unwrap();
        assert!((v[0] - 3.0 * a).abs() < 1e-15);
        assert!((v[1] - a).abs() < 1e-15);
    }

    #[test]
    fn cell_volumes_rejects_irregular_grid() {
        let grid = [
            IntrinsicPoint::new(0.0, 0.0),
            IntrinsicPoint::new(0.1, 0.0),
            IntrinsicPoint::new(0.5, 0.0),
        ];
        assert!(matches!(
            cell_volumes(&ManifoldSpec::unbounded_plane(), &grid, None),
            Err(Error::Grid(_))
        ));
    }

    #[test]
    fn torus_metric_matches_differentiated_embedding() {
        let spec = ManifoldSpec::torus(2.0, 1.0, (0.0, 0.0)).unwrap();
        let h = 1e-5;
        for k in 0..50 {
            let x = IntrinsicPoint::new(0.13 * k as f64, 0.29 * k as f64);
            let mut jac = [[0.0; 3]; 2];
            for (j, col) in jac.iter_mut().enumerate() {
                let (mut p, mut m) = (x, x);
                p.0[j] += h;
                m.0[j] -= h;
                let (ep, em) = (embed(&spec, p).unwrap(), embed(&spec, m).unwrap());
                for (a, c) in col.iter_mut().enumerate() {
                    *c = (ep.0[a] - em.0[a]) / (2.0 * h);
                }
            }
            let g = metric_tensor(&spec, x).unwrap().g;
            for i in 0..2 {
                for j in 0..2 {
                    let fd: f64 = (0..3).map(|a| jac[i][a] * jac[j][a]).sum();
                    assert!((fd - g[(i, j)]).abs() < 1e-6, "g[{i}{j}] at {x:?}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn generic_drift_matches_closed_form(theta in -10.0f64..10.0, phi in 3.3f64..9.2) {
            let spec = torus();
            let ManifoldSpec::BittenTorus(t) = &spec else { unreachable!() };
            let c = sde_coefficients(&spec, IntrinsicPoint::new(theta, phi)).unwrap();
            let (drift, diffusion) = t.closed_form_sde(theta);
            prop_assert!((c.drift - drift).abs().max() <= 1e-10);
            prop_assert!((c.diffusion - diffusion).abs().max() <= 1e-10);
        }

        #[test]
        fn metric_inverse_is_consistent(theta in -10.0f64..10.0) {
            let m = metric_tensor(&torus(), IntrinsicPoint::new(theta, 4.0)).unwrap();
            prop_assert!((m.inv_g * m.g - Matrix2::identity()).abs().max() <= 1e-10);
            prop_assert!((m.g - m.g.transpose()).abs().max() <= 1e-12);
        }

        #[test]
        fn contains_is_stable_under_tiny_perturbation(x in -2.0f64..3.5, y in -2.0f64..2.0,
                                                      dx in -1e-9f64..1e-9, dy in -1e-9f64..1e-9) {
            let u = ushape();
            let ManifoldSpec::ConstrainedPlane { boundary: Some(poly) } = &u else { unreachable!() };
            prop_assume!(poly.boundary_distance([x, y]) >= 1e-6);
            prop_assert_eq!(
                contains(&u, IntrinsicPoint::new(x, y)),
                contains(&u, IntrinsicPoint::new(x + dx, y + dy))
            );
        }
    }
}
