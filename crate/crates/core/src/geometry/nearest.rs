use std::f64::consts::TAU;

use super::{wrap_angle, IntrinsicPoint, ManifoldSpec};

/// Bucket index over grid points for nearest-neighbour queries in chart
/// distance. Periodic coordinates wrap; the bitten-torus `φ` does not, so a
/// query never matches across the bite.
#[derive(Clone, Debug)]
pub struct NearestGrid {
    points: Vec<[f64; 2]>,
    periodic: [bool; 2],
    lo: [f64; 2],
    width: [f64; 2],
    counts: [usize; 2],
    starts: Vec<u32>,
    items: Vec<u32>,
    spec: ManifoldSpec,
}

impl NearestGrid {
    pub fn new(spec: &ManifoldSpec, grid: &[IntrinsicPoint]) -> Self {
        assert!(
            !grid.is_empty(),
            "nearest-neighbour index over an empty grid"
        );
        let periodic = spec.periodic();
        let points: Vec<[f64; 2]> = grid.iter().map(|&x| spec.reduce(x).0).collect();
        let mut lo = [0.0; 2];
        let mut span = [TAU; 2];
        for k in 0..2 {
            if !periodic[k] {
                let min = points.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
                let max = points
                    .iter()
                    .map(|p| p[k])
                    .fold(f64::NEG_INFINITY, f64::max);
                lo[k] = min;
                span[k] = (max - min).max(1e-9);
            }
        }
        let target = ((span[0] * span[1]) / (points.len() as f64 / 2.0).max(1.0)).sqrt();
        let mut counts = [1usize; 2];
        let mut width = span;
        for k in 0..2 {
            let n = if periodic[k] {
                (span[k] / target).round()
            } else {
                (span[k] / target).ceil()
            };
            counts[k] = (n as usize).clamp(1, 4096);
            width[k] = span[k] / counts[k] as f64;
        }
        let mut index = Self {
            points,
            periodic,
            lo,
            width,
            counts,
            starts: Vec::new(),
            items: Vec::new(),
            spec: spec.clone(),
        };
        let n_buckets = counts[0] * counts[1];
        let keys: Vec<usize> = index
            .points
            .iter()
            .map(|&p| {
                let c = index.bucket_of(p);
                c[1] * counts[0] + c[0]
            })
            .collect();
        let mut starts = vec![0u32; n_buckets + 1];
        for &k in &keys {
            starts[k + 1] += 1;
        }
        for b in 0..n_buckets {
            starts[b + 1] += starts[b];
        }
        let mut fill = starts.clone();
        let mut items = vec![0u32; keys.len()];
        for (i, &k) in keys.iter().enumerate() {
            items[fill[k] as usize] = i as u32;
            fill[k] += 1;
        }
        index.starts = starts;
        index.items = items;
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn bucket_of(&self, p: [f64; 2]) -> [usize; 2] {
        let mut c = [0usize; 2];
        for k in 0..2 {
            let f = ((p[k] - self.lo[k]) / self.width[k]).floor();
            c[k] = if self.periodic[k] {
                (f as i64).rem_euclid(self.counts[k] as i64) as usize
            } else {
                (f.max(0.0) as usize).min(self.counts[k] - 1)
            };
        }
        c
    }

    fn dist_sq(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let mut s = 0.0;
        for k in 0..2 {
            let mut d = b[k] - a[k];
            if self.periodic[k] {
                d = wrap_angle(d);
            }
            s += d * d;
        }
        s
    }

    /// Offsets along one axis still worth visiting, as an inclusive range.
    fn axis_range(&self, k: usize, centre: usize) -> (i64, i64) {
        let n = self.counts[k] as i64;
        if self.periodic[k] {
            (-((n - 1) / 2), n / 2)
        } else {
            (-(centre as i64), n - 1 - centre as i64)
        }
    }

    /// Index of the nearest grid point and its chart distance.
    pub fn nearest(&self, q: IntrinsicPoint) -> (usize, f64) {
        self.search(q, usize::MAX)
    }

    /// Nearest grid point other than `skip`.
    pub fn nearest_excluding(&self, q: IntrinsicPoint, skip: usize) -> (usize, f64) {
        self.search(q, skip)
    }

    fn search(&self, q: IntrinsicPoint, skip: usize) -> (usize, f64) {
        let q = self.spec.reduce(q).0;
        let c = self.bucket_of(q);
        let ranges = [self.axis_range(0, c[0]), self.axis_range(1, c[1])];
        let max_ring = ranges.iter().map(|&(a, b)| (-a).max(b)).max().unwrap_or(0);
        let w_min = self.width[0].min(self.width[1]);
        let mut best = (usize::MAX, f64::INFINITY);
        for r in 0..=max_ring {
            for di in ranges[0].0.max(-r)..=ranges[0].1.min(r) {
                for dj in ranges[1].0.max(-r)..=ranges[1].1.min(r) {
                    if di.abs().max(dj.abs()) != r {
                        continue;
                    }
                    let bi = (c[0] as i64 + di).rem_euclid(self.counts[0] as i64) as usize;
                    let bj = (c[1] as i64 + dj).rem_euclid(self.counts[1] as i64) as usize;
                    let b = bj * self.counts[0] + bi;
                    for &item in &self.items[self.starts[b] as usize..self.starts[b + 1] as usize] {
                        let i = item as usize;
                        if i == skip {
                            continue;
                        }
                        let d = self.dist_sq(q, self.points[i]);
                        if d < best.1 || (d == best.1 && i < best.0) {
                            best = (i, d);
                        }
                    }
                }
            }
            let reach = r as f64 * w_min;
            if best.0 != usize::MAX && best.1 < reach * reach {
                break;
            }
        }
        (best.0, best.1.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(spec: &ManifoldSpec, grid: &[IntrinsicPoint], q: IntrinsicPoint) -> (usize, f64) {
        grid.iter()
            .enumerate()
            .map(|(i, &g)| (i, spec.chart_distance(spec.reduce(q), spec.reduce(g))))
            .fold(
                (usize::MAX, f64::INFINITY),
                |b, c| if c.1 < b.1 { c } else { b },
            )
    }

    #[test]
    fn matches_brute_force_on_torus_and_plane() {
        let torus = ManifoldSpec::torus(2.0, 1.0, (5.0, 5.6)).unwrap();
        let ManifoldSpec::BittenTorus(t) = &torus else {
            unreachable!()
        };
        let grid: Vec<_> = (0..12)
            .flat_map(|i| {
                (0..17).map(move |j| {
                    IntrinsicPoint::new(
                        i as f64 * TAU / 12.0,
                        t.phi_start() + (j as f64 + 0.5) * t.phi_span() / 17.0,
                    )
                })
            })
            .collect();
        let plane = ManifoldSpec::unbounded_plane();
        let pgrid: Vec<_> = (0..40)
            .map(|i| IntrinsicPoint::new((i % 7) as f64 * 0.3, (i / 7) as f64 * 0.3))
            .collect();
        let ti = NearestGrid::new(&torus, &grid);
        let pi = NearestGrid::new(&plane, &pgrid);
        let mut s = 12345u64;
        for _ in 0..5000 {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let a = (s >> 11) as f64 / (1u64 << 53) as f64;
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let b = (s >> 11) as f64 / (1u64 << 53) as f64;
            let q = IntrinsicPoint::new(a * 20.0 - 10.0, t.phi_start() + b * t.phi_span());
            assert_eq!(ti.nearest(q).0, brute(&torus, &grid, q).0, "{q:?}");
            let q = IntrinsicPoint::new(a * 6.0 - 2.0, b * 6.0 - 2.0);
            assert_eq!(pi.nearest(q).0, brute(&plane, &pgrid, q).0, "{q:?}");
        }
    }

    #[test]
    fn never_matches_across_the_bite() {
        let torus = ManifoldSpec::torus(2.0, 1.0, (3.0, 3.3)).unwrap();
        let ManifoldSpec::BittenTorus(t) = &torus else {
            unreachable!()
        };
        let lo = IntrinsicPoint::new(0.0, t.phi_start() + 0.05);
        let hi = IntrinsicPoint::new(0.0, t.phi_start() + t.phi_span() - 1.0);
        let index = NearestGrid::new(&torus, &[lo, hi]);
        // Just below the bite: the wrapped distance to `lo` would be ~0.35, but φ does not wrap.
        let q = IntrinsicPoint::new(0.0, t.phi_start() + t.phi_span() - 0.01);
        assert_eq!(index.nearest(q).0, 1);
    }
}
