//! Planar polygons with holes, used as the boundary of constrained planar domains.
//!
//! Membership queries sit in the Brownian-motion inner loop, so every polygon
//! carries a raster index: cells that no edge touches are classified once as
//! inside or outside, and only cells crossed by an edge fall back to the
//! exact crossing-number test.

use std::io::Read;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Points closer than this to an edge are classified as interior.
pub const BOUNDARY_TOLERANCE: f64 = 1e-12;

const RASTER_CELLS: usize = 256;
const RASTER_INFLATE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Segment {
    a: [f64; 2],
    b: [f64; 2],
}

impl Segment {
    fn distance_sq(&self, p: [f64; 2]) -> f64 {
        let (dx, dy) = (self.b[0] - self.a[0], self.b[1] - self.a[1]);
        let len_sq = dx * dx + dy * dy;
        let mut s = if len_sq > 0.0 {
            ((p[0] - self.a[0]) * dx + (p[1] - self.a[1]) * dy) / len_sq
        } else {
            0.0
        };
        s = s.clamp(0.0, 1.0);
        let (qx, qy) = (self.a[0] + s * dx - p[0], self.a[1] + s * dy - p[1]);
        qx * qx + qy * qy
    }

    /// Does a horizontal ray from `p` towards +x cross this edge?
    fn crosses_ray(&self, p: [f64; 2]) -> bool {
        let (a, b) = (self.a, self.b);
        if (a[1] > p[1]) == (b[1] > p[1]) {
            return false;
        }
        let x_at = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
        p[0] < x_at
    }

    fn touches_box(&self, lo: [f64; 2], hi: [f64; 2]) -> bool {
        let (a, b) = (self.a, self.b);
        if a[0].max(b[0]) < lo[0] || a[0].min(b[0]) > hi[0] {
            return false;
        }
        if a[1].max(b[1]) < lo[1] || a[1].min(b[1]) > hi[1] {
            return false;
        }
        // Separating axis along the segment normal.
        let (nx, ny) = (b[1] - a[1], a[0] - b[0]);
        let side = |x: f64, y: f64| nx * (x - a[0]) + ny * (y - a[1]);
        let corners = [
            side(lo[0], lo[1]),
            side(hi[0], lo[1]),
            side(lo[0], hi[1]),
            side(hi[0], hi[1]),
        ];
        let all_pos = corners.iter().all(|&c| c > 0.0);
        let all_neg = corners.iter().all(|&c| c < 0.0);
        !(all_pos || all_neg)
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

fn segments_intersect(s: &Segment, t: &Segment) -> bool {
    let d1 = orient(t.a, t.b, s.a);
    let d2 = orient(t.a, t.b, s.b);
    let d3 = orient(s.a, s.b, t.a);
    let d4 = orient(s.a, s.b, t.b);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(t.a, t.b, s.a))
        || (d2 == 0.0 && on_segment(t.a, t.b, s.b))
        || (d3 == 0.0 && on_segment(s.a, s.b, t.a))
        || (d4 == 0.0 && on_segment(s.a, s.b, t.b))
}

/// Signed area of a ring; positive for counterclockwise order.
pub fn signed_area(ring: &[[f64; 2]]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let (p, q) = (ring[i], ring[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CellState {
    Inside,
    Outside,
    Mixed,
}

#[derive(Clone, Debug)]
struct Raster {
    lo: [f64; 2],
    cell: [f64; 2],
    nx: usize,
    ny: usize,
    states: Vec<CellState>,
    /// Edges whose y-extent overlaps each raster row.
    row_edges: Vec<Vec<u32>>,
}

/// A simple polygon: one counterclockwise outer ring and any number of
/// clockwise hole rings. Rings are stored without a repeated closing vertex.
#[derive(Clone, Debug)]
pub struct Polygon {
    outer: Vec<[f64; 2]>,
    holes: Vec<Vec<[f64; 2]>>,
    edges: Vec<Segment>,
    raster: Raster,
}

fn clean_ring(mut ring: Vec<[f64; 2]>, which: &str) -> Result<Vec<[f64; 2]>> {
    if ring.len() >= 2 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err(Error::input(format!(
            "{which} ring needs at least 3 distinct vertices"
        )));
    }
    if ring.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::input(format!(
            "{which} ring has a non-finite vertex"
        )));
    }
    if signed_area(&ring).abs() <= 0.0 {
        return Err(Error::input(format!("{which} ring has zero area")));
    }
    Ok(ring)
}

impl Polygon {
    /// Builds a polygon, normalising ring orientation and rejecting rings that
    /// are degenerate or intersect themselves or each other.
    pub fn new(outer: Vec<[f64; 2]>, holes: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        let mut outer = clean_ring(outer, "outer")?;
        if signed_area(&outer) < 0.0 {
            outer.reverse();
        }
        let holes = holes
            .into_iter()
            .map(|h| {
                let mut h = clean_ring(h, "hole")?;
                if signed_area(&h) > 0.0 {
                    h.reverse();
                }
                Ok(h)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut edges = Vec::new();
        let mut ring_of = Vec::new();
        for (r, ring) in std::iter::once(&outer).chain(holes.iter()).enumerate() {
            for i in 0..ring.len() {
                edges.push(Segment {
                    a: ring[i],
                    b: ring[(i + 1) % ring.len()],
                });
                ring_of.push((r, i, ring.len()));
            }
        }
        for i in 0..edges.len() {
            for j in (i + 1)..edges.len() {
                let (ri, ii, len) = ring_of[i];
                let (rj, jj, _) = ring_of[j];
                if ri == rj && (jj == ii + 1 || (ii == 0 && jj == len - 1)) {
                    continue;
                }
                if segments_intersect(&edges[i], &edges[j]) {
                    return Err(Error::input(format!(
                        "polygon rings are not simple: edge {i} intersects edge {j}"
                    )));
                }
            }
        }
        let raster = Raster::build(&edges);
        Ok(Self {
            outer,
            holes,
            edges,
            raster,
        })
    }

    pub fn outer(&self) -> &[[f64; 2]] {
        &self.outer
    }

    pub fn holes(&self) -> &[Vec<[f64; 2]>] {
        &self.holes
    }

    /// Area enclosed by the outer ring minus the holes.
    pub fn area(&self) -> f64 {
        signed_area(&self.outer) + self.holes.iter().map(|h| signed_area(h)).sum::<f64>()
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        bbox(self.edges.iter().map(|e| e.a))
    }

    /// Distance from `p` to the nearest boundary edge.
    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        self.edges
            .iter()
            .map(|e| e.distance_sq(p))
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }

    /// Interior membership; points within [`BOUNDARY_TOLERANCE`] of an edge count as interior.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        if !(p[0].is_finite() && p[1].is_finite()) {
            return false;
        }
        let r = &self.raster;
        let fx = (p[0] - r.lo[0]) / r.cell[0];
        let fy = (p[1] - r.lo[1]) / r.cell[1];
        if fx < 0.0 || fy < 0.0 || fx >= r.nx as f64 || fy >= r.ny as f64 {
            return false;
        }
        let (ix, iy) = (fx as usize, fy as usize);
        match r.states[iy * r.nx + ix] {
            CellState::Inside => true,
            CellState::Outside => false,
            CellState::Mixed => self.contains_exact_in_row(p, iy),
        }
    }

    fn contains_exact_in_row(&self, p: [f64; 2], row: usize) -> bool {
        let tol_sq = BOUNDARY_TOLERANCE * BOUNDARY_TOLERANCE;
        let mut inside = false;
        for &e in &self.raster.row_edges[row] {
            let seg = &self.edges[e as usize];
            if seg.distance_sq(p) <= tol_sq {
                return true;
            }
            if seg.crosses_ray(p) {
                inside = !inside;
            }
        }
        inside
    }

    /// Reference membership test over every edge, without the raster.
    pub fn contains_exact(&self, p: [f64; 2]) -> bool {
        let tol_sq = BOUNDARY_TOLERANCE * BOUNDARY_TOLERANCE;
        let mut inside = false;
        for seg in &self.edges {
            if seg.distance_sq(p) <= tol_sq {
                return true;
            }
            if seg.crosses_ray(p) {
                inside = !inside;
            }
        }
        inside
    }

    /// Reads the `ring_id,x,y` boundary format. Ring 0 is the outer ring; every
    /// other id is a hole. Vertices are taken in file order within each ring.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            ring_id: i64,
            x: f64,
            y: f64,
        }
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rings: Vec<(i64, Vec<[f64; 2]>)> = Vec::new();
        for (i, rec) in rdr.deserialize::<Row>().enumerate() {
            let row = rec.map_err(|e| csv_error(e, i + 2))?;
            if !(row.x.is_finite() && row.y.is_finite()) {
                return Err(Error::Parse {
                    line: i + 2,
                    reason: "non-finite coordinate".into(),
                });
            }
            if row.ring_id < 0 {
                return Err(Error::Parse {
                    line: i + 2,
                    reason: "negative ring_id".into(),
                });
            }
            match rings.iter_mut().find(|(id, _)| *id == row.ring_id) {
                Some((_, ring)) => ring.push([row.x, row.y]),
                None => rings.push((row.ring_id, vec![[row.x, row.y]])),
            }
        }
        let outer_pos = rings
            .iter()
            .position(|(id, _)| *id == 0)
            .ok_or_else(|| Error::input("boundary file has no outer ring (ring_id 0)"))?;
        let (_, outer) = rings.remove(outer_pos);
        Self::new(outer, rings.into_iter().map(|(_, r)| r).collect())
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        Self::from_csv_reader(text.as_bytes())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("ring_id,x,y\n");
        for (id, ring) in std::iter::once(&self.outer)
            .chain(self.holes.iter())
            .enumerate()
        {
            for v in ring {
                out.push_str(&format!("{id},{},{}\n", v[0], v[1]));
            }
        }
        out
    }
}

pub(crate) fn csv_error(e: csv::Error, fallback_line: usize) -> Error {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback_line);
    Error::Parse {
        line,
        reason: e.to_string(),
    }
}

fn bbox(points: impl Iterator<Item = [f64; 2]>) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

impl Raster {
    fn build(edges: &[Segment]) -> Self {
        let (mut lo, mut hi) = bbox(edges.iter().map(|e| e.a));
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let pad = 1e-6 * span.max(1.0);
        for k in 0..2 {
            lo[k] -= pad;
            hi[k] += pad;
        }
        let target = span / RASTER_CELLS as f64;
        let nx = (((hi[0] - lo[0]) / target).ceil() as usize).clamp(1, RASTER_CELLS + 2);
        let ny = (((hi[1] - lo[1]) / target).ceil() as usize).clamp(1, RASTER_CELLS + 2);
        let cell = [(hi[0] - lo[0]) / nx as f64, (hi[1] - lo[1]) / ny as f64];

        let mut states = vec![CellState::Outside; nx * ny];
        let mut row_edges = vec![Vec::new(); ny];
        let clamp_ix = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n - 1);
        for (ei, e) in edges.iter().enumerate() {
            let x0 = clamp_ix((e.a[0].min(e.b[0]) - RASTER_INFLATE - lo[0]) / cell[0], nx);
            let x1 = clamp_ix((e.a[0].max(e.b[0]) + RASTER_INFLATE - lo[0]) / cell[0], nx);
            let y0 = clamp_ix((e.a[1].min(e.b[1]) - RASTER_INFLATE - lo[1]) / cell[1], ny);
            let y1 = clamp_ix((e.a[1].max(e.b[1]) + RASTER_INFLATE - lo[1]) / cell[1], ny);
            for iy in y0..=y1 {
                row_edges[iy].push(ei as u32);
                for ix in x0..=x1 {
                    let clo = [
                        lo[0] + ix as f64 * cell[0] - RASTER_INFLATE,
                        lo[1] + iy as f64 * cell[1] - RASTER_INFLATE,
                    ];
                    let chi = [
                        lo[0] + (ix + 1) as f64 * cell[0] + RASTER_INFLATE,
                        lo[1] + (iy + 1) as f64 * cell[1] + RASTER_INFLATE,
                    ];
                    if e.touches_box(clo, chi) {
                        states[iy * nx + ix] = CellState::Mixed;
                    }
                }
            }
        }
        // A cell untouched by any edge lies entirely on one side of the boundary;
        // its centre decides. Sweep each row left to right, counting crossings.
        for (iy, row) in row_edges.iter().enumerate() {
            for ix in 0..nx {
                let idx = iy * nx + ix;
                if states[idx] == CellState::Mixed {
                    continue;
                }
                let c = [
                    lo[0] + (ix as f64 + 0.5) * cell[0],
                    lo[1] + (iy as f64 + 0.5) * cell[1],
                ];
                let inside = row
                    .iter()
                    .filter(|&&e| edges[e as usize].crosses_ray(c))
                    .count()
                    % 2
                    == 1;
                states[idx] = if inside {
                    CellState::Inside
                } else {
                    CellState::Outside
                };
            }
        }
        Self {
            lo,
            cell,
            nx,
            ny,
            states,
            row_edges,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_with_hole() -> Polygon {
        Polygon::new(
            vec![[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]],
            vec![vec![[1.0, 1.0], [1.0, 2.0], [2.0, 2.0], [2.0, 1.0]]],
        )
        .unwrap()
    }

    #[test]
    fn hole_is_excluded() {
        let p = square_with_hole();
        assert!(p.contains([0.5, 0.5]));
        assert!(!p.contains([1.5, 1.5]));
        assert!(p.contains([3.0, 3.0]));
        assert!(!p.contains([5.0, 1.0]));
        assert!((p.area() - 15.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_points_are_interior() {
        let p = square_with_hole();
        assert!(p.contains([4.0, 2.0]));
        assert!(p.contains([4.0 + 5e-13, 2.0]));
        assert!(p.contains([1.0, 1.5]));
        assert!(!p.contains([4.0 + 1e-9, 2.0]));
    }

    #[test]
    fn orientation_is_normalised() {
        let p = Polygon::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]], vec![]).unwrap();
        assert!(signed_area(p.outer()) > 0.0);
    }

    #[test]
    fn self_intersecting_ring_is_rejected() {
        let bowtie = vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(Polygon::new(bowtie, vec![]), Err(Error::Input(_))));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let p = square_with_hole();
        let q = Polygon::from_csv_str(&p.to_csv_string()).unwrap();
        assert_eq!(p.outer(), q.outer());
        assert_eq!(p.holes(), q.holes());

        let err = Polygon::from_csv_str("ring_id,x,y\n0,0,0\n0,1,zero\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = Polygon::from_csv_str("ring_id,x,y\n1,0,0\n1,1,0\n1,1,1\n").unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn raster_agrees_with_exact_test() {
        let p = square_with_hole();
        let mut s = 0x9e3779b97f4a7c15u64;
        for _ in 0..20_000 {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            let x = (s % 10_000) as f64 / 10_000.0 * 5.0 - 0.5;
            let y = ((s >> 20) % 10_000) as f64 / 10_000.0 * 5.0 - 0.5;
            assert_eq!(p.contains([x, y]), p.contains_exact([x, y]), "({x}, {y})");
        }
    }
}
