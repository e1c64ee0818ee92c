//! Generator for the bundled two-basin sea.
//!
//! A southern and a northern basin are separated by a thin peninsula and
//! joined by a narrow western channel; a small island sits in the southern
//! basin. Values are bumps in the in-water distance from a northern peak
//! beside the peninsula and a lower southern one, so they jump across the
//! peninsula, and carry small deterministic noise.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::inducing::select_inducing;
use super::problems::rescale;
use crate::geometry::{IntrinsicPoint, ManifoldSpec, Polygon};

pub const SEA_SPACING: f64 = 0.14103;
pub const SEA_INDUCING: usize = 42;
const MARGIN: f64 = 0.3;
const NOISE_SD: f64 = 0.015;
const NOISE_SEED: u64 = 485;
/// Centre, height and width of each bump; widths are in-water distances.
const PEAKS: [([f64; 2], f64, f64); 2] = [([2.6, 2.2], 1.0, 2.0), ([1.2, 0.6], 0.85, 1.2)];

const OUTER: [[f64; 2]; 24] = [
    [0.2, 0.0],
    [1.5, -0.15],
    [3.0, 0.0],
    [4.0, 0.3],
    [4.3, 0.9],
    [4.1, 1.45],
    [3.0, 1.4],
    [2.0, 1.35],
    [1.1, 1.45],
    [0.75, 1.58],
    [1.1, 1.75],
    [2.0, 1.8],
    [3.0, 1.75],
    [3.6, 1.85],
    [3.75, 2.4],
    [3.3, 3.0],
    [2.3, 3.2],
    [1.2, 3.1],
    [0.4, 2.8],
    [0.1, 2.2],
    [0.0, 1.6],
    [-0.1, 1.0],
    [0.0, 0.4],
    [0.08, 0.15],
];

fn island() -> Vec<[f64; 2]> {
    (0..8)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / 8.0;
            [2.2 + 0.22 * a.cos(), 0.65 + 0.15 * a.sin()]
        })
        .collect()
}

pub fn sea_polygon() -> Polygon {
    Polygon::new(OUTER.to_vec(), vec![island()]).expect("sea polygon is simple")
}

/// Interior lattice points at spacing `h`, at least `MARGIN · h` from the coast.
pub fn sea_lattice(polygon: &Polygon, h: f64) -> Vec<[f64; 2]> {
    let (lo, hi) = polygon.bounding_box();
    let mut pts = Vec::new();
    let nx = ((hi[0] - lo[0]) / h).ceil() as i64 + 1;
    let ny = ((hi[1] - lo[1]) / h).ceil() as i64 + 1;
    for j in 0..ny {
        for i in 0..nx {
            let p = [lo[0] + (i as f64 + 0.5) * h, lo[1] + (j as f64 + 0.5) * h];
            if polygon.contains(p) && polygon.boundary_distance(p) >= MARGIN * h {
                pts.push(p);
            }
        }
    }
    pts
}

fn segment_in_water(polygon: &Polygon, a: [f64; 2], b: [f64; 2]) -> bool {
    (1..8).all(|k| {
        let f = k as f64 / 8.0;
        polygon.contains([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])])
    })
}

/// Shortest in-water path lengths from `source` over the 8-neighbour lattice graph.
pub fn water_distance(polygon: &Polygon, pts: &[[f64; 2]], h: f64, source: usize) -> Vec<f64> {
    let reach = 1.5 * h;
    let adj: Vec<Vec<(usize, f64)>> = pts
        .iter()
        .map(|&a| {
            pts.iter()
                .enumerate()
                .filter_map(|(j, &b)| {
                    let d = (a[0] - b[0]).hypot(a[1] - b[1]);
                    (d > 0.0 && d < reach && segment_in_water(polygon, a, b)).then_some((j, d))
                })
                .collect()
        })
        .collect();
    let mut dist = vec![f64::INFINITY; pts.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Reverse((0u64, source)));
    while let Some(Reverse((key, i))) = heap.pop() {
        let d = f64::from_bits(key);
        if d > dist[i] {
            continue;
        }
        for &(j, w) in &adj[i] {
            let nd = d + w;
            if nd < dist[j] {
                dist[j] = nd;
                heap.push(Reverse((nd.to_bits(), j)));
            }
        }
    }
    dist
}

fn nearest(pts: &[[f64; 2]], q: [f64; 2]) -> usize {
    (0..pts.len())
        .min_by(|&a, &b| {
            let da = (pts[a][0] - q[0]).hypot(pts[a][1] - q[1]);
            let db = (pts[b][0] - q[0]).hypot(pts[b][1] - q[1]);
            da.total_cmp(&db)
        })
        .expect("non-empty lattice")
}

/// Boundary and grid files of the bundled sea, exactly as shipped.
pub fn synthetic_sea() -> (String, String) {
    let polygon = sea_polygon();
    let pts = sea_lattice(&polygon, SEA_SPACING);
    let bumps: Vec<(Vec<f64>, f64, f64)> = PEAKS
        .iter()
        .map(|&(centre, height, width)| {
            (
                water_distance(&polygon, &pts, SEA_SPACING, nearest(&pts, centre)),
                height,
                width,
            )
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(NOISE_SEED);
    let noise = Normal::new(0.0, NOISE_SD).expect("valid normal");
    let raw: Vec<f64> = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let peaks: f64 = bumps
                .iter()
                .map(|(d, h, w)| h * (-0.5 * (d[i] / w).powi(2)).exp())
                .sum();
            peaks + 0.04 * (3.0 * p[0]).sin() * (2.0 * p[1]).cos() + noise.sample(&mut rng)
        })
        .collect();
    let values = rescale(&raw, 0.0, 10.0);
    let spec = ManifoldSpec::plane(polygon.clone());
    let grid: Vec<IntrinsicPoint> = pts.iter().map(|&p| IntrinsicPoint(p)).collect();
    let inducing = select_inducing(&spec, &grid, &vec![1.0; grid.len()], SEA_INDUCING);
    let mut csv = String::from("x,y,value,is_inducing\n");
    for (i, (p, v)) in pts.iter().zip(&values).enumerate() {
        let z = u8::from(inducing.binary_search(&i).is_ok());
        csv.push_str(&format!("{:.6},{:.6},{:.6},{z}\n", p[0], p[1], v));
    }
    (polygon.to_csv_string(), csv)
}
