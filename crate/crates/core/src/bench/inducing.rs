use crate::geometry::{embed, IntrinsicPoint, ManifoldSpec};

const LLOYD_ROUNDS: usize = 50;

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(coords: &[Vec<f64>], q: &[f64], taken: &[bool]) -> usize {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, c) in coords.iter().enumerate() {
        let d = sq(c, q);
        if !taken[i] && d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Picks `m` roughly evenly spread grid points: farthest-point sampling seeded
/// at the grid point nearest the volume-weighted centroid, then
/// volume-weighted Lloyd rounds with centres snapped back onto the grid.
/// Distances are measured in the embedding. Returns sorted indices.
pub fn select_inducing(
    spec: &ManifoldSpec,
    grid: &[IntrinsicPoint],
    volumes: &[f64],
    m: usize,
) -> Vec<usize> {
    assert_eq!(grid.len(), volumes.len(), "one volume per grid point");
    let m = m.min(grid.len());
    if m == 0 {
        return Vec::new();
    }
    let coords: Vec<Vec<f64>> = grid
        .iter()
        .map(|&p| embed(spec, p).expect("grid point in domain").0)
        .collect();
    let dim = coords[0].len();
    let total: f64 = volumes.iter().sum();
    let centroid: Vec<f64> = (0..dim)
        .map(|k| {
            coords
                .iter()
                .zip(volumes)
                .map(|(c, v)| c[k] * v)
                .sum::<f64>()
                / total
        })
        .collect();

    let mut taken = vec![false; grid.len()];
    let mut centres = vec![nearest(&coords, &centroid, &taken)];
    taken[centres[0]] = true;
    let mut dist: Vec<f64> = coords.iter().map(|c| sq(c, &coords[centres[0]])).collect();
    while centres.len() < m {
        let next = (0..grid.len()).fold(0, |b, i| if dist[i] > dist[b] { i } else { b });
        centres.push(next);
        taken[next] = true;
        for (d, c) in dist.iter_mut().zip(&coords) {
            *d = d.min(sq(c, &coords[next]));
        }
    }

    for _ in 0..LLOYD_ROUNDS {
        let mut sums = vec![vec![0.0; dim]; m];
        let mut weights = vec![0.0; m];
        for (i, c) in coords.iter().enumerate() {
            let k = (0..m).fold(0, |b, k| {
                if sq(c, &coords[centres[k]]) < sq(c, &coords[centres[b]]) {
                    k
                } else {
                    b
                }
            });
            weights[k] += volumes[i];
            for (s, x) in sums[k].iter_mut().zip(c) {
                *s += volumes[i] * x;
            }
        }
        let mut taken = vec![false; grid.len()];
        let mut moved = Vec::with_capacity(m);
        for k in 0..m {
            let target: Vec<f64> = sums[k].iter().map(|s| s / weights[k]).collect();
            let snapped = if weights[k] > 0.0 {
                nearest(&coords, &target, &taken)
            } else {
                centres[k]
            };
            taken[snapped] = true;
            moved.push(snapped);
        }
        if moved == centres {
            break;
        }
        centres = moved;
    }
    centres.sort_unstable();
    centres
}
