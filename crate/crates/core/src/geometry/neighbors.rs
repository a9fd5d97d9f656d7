//! Neighborhood queries: nearest-neighbor spacing, fixed-radius balls via a
//! uniform grid, and k-nearest neighbors.

use std::collections::HashMap;

use super::{GeometryError, Point3};

/// `eta` times the mean distance from each center to its nearest other
/// center.
pub fn adaptive_radius(centers: &[Point3], eta: f64) -> Result<f64, GeometryError> {
    if centers.len() < 2 {
        return Err(GeometryError::Degenerate(format!(
            "adaptive radius needs at least 2 centers, got {}",
            centers.len()
        )));
    }
    if !(eta > 0.0) {
        return Err(GeometryError::Argument(format!("eta must be positive, got {eta}")));
    }
    let nn = nearest_other_distances(centers);
    Ok(eta * nn.iter().sum::<f64>() / centers.len() as f64)
}

/// Distance from each point to its nearest other point, found with an
/// x-sorted sweep that stops once the x gap alone exceeds the best match.
pub fn nearest_other_distances(points: &[Point3]) -> Vec<f64> {
    let n = points.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x).then(a.cmp(&b)));
    let mut rank = vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    (0..n)
        .map(|i| {
            let p = points[i];
            let mut best = f64::INFINITY;
            let r = rank[i];
            for &j in order[r + 1..].iter() {
                let dx = points[j].x - p.x;
                if dx * dx > best {
                    break;
                }
                best = best.min((points[j] - p).norm_squared());
            }
            for &j in order[..r].iter().rev() {
                let dx = p.x - points[j].x;
                if dx * dx > best {
                    break;
                }
                best = best.min((points[j] - p).norm_squared());
            }
            best.sqrt()
        })
        .collect()
}

/// Uniform hash grid with cubic cells.
pub struct Grid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl Grid {
    pub fn new(points: &[Point3], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell size must be positive");
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(cell, p)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key(cell: f64, p: &Point3) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    /// Indices stored in the 27 cells around `p`.
    pub fn around(&self, p: &Point3) -> impl Iterator<Item = usize> + '_ {
        let [x, y, z] = Self::key(self.cell, p);
        (-1..=1).flat_map(move |dx| {
            (-1..=1).flat_map(move |dy| {
                (-1..=1).flat_map(move |dz| {
                    self.cells
                        .get(&[x + dx, y + dy, z + dz])
                        .map(|v| v.as_slice())
                        .unwrap_or(&[])
                        .iter()
                        .copied()
                })
            })
        })
    }
}

/// For every center, the ascending indices of centers within distance `r`
/// (itself included).
pub fn radius_neighborhoods(centers: &[Point3], r: f64) -> Result<Vec<Vec<usize>>, GeometryError> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(GeometryError::Argument(format!("radius must be finite and non-negative, got {r}")));
    }
    // With r == 0 only coincident points qualify, and they share any cell.
    let cell = if r > 0.0 { r } else { 1.0 };
    let extent = centers.iter().flat_map(|p| p.iter()).fold(0.0f64, |a, v| a.max(v.abs()));
    // Keep cell keys inside i64 even for tiny radii on large coordinates.
    let cell = cell.max(extent / 1e12);
    let grid = Grid::new(centers, cell);
    let r2 = r * r;
    Ok(centers
        .iter()
        .map(|p| {
            let mut hits: Vec<usize> = grid.around(p).filter(|&j| (centers[j] - p).norm_squared() <= r2).collect();
            hits.sort_unstable();
            hits
        })
        .collect())
}

/// Indices of the `k` points nearest to `query`, ordered by distance with
/// ties broken by lower index.
pub fn knn(points: &[Point3], query: &Point3, k: usize) -> Result<Vec<usize>, GeometryError> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(GeometryError::Argument(format!("cannot take {k} nearest of {n} points")));
    }
    let mut keyed: Vec<(f64, usize)> = points.iter().map(|p| (p - query).norm_squared()).zip(0..).collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < n {
        keyed.select_nth_unstable_by(k - 1, cmp);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(cmp);
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}
