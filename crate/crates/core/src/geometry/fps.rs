//! Greedy farthest-point sampling.

use super::{centroid, GeometryError, Point3};

/// Picks `m` indices greedily, starting from the point nearest the centroid.
/// Each later pick maximizes the distance to the already chosen set; ties go
/// to the lowest index.
pub fn farthest_point_sample(points: &[Point3], m: usize) -> Result<Vec<usize>, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::Degenerate("cannot sample an empty cloud".into()));
    }
    let c = centroid(points);
    let start = argmin_by_key(points.iter().map(|p| (p - c).norm_squared()));
    farthest_point_sample_from(points, m, start)
}

/// Farthest-point sampling with an explicit first index.
pub fn farthest_point_sample_from(points: &[Point3], m: usize, start: usize) -> Result<Vec<usize>, GeometryError> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(GeometryError::Argument(format!("cannot sample {m} of {n} points")));
    }
    if start >= n {
        return Err(GeometryError::Argument(format!("start index {start} out of range for {n} points")));
    }
    let mut chosen = Vec::with_capacity(m);
    let mut min_dist = vec![f64::INFINITY; n];
    let mut next = start;
    for _ in 0..m {
        chosen.push(next);
        let p = points[next];
        // Chosen points never win again, even against exact duplicates.
        min_dist[next] = f64::NEG_INFINITY;
        let mut best = 0usize;
        let mut best_d = f64::NEG_INFINITY;
        for (i, (q, d)) in points.iter().zip(min_dist.iter_mut()).enumerate() {
            let dist = (q - p).norm_squared();
            if dist < *d {
                *d = dist;
            }
            if *d > best_d {
                best_d = *d;
                best = i;
            }
        }
        next = best;
    }
    Ok(chosen)
}

fn argmin_by_key(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (i, v) in values.enumerate() {
        if v < best_v {
            best_v = v;
            best = i;
        }
    }
    best
}
