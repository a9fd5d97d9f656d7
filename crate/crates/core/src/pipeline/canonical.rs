use nalgebra::{Matrix3, Vector3};

use super::PipelineError;
use crate::geometry::eigen::symmetric_eigen3;
use crate::geometry::{centroid, Point3, PointCloud};

/// Relative size of the middle principal variance below which a cloud is
/// treated as collinear.
const RANK_TOLERANCE: f64 = 1e-12;

/// Similarity transform into the canonical frame:
/// `p' = axes^T (p - center) / scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CanonicalFrame {
    pub center: Point3,
    pub scale: f64,
    /// Rows are the principal axes, largest variance first.
    pub axes: Matrix3<f64>,
}

impl CanonicalFrame {
    pub fn apply(&self, p: &Point3) -> Point3 {
        self.axes * ((p - self.center) / self.scale)
    }
}

/// Centers the cloud, scales it to unit maximum radius and rotates it onto
/// its principal axes (descending variance). Each axis is flipped so the
/// third moment of the coordinates along it is non-negative.
pub fn canonical_frame(points: &[Point3]) -> Result<CanonicalFrame, PipelineError> {
    if points.len() < 3 {
        return Err(PipelineError::Degenerate(format!(
            "canonicalization needs at least 3 points, got {}",
            points.len()
        )));
    }
    let center = centroid(points);
    let scale = points.iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(PipelineError::Degenerate("all points coincide".into()));
    }
    let q: Vec<Point3> = points.iter().map(|p| (p - center) / scale).collect();
    let mut cov = Matrix3::zeros();
    for v in &q {
        cov += v * v.transpose();
    }
    cov /= q.len() as f64;
    let eig = symmetric_eigen3(&cov)?;
    if eig.values[1] <= RANK_TOLERANCE * eig.values[2] {
        return Err(PipelineError::Degenerate("points are collinear".into()));
    }
    let mut rows = [eig.vectors[2], eig.vectors[1], eig.vectors[0]];
    for axis in rows.iter_mut() {
        let m3: f64 = q.iter().map(|v| v.dot(axis).powi(3)).sum();
        if m3 < 0.0 {
            *axis = -*axis;
        }
    }
    let axes = Matrix3::from_rows(&rows.map(|r: Vector3<f64>| r.transpose()));
    Ok(CanonicalFrame { center, scale, axes })
}

pub fn canonicalize(cloud: &PointCloud) -> Result<PointCloud, PipelineError> {
    let frame = canonical_frame(cloud.points())?;
    Ok(cloud.map_points(|p| frame.apply(p))?)
}
