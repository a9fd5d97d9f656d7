//! Local surface defects with known ground truth.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::geometry::{knn, local_covariance, normal_and_curvature, Point3, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyKind {
    Bump,
    Dent,
    Crater,
    Excision,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 4] = [Self::Bump, Self::Dent, Self::Crater, Self::Excision];

    pub fn name(self) -> &'static str {
        match self {
            Self::Bump => "bump",
            Self::Dent => "dent",
            Self::Crater => "crater",
            Self::Excision => "excision",
        }
    }
}

pub const MIN_ANOMALY_FRACTION: f64 = 0.01;
pub const MAX_ANOMALY_FRACTION: f64 = 0.10;
pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;

/// Neighbors used to estimate the surface normal at the defect center.
const NORMAL_NEIGHBORS: usize = 16;
/// Outer edge of the excision boundary ring, relative to the extent.
const EXCISION_RING: f64 = 1.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyDescriptor {
    pub kind: AnomalyKind,
    pub magnitude: f64,
    pub extent: f64,
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub fraction: f64,
    pub attempts: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Injected {
    /// The modified cloud, labeled with `mask`.
    pub cloud: PointCloud,
    pub mask: Vec<bool>,
    pub descriptor: Option<AnomalyDescriptor>,
}

/// `1` at the center, `0` at `t = 1`, with zero slope at both ends.
fn taper(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (PI * t).cos())
    }
}

/// Raised ring peaking at `t = 0.75`, zero outside `[0.5, 1]`.
fn ring(t: f64) -> f64 {
    if !(0.5..1.0).contains(&t) {
        0.0
    } else {
        0.5 * (1.0 - (4.0 * PI * (t - 0.5)).cos())
    }
}

fn profile(kind: AnomalyKind, t: f64) -> f64 {
    match kind {
        AnomalyKind::Bump => taper(t),
        AnomalyKind::Dent => -taper(t),
        AnomalyKind::Crater => -taper((2.0 * t).min(1.0)) + 0.5 * ring(t),
        AnomalyKind::Excision => 0.0,
    }
}

fn outward_normal(points: &[Point3], at: usize) -> Result<Point3, DatasetError> {
    let k = NORMAL_NEIGHBORS.min(points.len());
    let nb: Vec<Point3> = knn(points, &points[at], k)?.iter().map(|&i| points[i]).collect();
    let (cov, _) = local_covariance(&nb)?;
    let (n, _, _) = normal_and_curvature(&cov)?;
    let centroid = crate::geometry::centroid(points);
    Ok(if n.dot(&(points[at] - centroid)) < 0.0 { -n } else { n })
}

/// Applies one defect of `kind` around a random surface point. Bumps, dents
/// and craters displace points within `extent` along the local normal and
/// mark them; an excision deletes them and marks the surrounding ring. The
/// location is redrawn until the marked fraction lies in `[0.01, 0.10]`.
pub fn inject_anomaly(
    cloud: &PointCloud,
    kind: AnomalyKind,
    magnitude: f64,
    extent: f64,
    rng: &mut impl Rng,
) -> Result<Injected, DatasetError> {
    let points = cloud.points();
    let n = points.len();
    if magnitude == 0.0 {
        let mask = vec![false; n];
        return Ok(Injected {
            cloud: labeled_like(cloud, points.to_vec(), &mask)?,
            mask,
            descriptor: None,
        });
    }
    if !(magnitude > 0.0 && magnitude.is_finite()) {
        return Err(DatasetError::Argument(format!("magnitude must be positive, got {magnitude}")));
    }
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(DatasetError::Argument(format!("extent must be positive, got {extent}")));
    }
    for attempt in 1..=MAX_PLACEMENT_ATTEMPTS {
        let at = rng.random_range(0..n);
        let center = points[at];
        let normal = outward_normal(points, at)?;
        let (new_points, mask) = match kind {
            AnomalyKind::Excision => {
                let mut kept = Vec::with_capacity(n);
                let mut mask = Vec::with_capacity(n);
                for p in points {
                    let t = (p - center).norm() / extent;
                    if t >= 1.0 {
                        kept.push(*p);
                        mask.push(t < EXCISION_RING);
                    }
                }
                (kept, mask)
            }
            _ => points
                .iter()
                .map(|p| {
                    let t = (p - center).norm() / extent;
                    (p + normal * (magnitude * profile(kind, t)), t < 1.0)
                })
                .unzip(),
        };
        let marked = mask.iter().filter(|&&m| m).count();
        if new_points.is_empty() {
            continue;
        }
        let fraction = marked as f64 / new_points.len() as f64;
        if (MIN_ANOMALY_FRACTION..=MAX_ANOMALY_FRACTION).contains(&fraction) {
            return Ok(Injected {
                cloud: labeled_like(cloud, new_points, &mask)?,
                mask,
                descriptor: Some(AnomalyDescriptor {
                    kind,
                    magnitude,
                    extent,
                    center: [center.x, center.y, center.z],
                    normal: [normal.x, normal.y, normal.z],
                    fraction,
                    attempts: attempt,
                }),
            });
        }
    }
    Err(DatasetError::Generation(format!(
        "no placement of a {} with extent {extent} marks 1-10% of {n} points after {MAX_PLACEMENT_ATTEMPTS} attempts",
        kind.name()
    )))
}

fn labeled_like(source: &PointCloud, points: Vec<Point3>, mask: &[bool]) -> Result<PointCloud, DatasetError> {
    let mut out = PointCloud::with_labels(points, Some(mask.to_vec()))?;
    out.category = source.category.clone();
    Ok(out)
}
