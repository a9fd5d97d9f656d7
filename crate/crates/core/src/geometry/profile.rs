//! Local surface descriptors of group centers and the geometric-variation
//! index derived from them.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::eigen::{orient, symmetric_eigen3, TIE_TOLERANCE};
use super::{adaptive_radius, centroid, farthest_point_sample, radius_neighborhoods, GeometryError, Point3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for VariationWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeometryProfile {
    pub center_indices: Vec<usize>,
    pub radius: f64,
    pub neighborhoods: Vec<Vec<usize>>,
    pub normals: Vec<Vector3<f64>>,
    pub curvatures: Vec<f64>,
    pub eigenvalues: Vec<[f64; 3]>,
    pub centroids: Vec<Point3>,
    pub var_norm: Vec<f64>,
    pub var_curv: Vec<f64>,
    pub var_geom: Vec<f64>,
}

/// Mean and population covariance of a non-empty point set.
pub fn local_covariance(points: &[Point3]) -> Result<(Matrix3<f64>, Point3), GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::Argument("covariance of an empty neighborhood".into()));
    }
    let mu = centroid(points);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mu;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    // Exact symmetry regardless of accumulation order.
    let cov = (cov + cov.transpose()) * 0.5;
    Ok((cov, mu))
}

/// Surface normal (eigenvector of the smallest eigenvalue) and curvature
/// `lambda_min / trace`, plus the ascending eigenvalues.
///
/// The normal is oriented so its largest-magnitude component is positive.
/// When the smallest eigenvalue is repeated, the normal is the unit vector of
/// that eigenspace closest to +z, falling back to +y and then +x.
pub fn normal_and_curvature(cov: &Matrix3<f64>) -> Result<(Vector3<f64>, f64, [f64; 3]), GeometryError> {
    let eig = symmetric_eigen3(cov)?;
    let values = eig.values;
    let spread = values[2].abs().max(f64::MIN_POSITIVE);
    let normal = if (values[1] - values[0]) <= TIE_TOLERANCE * spread {
        let normal = if (values[2] - values[0]) <= TIE_TOLERANCE * spread {
            Vector3::z()
        } else {
            // Eigenspace of the repeated minimum is the plane orthogonal to
            // the top eigenvector.
            let top = eig.vectors[2];
            [Vector3::z(), Vector3::y(), Vector3::x()]
                .into_iter()
                .map(|axis| axis - top * top.dot(&axis))
                .find(|v| v.norm() > 1e-6)
                .map(|v| v.normalize())
                .unwrap_or(eig.vectors[0])
        };
        normal
    } else {
        eig.vectors[0]
    };
    let trace: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let curvature = if trace > 0.0 {
        (values[0].max(0.0) / trace).min(1.0 / 3.0)
    } else {
        0.0
    };
    Ok((orient(normal), curvature, values))
}

/// Unsigned angle between two normal axes, in `[0, pi/2]`.
///
/// Equal to `acos(clamp(|a . b|, 0, 1))` for unit vectors; the `atan2` form
/// stays accurate for nearly parallel axes where `acos` loses half its
/// digits.
pub fn axis_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b).abs())
}

/// Per-center mean normal-angle deviation and mean curvature difference over
/// each neighborhood, and their weighted sum.
pub fn geometric_variation(
    normals: &[Vector3<f64>],
    curvatures: &[f64],
    neighborhoods: &[Vec<usize>],
    weights: VariationWeights,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = normals.len();
    let mut var_norm = Vec::with_capacity(m);
    let mut var_curv = Vec::with_capacity(m);
    let mut var_geom = Vec::with_capacity(m);
    for i in 0..m {
        let nb = &neighborhoods[i];
        let count = nb.len().max(1) as f64;
        let vn = nb.iter().map(|&j| axis_angle(&normals[i], &normals[j])).sum::<f64>() / count;
        let vc = nb.iter().map(|&j| (curvatures[i] - curvatures[j]).abs()).sum::<f64>() / count;
        var_norm.push(vn);
        var_curv.push(vc);
        var_geom.push(weights.alpha * vn + weights.beta * vc);
    }
    (var_norm, var_curv, var_geom)
}

impl GeometryProfile {
    /// Full analysis of a fixed set of centers (given as indices into
    /// `points`).
    pub fn from_centers(
        points: &[Point3],
        center_indices: Vec<usize>,
        eta: f64,
        weights: VariationWeights,
    ) -> Result<Self, GeometryError> {
        let centers: Vec<Point3> = center_indices.iter().map(|&i| points[i]).collect();
        let radius = adaptive_radius(&centers, eta)?;
        let neighborhoods = radius_neighborhoods(&centers, radius)?;
        let m = centers.len();
        let mut normals = Vec::with_capacity(m);
        let mut curvatures = Vec::with_capacity(m);
        let mut eigenvalues = Vec::with_capacity(m);
        let mut centroids = Vec::with_capacity(m);
        let mut scratch = Vec::new();
        for nb in &neighborhoods {
            scratch.clear();
            scratch.extend(nb.iter().map(|&j| centers[j]));
            let (cov, mu) = local_covariance(&scratch)?;
            let (n, c, l) = normal_and_curvature(&cov)?;
            normals.push(n);
            curvatures.push(c);
            eigenvalues.push(l);
            centroids.push(mu);
        }
        let (var_norm, var_curv, var_geom) = geometric_variation(&normals, &curvatures, &neighborhoods, weights);
        Ok(Self {
            center_indices,
            radius,
            neighborhoods,
            normals,
            curvatures,
            eigenvalues,
            centroids,
            var_norm,
            var_curv,
            var_geom,
        })
    }

    /// Samples `m` centers by farthest-point sampling and analyzes them.
    pub fn analyze(points: &[Point3], m: usize, eta: f64, weights: VariationWeights) -> Result<Self, GeometryError> {
        let idx = farthest_point_sample(points, m)?;
        Self::from_centers(points, idx, eta, weights)
    }
}
