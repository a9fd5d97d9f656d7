//! Eigendecomposition of symmetric 3x3 matrices.
//!
//! Eigenvalues come from the closed-form trigonometric solution of the
//! characteristic polynomial; eigenvectors from cross products of rows of
//! `A - lambda I`. When two eigenvalues are too close for the cross-product
//! construction to be well conditioned, cyclic Jacobi rotations take over.

use nalgebra::{Matrix3, Vector3};

use super::GeometryError;

/// Eigenvalues in ascending order with matching orthonormal eigenvectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymmetricEigen3 {
    pub values: [f64; 3],
    pub vectors: [Vector3<f64>; 3],
}

/// Relative gap below which two eigenvalues are treated as one.
pub const TIE_TOLERANCE: f64 = 1e-12;

// Relative gap below which the cross-product construction is abandoned.
const SEPARATION_TOLERANCE: f64 = 1e-6;

pub fn is_symmetric(m: &Matrix3<f64>) -> bool {
    let scale = m.amax().max(1.0);
    (0..3).all(|i| (0..3).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= 1e-12 * scale))
}

pub fn symmetric_eigen3(m: &Matrix3<f64>) -> Result<SymmetricEigen3, GeometryError> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::Argument("matrix has non-finite entries".into()));
    }
    if !is_symmetric(m) {
        return Err(GeometryError::Argument("matrix is not symmetric".into()));
    }
    let scale = m.amax();
    if scale == 0.0 {
        return Ok(SymmetricEigen3 {
            values: [0.0; 3],
            vectors: [Vector3::x(), Vector3::y(), Vector3::z()],
        });
    }
    let a = m / scale;
    let values = eigenvalues(&a);
    let spread = (values[2] - values[0]).abs().max(f64::MIN_POSITIVE);
    let gap_low = (values[1] - values[0]) / spread;
    let gap_high = (values[2] - values[1]) / spread;

    let result = if values[2] - values[0] <= TIE_TOLERANCE {
        // Scalar multiple of the identity.
        SymmetricEigen3 {
            values,
            vectors: [Vector3::x(), Vector3::y(), Vector3::z()],
        }
    } else if gap_low > SEPARATION_TOLERANCE && gap_high > SEPARATION_TOLERANCE {
        let v0 = null_vector(&a, values[0]);
        let v2 = null_vector(&a, values[2]);
        match (v0, v2) {
            (Some(v0), Some(v2)) => {
                // Re-orthogonalize v2 against v0 and complete the frame.
                let v2 = (v2 - v0 * v0.dot(&v2)).normalize();
                let v1 = v2.cross(&v0).normalize();
                SymmetricEigen3 {
                    values,
                    vectors: [v0, v1, v2],
                }
            }
            _ => jacobi(&a),
        }
    } else {
        jacobi(&a)
    };

    Ok(SymmetricEigen3 {
        values: result.values.map(|v| v * scale),
        vectors: result.vectors,
    })
}

fn eigenvalues(a: &Matrix3<f64>) -> [f64; 3] {
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    if p1 == 0.0 {
        let mut d = [a[(0, 0)], a[(1, 1)], a[(2, 2)]];
        d.sort_by(f64::total_cmp);
        return d;
    }
    let q = a.trace() / 3.0;
    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = (a - Matrix3::identity() * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let hi = q + 2.0 * p * phi.cos();
    let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let mid = 3.0 * q - hi - lo;
    let mut v = [lo, mid, hi];
    v.sort_by(f64::total_cmp);
    v
}

/// Unit vector spanning the null space of `a - lambda I`, from the best
/// conditioned cross product of its rows.
fn null_vector(a: &Matrix3<f64>, lambda: f64) -> Option<Vector3<f64>> {
    let m = a - Matrix3::identity() * lambda;
    let rows = [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()];
    let candidates = [rows[0].cross(&rows[1]), rows[0].cross(&rows[2]), rows[1].cross(&rows[2])];
    let best = candidates
        .iter()
        .copied()
        .max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared()))?;
    let n = best.norm();
    if n <= 1e-12 {
        return None;
    }
    let v = best / n;
    // Reject ill-conditioned constructions rather than return a poor axis.
    let residual = (m * v).norm();
    if residual > 1e-6 {
        return None;
    }
    Some(v)
}

/// Cyclic Jacobi eigenvalue iteration.
fn jacobi(a: &Matrix3<f64>) -> SymmetricEigen3 {
    let mut d = *a;
    let mut v = Matrix3::<f64>::identity();
    for _sweep in 0..64 {
        let off = d[(0, 1)].powi(2) + d[(0, 2)].powi(2) + d[(1, 2)].powi(2);
        if off <= 1e-300 {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = d[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (d[(q, q)] - d[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = Matrix3::<f64>::identity();
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;
            d = rot.transpose() * d * rot;
            d[(p, q)] = 0.0;
            d[(q, p)] = 0.0;
            v *= rot;
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| d[(i, i)].total_cmp(&d[(j, j)]).then(i.cmp(&j)));
    SymmetricEigen3 {
        values: order.map(|i| d[(i, i)]),
        vectors: order.map(|i| v.column(i).into_owned().normalize()),
    }
}

/// Flips `v` so its largest-magnitude component is positive (the first
/// such component on exact magnitude ties).
pub fn orient(v: Vector3<f64>) -> Vector3<f64> {
    let mut best = 0;
    for i in 1..3 {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        -v
    } else {
        v
    }
}
