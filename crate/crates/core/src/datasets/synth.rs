//! Procedural surface clouds sampled uniformly by area.

use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::geometry::{Point3, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Sphere,
    Box,
    Cylinder,
    Torus,
    Capsule,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [Self::Sphere, Self::Box, Self::Cylinder, Self::Torus, Self::Capsule];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sphere => "sphere",
            Self::Box => "box",
            Self::Cylinder => "cylinder",
            Self::Torus => "torus",
            Self::Capsule => "capsule",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Reference dimensions with a bounding radius near 1.
    pub fn default_shape(self) -> Shape {
        match self {
            Self::Sphere => Shape::Sphere { radius: 1.0 },
            Self::Box => Shape::Box {
                half_extents: [0.8, 0.5, 0.35],
            },
            Self::Cylinder => Shape::Cylinder {
                radius: 0.45,
                height: 1.6,
            },
            Self::Torus => Shape::Torus { major: 0.75, minor: 0.3 },
            Self::Capsule => Shape::Capsule {
                radius: 0.35,
                length: 1.1,
            },
        }
    }
}

/// Shape parameters. Every shape is centered at the origin; axial shapes
/// run along z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
    Torus { major: f64, minor: f64 },
    /// `length` is the straight section between the two hemispherical caps.
    Capsule { radius: f64, length: f64 },
}

impl Shape {
    pub fn kind(&self) -> ShapeKind {
        match self {
            Self::Sphere { .. } => ShapeKind::Sphere,
            Self::Box { .. } => ShapeKind::Box,
            Self::Cylinder { .. } => ShapeKind::Cylinder,
            Self::Torus { .. } => ShapeKind::Torus,
            Self::Capsule { .. } => ShapeKind::Capsule,
        }
    }

    fn dims(&self) -> Vec<f64> {
        match *self {
            Self::Sphere { radius } => vec![radius],
            Self::Box { half_extents } => half_extents.to_vec(),
            Self::Cylinder { radius, height } => vec![radius, height],
            Self::Torus { major, minor } => vec![major, minor],
            Self::Capsule { radius, length } => vec![radius, length],
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if let Some(d) = self.dims().into_iter().find(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(DatasetError::Argument(format!(
                "{} dimensions must be positive and finite, got {d}",
                self.kind().name()
            )));
        }
        if let Self::Torus { major, minor } = *self {
            if minor >= major {
                return Err(DatasetError::Argument(format!(
                    "torus minor radius {minor} must be below major radius {major}"
                )));
            }
        }
        Ok(())
    }

    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Self::Sphere { radius } => radius,
            Self::Box { half_extents: [a, b, c] } => (a * a + b * b + c * c).sqrt(),
            Self::Cylinder { radius, height } => radius.hypot(height / 2.0),
            Self::Torus { major, minor } => major + minor,
            Self::Capsule { radius, length } => length / 2.0 + radius,
        }
    }

    pub fn surface_area(&self) -> f64 {
        match *self {
            Self::Sphere { radius } => 4.0 * PI * radius * radius,
            Self::Box { half_extents: [a, b, c] } => 8.0 * (a * b + b * c + a * c),
            Self::Cylinder { radius, height } => 2.0 * PI * radius * (radius + height),
            Self::Torus { major, minor } => 4.0 * PI * PI * major * minor,
            Self::Capsule { radius, length } => 2.0 * PI * radius * length + 4.0 * PI * radius * radius,
        }
    }

    /// Every dimension scaled by an independent factor in `1 +- spread`,
    /// keeping the torus valid.
    pub fn jittered(&self, spread: f64, rng: &mut impl Rng) -> Shape {
        let mut f = || 1.0 + spread * rng.random_range(-1.0..=1.0);
        match *self {
            Self::Sphere { radius } => Self::Sphere { radius: radius * f() },
            Self::Box { half_extents: [a, b, c] } => Self::Box {
                half_extents: [a * f(), b * f(), c * f()],
            },
            Self::Cylinder { radius, height } => Self::Cylinder {
                radius: radius * f(),
                height: height * f(),
            },
            Self::Torus { major, minor } => {
                let major = major * f();
                Self::Torus {
                    major,
                    minor: (minor * f()).min(0.9 * major),
                }
            }
            Self::Capsule { radius, length } => Self::Capsule {
                radius: radius * f(),
                length: length * f(),
            },
        }
    }

    /// One area-uniform surface point and its outward unit normal.
    pub fn sample_surface(&self, rng: &mut impl Rng) -> (Point3, Point3) {
        match *self {
            Self::Sphere { radius } => {
                let u = unit_vector(rng);
                (u * radius, u)
            }
            Self::Box { half_extents: h } => {
                let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let axis = WeightedIndex::new(areas).expect("positive areas").sample(rng);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let mut p = Point3::new(
                    rng.random_range(-h[0]..=h[0]),
                    rng.random_range(-h[1]..=h[1]),
                    rng.random_range(-h[2]..=h[2]),
                );
                p[axis] = sign * h[axis];
                let mut n = Point3::zeros();
                n[axis] = sign;
                (p, n)
            }
            Self::Cylinder { radius, height } => {
                let side = 2.0 * PI * radius * height;
                let cap = PI * radius * radius;
                let which = WeightedIndex::new([side, cap, cap]).expect("positive areas").sample(rng);
                if which == 0 {
                    let t = rng.random_range(0.0..2.0 * PI);
                    let z = rng.random_range(-height / 2.0..=height / 2.0);
                    (Point3::new(radius * t.cos(), radius * t.sin(), z), Point3::new(t.cos(), t.sin(), 0.0))
                } else {
                    let sign = if which == 1 { 1.0 } else { -1.0 };
                    let r = radius * rng.random::<f64>().sqrt();
                    let t = rng.random_range(0.0..2.0 * PI);
                    (Point3::new(r * t.cos(), r * t.sin(), sign * height / 2.0), Point3::new(0.0, 0.0, sign))
                }
            }
            Self::Torus { major, minor } => loop {
                let theta = rng.random_range(0.0..2.0 * PI);
                let phi = rng.random_range(0.0..2.0 * PI);
                // Area element is proportional to the distance from the axis.
                if rng.random::<f64>() * (major + minor) <= major + minor * phi.cos() {
                    let ring = major + minor * phi.cos();
                    let p = Point3::new(ring * theta.cos(), ring * theta.sin(), minor * phi.sin());
                    let n = Point3::new(phi.cos() * theta.cos(), phi.cos() * theta.sin(), phi.sin());
                    break (p, n);
                }
            },
            Self::Capsule { radius, length } => {
                let side = 2.0 * PI * radius * length;
                let caps = 4.0 * PI * radius * radius;
                if rng.random::<f64>() * (side + caps) < side {
                    let t = rng.random_range(0.0..2.0 * PI);
                    let z = rng.random_range(-length / 2.0..=length / 2.0);
                    (Point3::new(radius * t.cos(), radius * t.sin(), z), Point3::new(t.cos(), t.sin(), 0.0))
                } else {
                    let u = unit_vector(rng);
                    let offset = if u.z >= 0.0 { length / 2.0 } else { -length / 2.0 };
                    (u * radius + Point3::new(0.0, 0.0, offset), u)
                }
            }
        }
    }
}

fn unit_vector(rng: &mut impl Rng) -> Point3 {
    loop {
        let v = Point3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

pub const DEFAULT_NOISE: f64 = 0.002;

/// `n_points` surface samples displaced along the normal by Gaussian noise
/// with standard deviation `noise * bounding_radius`.
pub fn synth_category(shape: &Shape, n_points: usize, noise: f64, rng: &mut impl Rng) -> Result<PointCloud, DatasetError> {
    shape.validate()?;
    if n_points < 100 {
        return Err(DatasetError::Argument(format!("need at least 100 points, got {n_points}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(DatasetError::Argument(format!("noise must be non-negative, got {noise}")));
    }
    let sigma = noise * shape.bounding_radius();
    let points = (0..n_points)
        .map(|_| {
            let (p, n) = shape.sample_surface(rng);
            let e: f64 = rng.sample(StandardNormal);
            p + n * (sigma * e)
        })
        .collect();
    Ok(PointCloud::new(points)?.with_category(shape.kind().name()))
}
