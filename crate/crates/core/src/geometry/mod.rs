//! Point-level geometric analysis: farthest-point sampling, adaptive radius
//! neighborhoods, covariance eigen-analysis (normals and curvature), and the
//! geometric-variation index used to pick attention masks.

mod cloud;
pub mod eigen;
mod fps;
mod neighbors;
mod profile;

pub use cloud::{centroid, Point3, PointCloud};
pub use fps::{farthest_point_sample, farthest_point_sample_from};
pub use neighbors::{adaptive_radius, knn, nearest_other_distances, radius_neighborhoods, Grid};
pub use profile::{
    axis_angle, geometric_variation, local_covariance, normal_and_curvature, GeometryProfile, VariationWeights,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}
