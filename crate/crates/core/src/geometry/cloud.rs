use nalgebra::Vector3;

use super::GeometryError;

pub type Point3 = Vector3<f64>;

/// An ordered set of 3-D points with optional per-point ground truth
/// (`true` = anomalous).
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    labels: Option<Vec<bool>>,
    pub category: Option<String>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self, GeometryError> {
        Self::with_labels(points, None)
    }

    pub fn with_labels(points: Vec<Point3>, labels: Option<Vec<bool>>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::Degenerate("point cloud is empty".into()));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::Argument(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(GeometryError::Argument(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.len()
                )));
            }
        }
        Ok(Self {
            points,
            labels,
            category: None,
        })
    }

    pub fn from_slice(points: &[[f64; 3]]) -> Result<Self, GeometryError> {
        Self::new(points.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect())
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = Some(category.into());
        self
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point3 {
        centroid(&self.points)
    }

    /// Same labels and category, new coordinates.
    pub fn map_points(&self, f: impl Fn(&Point3) -> Point3) -> Result<Self, GeometryError> {
        let mut out = Self::with_labels(self.points.iter().map(f).collect(), self.labels.clone())?;
        out.category = self.category.clone();
        Ok(out)
    }

    pub fn into_parts(self) -> (Vec<Point3>, Option<Vec<bool>>) {
        (self.points, self.labels)
    }
}

pub fn centroid(points: &[Point3]) -> Point3 {
    let sum = points.iter().fold(Point3::zeros(), |acc, p| acc + p);
    sum / points.len() as f64
}
