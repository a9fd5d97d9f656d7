//! Point-cloud file formats, the synthetic benchmark generator and the
//! on-disk dataset layout.

mod anomaly;
mod benchmark;
mod ply;
mod synth;
mod xyz;

pub use anomaly::{inject_anomaly, AnomalyDescriptor, AnomalyKind, Injected, MAX_ANOMALY_FRACTION, MIN_ANOMALY_FRACTION};
pub use benchmark::{
    build_benchmark, load_dataset, write_dataset, BenchmarkConfig, CategorySpec, Manifest, SampleRecord, GENERATOR_VERSION,
    MANIFEST_FILE,
};
pub use ply::{load_ply, parse_ply, save_ply, write_ply, PlyEncoding};
pub use synth::{synth_category, Shape, ShapeKind, DEFAULT_NOISE};
pub use xyz::{load_xyz, parse_xyz, write_xyz};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, PointCloud};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("argument error: {0}")]
    Argument(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Prefixes parse locations with the file they came from.
    pub(crate) fn in_file(self, path: &Path) -> Self {
        match self {
            Self::Parse { location, message } => Self::Parse {
                location: format!("{}, {location}", path.display()),
                message,
            },
            Self::Argument(m) => Self::Argument(format!("{}: {m}", path.display())),
            other => other,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One cloud with its split. Test clouds carry per-point labels (the
/// anomaly mask); training clouds must be free of anomalies.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub cloud: PointCloud,
    pub split: Split,
    pub is_anomalous: bool,
    /// File path or generator descriptor.
    pub source: String,
}

impl Sample {
    pub fn new(mut cloud: PointCloud, split: Split, source: String) -> Result<Self, DatasetError> {
        let is_anomalous = cloud.labels().is_some_and(|l| l.iter().any(|&b| b));
        match split {
            Split::Train if is_anomalous => {
                return Err(DatasetError::Argument(format!("training sample {source} contains anomalous points")));
            }
            Split::Train => {
                let category = cloud.category.take();
                let (points, _) = cloud.into_parts();
                cloud = PointCloud::new(points)?;
                cloud.category = category;
            }
            Split::Test if cloud.labels().is_none() => {
                return Err(DatasetError::Argument(format!("test sample {source} has no gt labels")));
            }
            Split::Test => {}
        }
        Ok(Self {
            cloud,
            split,
            is_anomalous,
            source,
        })
    }

    pub fn anomaly_mask(&self) -> Option<&[bool]> {
        match self.split {
            Split::Train => None,
            Split::Test => self.cloud.labels(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryData {
    pub name: String,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub categories: Vec<CategoryData>,
    pub manifest: Option<Manifest>,
}

impl Dataset {
    pub fn category(&self, name: &str) -> Option<&CategoryData> {
        self.categories.iter().find(|c| c.name == name)
    }

    pub fn train_samples(&self) -> impl Iterator<Item = &Sample> {
        self.categories.iter().flat_map(|c| &c.train)
    }
}
