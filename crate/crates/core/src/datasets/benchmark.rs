//! Multi-category synthetic benchmark: generation, on-disk layout and
//! loading.
//!
//! Layout: `root/<category>/train/*.ply`, `root/<category>/test/*.ply` and
//! `root/manifest.json`. Test files carry a `gt` vertex label.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::anomaly::{inject_anomaly, AnomalyDescriptor, AnomalyKind};
use super::ply::{load_ply, save_ply, PlyEncoding};
use super::synth::{synth_category, Shape, ShapeKind, DEFAULT_NOISE};
use super::{CategoryData, Dataset, DatasetError, Sample, Split};

pub const GENERATOR_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySpec {
    pub name: String,
    pub shape: Shape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub categories: Vec<CategorySpec>,
    pub points_per_cloud: usize,
    pub train_per_category: usize,
    pub test_normal_per_category: usize,
    pub test_anomalous_per_category: usize,
    /// Surface noise as a fraction of the bounding radius.
    pub noise: f64,
    /// Relative per-sample perturbation of every shape dimension.
    pub shape_jitter: f64,
    pub anomaly_kinds: Vec<AnomalyKind>,
    /// Displacement range as a fraction of the bounding radius.
    pub magnitude: [f64; 2],
    /// Target share of the surface covered by a defect; the extent is the
    /// radius of a flat disc with that area.
    pub area_fraction: [f64; 2],
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            categories: [ShapeKind::Sphere, ShapeKind::Box, ShapeKind::Cylinder, ShapeKind::Torus]
                .into_iter()
                .map(|k| CategorySpec {
                    name: k.name().to_string(),
                    shape: k.default_shape(),
                })
                .collect(),
            points_per_cloud: 2048,
            train_per_category: 16,
            test_normal_per_category: 10,
            test_anomalous_per_category: 10,
            noise: DEFAULT_NOISE,
            shape_jitter: 0.02,
            anomaly_kinds: AnomalyKind::ALL.to_vec(),
            magnitude: [0.10, 0.20],
            area_fraction: [0.025, 0.05],
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let arg = |m: String| Err(DatasetError::Argument(m));
        if self.categories.len() < 2 {
            return arg(format!("need at least 2 categories, got {}", self.categories.len()));
        }
        for (i, c) in self.categories.iter().enumerate() {
            if c.name.is_empty() || !c.name.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-') {
                return arg(format!("category name {:?} must be non-empty [A-Za-z0-9_-]", c.name));
            }
            if self.categories[..i].iter().any(|o| o.name == c.name) {
                return arg(format!("duplicate category {:?}", c.name));
            }
            c.shape.validate()?;
        }
        if self.train_per_category == 0 || self.test_normal_per_category == 0 || self.test_anomalous_per_category == 0 {
            return arg("every split needs at least one sample".into());
        }
        if self.anomaly_kinds.is_empty() {
            return arg("anomaly_kinds is empty".into());
        }
        for (name, [lo, hi]) in [("magnitude", self.magnitude), ("area_fraction", self.area_fraction)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return arg(format!("{name} range [{lo}, {hi}] is invalid"));
            }
        }
        if !(0.0..0.5).contains(&self.shape_jitter) {
            return arg(format!("shape_jitter must be in [0, 0.5), got {}", self.shape_jitter));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub file: String,
    pub category: String,
    pub split: Split,
    pub anomalous: bool,
    pub n_points: usize,
    pub shape: Shape,
    pub anomaly: Option<AnomalyDescriptor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub version: u32,
    pub seed: u64,
    pub config: BenchmarkConfig,
    pub samples: Vec<SampleRecord>,
}

/// Independent generator for one (category, slot) pair.
fn stream(seed: u64, category: usize, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((category as u64) << 32) | slot);
    rng
}

struct Job {
    category: usize,
    split: Split,
    index: usize,
    anomalous: bool,
}

const TEST_NORMAL_SLOT: u64 = 1 << 20;
const TEST_ANOMALOUS_SLOT: u64 = 2 << 20;

/// Generates every sample in memory. The result depends only on `config`
/// and `seed`.
pub fn build_benchmark(config: &BenchmarkConfig, seed: u64) -> Result<Dataset, DatasetError> {
    config.validate()?;
    let mut jobs = Vec::new();
    for c in 0..config.categories.len() {
        jobs.extend((0..config.train_per_category).map(|index| Job {
            category: c,
            split: Split::Train,
            index,
            anomalous: false,
        }));
        jobs.extend((0..config.test_normal_per_category).map(|index| Job {
            category: c,
            split: Split::Test,
            index,
            anomalous: false,
        }));
        jobs.extend((0..config.test_anomalous_per_category).map(|index| Job {
            category: c,
            split: Split::Test,
            index,
            anomalous: true,
        }));
    }
    let generated: Vec<(Sample, SampleRecord)> = jobs
        .par_iter()
        .map(|job| generate(config, seed, job))
        .collect::<Result<_, _>>()?;

    let mut categories: Vec<CategoryData> = config
        .categories
        .iter()
        .map(|c| CategoryData {
            name: c.name.clone(),
            train: Vec::new(),
            test: Vec::new(),
        })
        .collect();
    let mut records = Vec::with_capacity(generated.len());
    for ((sample, record), job) in generated.into_iter().zip(&jobs) {
        let cat = &mut categories[job.category];
        match job.split {
            Split::Train => cat.train.push(sample),
            Split::Test => cat.test.push(sample),
        }
        records.push(record);
    }
    Ok(Dataset {
        categories,
        manifest: Some(Manifest {
            generator: "pcad-synth".into(),
            version: GENERATOR_VERSION,
            seed,
            config: config.clone(),
            samples: records,
        }),
    })
}

fn generate(config: &BenchmarkConfig, seed: u64, job: &Job) -> Result<(Sample, SampleRecord), DatasetError> {
    let spec = &config.categories[job.category];
    let slot = match (job.split, job.anomalous) {
        (Split::Train, _) => 0,
        (Split::Test, false) => TEST_NORMAL_SLOT,
        (Split::Test, true) => TEST_ANOMALOUS_SLOT,
    } + job.index as u64;
    let mut rng = stream(seed, job.category, slot);
    let shape = spec.shape.jittered(config.shape_jitter, &mut rng);
    let mut cloud = synth_category(&shape, config.points_per_cloud, config.noise, &mut rng)?;
    cloud.category = Some(spec.name.clone());
    let (cloud, anomaly, file) = match (job.split, job.anomalous) {
        (Split::Train, _) => (cloud, None, format!("train/{:03}.ply", job.index)),
        (Split::Test, false) => {
            let n = cloud.len();
            let (points, _) = cloud.into_parts();
            let mut labeled = crate::geometry::PointCloud::with_labels(points, Some(vec![false; n]))?;
            labeled.category = Some(spec.name.clone());
            (labeled, None, format!("test/good_{:03}.ply", job.index))
        }
        (Split::Test, true) => {
            let kind = config.anomaly_kinds[job.index % config.anomaly_kinds.len()];
            let r = shape.bounding_radius();
            let magnitude = r * rng.random_range(config.magnitude[0]..=config.magnitude[1]);
            let area = shape.surface_area() * rng.random_range(config.area_fraction[0]..=config.area_fraction[1]);
            let extent = (area / std::f64::consts::PI).sqrt();
            let injected = inject_anomaly(&cloud, kind, magnitude, extent, &mut rng)?;
            let file = format!("test/{}_{:03}.ply", kind.name(), job.index);
            (injected.cloud, injected.descriptor, file)
        }
    };
    let record = SampleRecord {
        file: format!("{}/{file}", spec.name),
        category: spec.name.clone(),
        split: job.split,
        anomalous: job.anomalous,
        n_points: cloud.len(),
        shape,
        anomaly,
    };
    let sample = Sample::new(cloud, job.split, record.file.clone())?;
    Ok((sample, record))
}

/// Writes the dataset below `root` (created if missing).
pub fn write_dataset(dataset: &Dataset, root: &Path) -> Result<(), DatasetError> {
    for cat in &dataset.categories {
        for split in ["train", "test"] {
            let dir = root.join(&cat.name).join(split);
            fs::create_dir_all(&dir).map_err(|e| DatasetError::io(&dir, e))?;
        }
        for sample in cat.train.iter().chain(&cat.test) {
            let path = root.join(&sample.source);
            save_ply(&path, &sample.cloud, None, PlyEncoding::BinaryLittleEndian)?;
        }
    }
    if let Some(m) = &dataset.manifest {
        let path = root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(m).map_err(|e| DatasetError::Generation(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| DatasetError::io(&path, e))?;
    }
    Ok(())
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| DatasetError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| DatasetError::io(dir, err)))
        .collect::<Result<_, _>>()?;
    out.sort();
    Ok(out)
}

/// Loads a dataset laid out as `root/<category>/{train,test}/*.ply`.
/// Categories and files are read in lexicographic order.
pub fn load_dataset(root: &Path) -> Result<Dataset, DatasetError> {
    let manifest = {
        let path = root.join(MANIFEST_FILE);
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| DatasetError::io(&path, e))?;
            Some(serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
                location: path.display().to_string(),
                message: e.to_string(),
            })?)
        } else {
            None
        }
    };
    let mut categories = Vec::new();
    for dir in sorted_entries(root)? {
        if !dir.is_dir() {
            continue;
        }
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let mut cat = CategoryData {
            name: name.clone(),
            train: Vec::new(),
            test: Vec::new(),
        };
        for (split, sub) in [(Split::Train, "train"), (Split::Test, "test")] {
            let sub_dir = dir.join(sub);
            if !sub_dir.is_dir() {
                continue;
            }
            for path in sorted_entries(&sub_dir)? {
                if path.extension().and_then(|e| e.to_str()) != Some("ply") {
                    continue;
                }
                let mut cloud = load_ply(&path)?;
                cloud.category = Some(name.clone());
                let source = format!("{name}/{sub}/{}", path.file_name().and_then(|n| n.to_str()).unwrap_or_default());
                let sample = Sample::new(cloud, split, source).map_err(|e| e.in_file(&path))?;
                match split {
                    Split::Train => cat.train.push(sample),
                    Split::Test => cat.test.push(sample),
                }
            }
        }
        if !cat.train.is_empty() || !cat.test.is_empty() {
            categories.push(cat);
        }
    }
    if categories.is_empty() {
        return Err(DatasetError::Argument(format!("no categories found under {}", root.display())));
    }
    Ok(Dataset { categories, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BenchmarkConfig {
        BenchmarkConfig {
            points_per_cloud: 600,
            train_per_category: 2,
            test_normal_per_category: 2,
            test_anomalous_per_category: 4,
            ..Default::default()
        }
    }

    #[test]
    fn counts_labels_and_purity() {
        let d = build_benchmark(&tiny(), 3).unwrap();
        assert_eq!(d.categories.len(), 4);
        for cat in &d.categories {
            assert_eq!(cat.train.len(), 2);
            assert_eq!(cat.test.len(), 6);
            assert!(cat.train.iter().all(|s| !s.is_anomalous && s.anomaly_mask().is_none()));
            for s in &cat.test {
                let mask = s.anomaly_mask().unwrap();
                assert_eq!(s.is_anomalous, mask.iter().any(|&m| m));
                if s.is_anomalous {
                    let f = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
                    assert!((0.01..=0.10).contains(&f));
                }
            }
            assert_eq!(cat.test.iter().filter(|s| s.is_anomalous).count(), 4);
        }
    }

    #[test]
    fn same_seed_same_dataset_and_different_seed_differs() {
        let a = build_benchmark(&tiny(), 11).unwrap();
        let b = build_benchmark(&tiny(), 11).unwrap();
        assert_eq!(a, b);
        let c = build_benchmark(&tiny(), 12).unwrap();
        assert_ne!(a.categories[0].train[0].cloud, c.categories[0].train[0].cloud);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = tiny();
        c.categories.truncate(1);
        assert!(build_benchmark(&c, 0).is_err());
        let mut c = tiny();
        c.categories[1].name = c.categories[0].name.clone();
        assert!(build_benchmark(&c, 0).is_err());
        let mut c = tiny();
        c.magnitude = [0.2, 0.1];
        assert!(build_benchmark(&c, 0).is_err());
    }

    #[test]
    fn disk_round_trip() {
        let d = build_benchmark(&tiny(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&d, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.manifest, d.manifest);
        let names: Vec<&str> = loaded.categories.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["box", "cylinder", "sphere", "torus"]);
        for cat in &loaded.categories {
            let orig = d.categories.iter().find(|c| c.name == cat.name).unwrap();
            assert_eq!(cat.train, orig.train);
            let mut expected = orig.test.clone();
            expected.sort_by(|a, b| a.source.cmp(&b.source));
            assert_eq!(cat.test, expected);
        }
    }
}
