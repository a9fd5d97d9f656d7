use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{auroc, result_from_errors, token_errors, AnomalyResult, Normalization, PipelineError};
use crate::datasets::Dataset;
use crate::model::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub category: String,
    pub o_auroc: f64,
    pub p_auroc: f64,
    pub n_samples: usize,
    pub n_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub o_auroc: f64,
    pub p_auroc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub category: String,
    pub source: String,
    pub is_anomalous: bool,
    pub result: AnomalyResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub categories: Vec<CategoryMetrics>,
    pub mean: MeanMetrics,
    pub samples: Vec<ScoredSample>,
    /// Token-error range used to normalize every test sample.
    pub error_range: [f64; 2],
}

/// Scores every test sample and computes object- and point-level AUROC per
/// category. Token errors are min-max normalized over the whole test set so
/// object scores are comparable across samples.
pub fn evaluate(dataset: &Dataset, model: &Model) -> Result<Evaluation, PipelineError> {
    let tests: Vec<(&str, &crate::datasets::Sample)> = dataset
        .categories
        .iter()
        .flat_map(|c| c.test.iter().map(move |s| (c.name.as_str(), s)))
        .collect();
    if tests.is_empty() {
        return Err(PipelineError::Argument("dataset has no test samples".into()));
    }
    let raw = tests
        .par_iter()
        .map(|(_, s)| token_errors(&s.cloud, model))
        .collect::<Result<Vec<_>, _>>()?;
    let (lo, hi) = raw
        .iter()
        .flat_map(|(_, e)| e.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let norm = Normalization::Range { min: lo, max: hi };
    let samples: Vec<ScoredSample> = tests
        .iter()
        .zip(raw)
        .map(|((cat, s), (prepared, errors))| ScoredSample {
            category: cat.to_string(),
            source: s.source.clone(),
            is_anomalous: s.is_anomalous,
            result: result_from_errors(&prepared, errors, norm, Some(cat.to_string())),
        })
        .collect();

    let (categories, mean) = summarize(dataset, &samples)?;
    Ok(Evaluation {
        categories,
        mean,
        samples,
        error_range: [lo, hi],
    })
}

/// Per-category object- and point-level AUROC for already scored test
/// samples. `samples` are matched to the dataset by category and source.
pub fn summarize(dataset: &Dataset, samples: &[ScoredSample]) -> Result<(Vec<CategoryMetrics>, MeanMetrics), PipelineError> {
    let mut categories = Vec::new();
    for cat in &dataset.categories {
        let mut object_scores = Vec::new();
        let mut object_labels = Vec::new();
        let mut point_scores = Vec::new();
        let mut point_labels = Vec::new();
        for t in &cat.test {
            let s = samples
                .iter()
                .find(|s| s.category == cat.name && s.source == t.source)
                .ok_or_else(|| PipelineError::Argument(format!("no score for {}", t.source)))?;
            let mask = t.anomaly_mask().expect("test samples are labeled");
            if s.result.point_scores.len() != mask.len() {
                return Err(PipelineError::Argument(format!(
                    "{}: {} scores for {} points",
                    t.source,
                    s.result.point_scores.len(),
                    mask.len()
                )));
            }
            object_scores.push(s.result.object_score);
            object_labels.push(t.is_anomalous);
            point_scores.extend_from_slice(&s.result.point_scores);
            point_labels.extend_from_slice(mask);
        }
        if cat.test.is_empty() {
            continue;
        }
        let missing = |e: PipelineError| match e {
            PipelineError::UndefinedMetric(m) => PipelineError::MissingClass {
                category: cat.name.clone(),
                detail: m,
            },
            other => other,
        };
        categories.push(CategoryMetrics {
            category: cat.name.clone(),
            o_auroc: auroc(&object_scores, &object_labels).map_err(missing)?,
            p_auroc: auroc(&point_scores, &point_labels).map_err(missing)?,
            n_samples: cat.test.len(),
            n_points: point_scores.len(),
        });
    }
    if categories.is_empty() {
        return Err(PipelineError::Argument("dataset has no test samples".into()));
    }
    let k = categories.len() as f64;
    let mean = MeanMetrics {
        o_auroc: categories.iter().map(|c| c.o_auroc).sum::<f64>() / k,
        p_auroc: categories.iter().map(|c| c.p_auroc).sum::<f64>() / k,
    };
    Ok((categories, mean))
}

/// Machine-readable evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_id: String,
    pub seed: u64,
    pub categories: Vec<CategoryMetrics>,
    pub mean: MeanMetrics,
    pub config: serde_json::Value,
}

impl EvalReport {
    /// The run id is a digest of the configuration echo and seed, so equal
    /// inputs give equal ids.
    pub fn new(evaluation: &Evaluation, config: serde_json::Value, seed: u64) -> Self {
        Self {
            run_id: run_id(&config, seed),
            seed,
            categories: evaluation.categories.clone(),
            mean: evaluation.mean.clone(),
            config,
        }
    }
}

/// First 12 hex digits of the SHA-256 of the compact config JSON and seed.
pub fn run_id(config: &serde_json::Value, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(config.to_string().as_bytes());
    h.update(seed.to_le_bytes());
    let digest = h.finalize();
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{build_benchmark, BenchmarkConfig};
    use crate::model::ModelConfig;

    fn small_benchmark() -> Dataset {
        let mut config = BenchmarkConfig {
            points_per_cloud: 400,
            train_per_category: 1,
            test_normal_per_category: 3,
            test_anomalous_per_category: 3,
            ..BenchmarkConfig::default()
        };
        config.categories.truncate(2);
        build_benchmark(&config, 5).unwrap()
    }

    fn fixture(dataset: &Dataset, score: impl Fn(bool) -> f64) -> Vec<ScoredSample> {
        dataset
            .categories
            .iter()
            .flat_map(|c| {
                c.test.iter().map(|t| {
                    let point_scores: Vec<f64> = t.anomaly_mask().unwrap().iter().map(|&m| score(m)).collect();
                    ScoredSample {
                        category: c.name.clone(),
                        source: t.source.clone(),
                        is_anomalous: t.is_anomalous,
                        result: AnomalyResult {
                            object_score: point_scores.iter().cloned().fold(0.0, f64::max),
                            point_scores,
                            token_errors: vec![],
                            category: Some(c.name.clone()),
                        },
                    }
                })
            })
            .collect()
    }

    #[test]
    fn perfect_scorer_gets_one_everywhere() {
        let data = small_benchmark();
        let (cats, mean) = summarize(&data, &fixture(&data, |m| if m { 1.0 } else { 0.0 })).unwrap();
        assert_eq!(cats.len(), 2);
        for c in &cats {
            assert_eq!((c.o_auroc, c.p_auroc), (1.0, 1.0));
            assert_eq!(c.n_samples, 6);
        }
        assert_eq!((mean.o_auroc, mean.p_auroc), (1.0, 1.0));
    }

    #[test]
    fn constant_scorer_is_chance_and_mean_is_arithmetic() {
        let data = small_benchmark();
        let (cats, mean) = summarize(&data, &fixture(&data, |_| 0.3)).unwrap();
        assert!(cats.iter().all(|c| c.o_auroc == 0.5 && c.p_auroc == 0.5));
        let avg = cats.iter().map(|c| c.p_auroc).sum::<f64>() / cats.len() as f64;
        assert!((mean.p_auroc - avg).abs() <= 1e-12);
    }

    #[test]
    fn category_without_anomalies_is_reported() {
        let mut data = small_benchmark();
        data.categories[1].test.retain(|t| !t.is_anomalous);
        let scored = fixture(&data, |m| m as u8 as f64);
        match summarize(&data, &scored) {
            Err(PipelineError::MissingClass { category, .. }) => assert_eq!(category, data.categories[1].name),
            other => panic!("expected a missing-class error, got {other:?}"),
        }
    }

    #[test]
    fn evaluate_is_deterministic_and_consistent() {
        let data = small_benchmark();
        let config = ModelConfig {
            groups: 16,
            group_size: 16,
            channels: 8,
            heads: 2,
            blocks: 1,
            ..ModelConfig::default()
        };
        let model = Model::new(config, 1).unwrap();
        let a = evaluate(&data, &model).unwrap();
        let b = evaluate(&data, &model).unwrap();
        assert_eq!(a, b);
        let [lo, hi] = a.error_range;
        for s in &a.samples {
            let r = &s.result;
            assert!(r.point_scores.iter().all(|p| (0.0..=1.0).contains(p)));
            assert_eq!(r.object_score, r.point_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            assert!(r.token_errors.iter().all(|&e| lo <= e && e <= hi));
        }
        assert!(a.samples.iter().any(|s| s.result.object_score == 1.0));
    }

    #[test]
    fn run_id_tracks_config_and_seed() {
        let c = serde_json::json!({"model": {"blocks": 4}});
        let id = run_id(&c, 1);
        assert_eq!(id.len(), 12);
        assert_eq!(id, run_id(&c, 1));
        assert_ne!(id, run_id(&c, 2));
        assert_ne!(id, run_id(&serde_json::json!({"model": {"blocks": 2}}), 1));
    }
}
