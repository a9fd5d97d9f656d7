use serde::{Deserialize, Serialize};

use super::{canonicalize, PipelineError};
use crate::geometry::{farthest_point_sample, GeometryProfile, Point3, PointCloud};
use crate::model::{Model, ModelConfig};
use crate::tokenizer::{group_points, Grouping};

/// A canonicalized cloud with its groups and, for training, the per-group
/// geometric variation that drives mask selection.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub canonical: PointCloud,
    pub grouping: Grouping,
    pub var_geom: Option<Vec<f64>>,
}

pub fn prepare(cloud: &PointCloud, config: &ModelConfig, with_variation: bool) -> Result<Prepared, PipelineError> {
    let n = cloud.len();
    if config.groups > n || config.group_size > n {
        return Err(PipelineError::Argument(format!(
            "cloud has {n} points but the model needs {} groups of {}",
            config.groups, config.group_size
        )));
    }
    let canonical = canonicalize(cloud)?;
    let centers = farthest_point_sample(canonical.points(), config.groups)?;
    let var_geom = if with_variation {
        let profile = GeometryProfile::from_centers(canonical.points(), centers.clone(), config.eta, config.variation_weights())?;
        Some(profile.var_geom)
    } else {
        None
    };
    let grouping = group_points(canonical.points(), &centers, config.group_size)?;
    Ok(Prepared {
        canonical,
        grouping,
        var_geom,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyResult {
    pub point_scores: Vec<f64>,
    pub object_score: f64,
    pub token_errors: Vec<f64>,
    pub category: Option<String>,
}

/// How raw token errors map to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Normalization {
    /// Min-max over the tokens of the scored cloud.
    PerSample,
    /// Min-max over a fixed range, such as the errors of a whole test set.
    Range { min: f64, max: f64 },
}

/// Min-max normalization; a zero range yields all zeros.
pub fn min_max_normalize(values: &[f64], norm: Normalization) -> Vec<f64> {
    let (lo, hi) = match norm {
        Normalization::PerSample => values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        Normalization::Range { min, max } => (min, max),
    };
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
}

/// Spreads token scores onto points: each point takes the mean score of the
/// groups containing it; points in no group take the score of the nearest
/// group center (lowest index on ties).
pub fn point_scores_from_tokens(token_scores: &[f64], groups: &[Vec<usize>], points: &[Point3], centers: &[Point3]) -> Vec<f64> {
    let n = points.len();
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (grp, &s) in groups.iter().zip(token_scores) {
        for &i in grp {
            sum[i] += s;
            count[i] += 1;
        }
    }
    (0..n)
        .map(|i| {
            let v = if count[i] > 0 {
                sum[i] / count[i] as f64
            } else {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (j, c) in centers.iter().enumerate() {
                    let d = (points[i] - c).norm_squared();
                    if d < best_d {
                        best_d = d;
                        best = j;
                    }
                }
                token_scores[best]
            };
            v.clamp(0.0, 1.0)
        })
        .collect()
}

/// Per-token reconstruction errors of `cloud` in evaluation mode.
pub fn token_errors(cloud: &PointCloud, model: &Model) -> Result<(Prepared, Vec<f64>), PipelineError> {
    let prepared = prepare(cloud, &model.config, false)?;
    let (_, errors) = model.token_errors(&prepared.grouping)?;
    Ok((prepared, errors))
}

pub fn result_from_errors(prepared: &Prepared, errors: Vec<f64>, norm: Normalization, category: Option<String>) -> AnomalyResult {
    let token_scores = min_max_normalize(&errors, norm);
    let point_scores = point_scores_from_tokens(
        &token_scores,
        &prepared.grouping.groups,
        prepared.canonical.points(),
        &prepared.grouping.centers,
    );
    let object_score = point_scores.iter().copied().fold(0.0, f64::max);
    AnomalyResult {
        point_scores,
        object_score,
        token_errors: errors,
        category,
    }
}

/// Scores one cloud with per-sample normalization.
pub fn score(cloud: &PointCloud, model: &Model) -> Result<AnomalyResult, PipelineError> {
    score_with(cloud, model, Normalization::PerSample)
}

pub fn score_with(cloud: &PointCloud, model: &Model, norm: Normalization) -> Result<AnomalyResult, PipelineError> {
    let (prepared, errors) = token_errors(cloud, model)?;
    Ok(result_from_errors(&prepared, errors, norm, cloud.category.clone()))
}

/// Linear blue (0) to red (1) vertex color.
pub fn heat_color(score: f64) -> [u8; 3] {
    let s = score.clamp(0.0, 1.0);
    [(255.0 * s).round() as u8, 0, (255.0 * (1.0 - s)).round() as u8]
}
