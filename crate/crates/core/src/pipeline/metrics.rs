use super::PipelineError;

/// Area under the ROC curve via the Mann-Whitney statistic; tied scores
/// count one half. `labels[i]` marks positives (anomalies).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, PipelineError> {
    if scores.len() != labels.len() {
        return Err(PipelineError::Argument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(PipelineError::Argument("scores contain NaN".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(PipelineError::UndefinedMetric(format!(
            "AUROC needs both classes, got {positives} positive and {negatives} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + j + 1) as f64 / 2.0;
        let pos_in_run = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum += mid_rank * pos_in_run as f64;
        i = j;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn hand_cases() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(auroc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(PipelineError::UndefinedMetric(_))));
        assert!(auroc(&[0.1], &[true, false]).is_err());
    }

    proptest! {
        #[test]
        fn matches_pairwise_count_with_heavy_ties(
            data in prop::collection::vec((0u8..8, any::<bool>()), 2..1000),
        ) {
            let scores: Vec<f64> = data.iter().map(|&(s, _)| s as f64 / 7.0).collect();
            let labels: Vec<bool> = data.iter().map(|&(_, l)| l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let got = auroc(&scores, &labels).unwrap();
            prop_assert!((got - pairwise(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn invariant_under_increasing_maps(
            data in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..300),
        ) {
            let scores: Vec<f64> = data.iter().map(|&(s, _)| s).collect();
            let labels: Vec<bool> = data.iter().map(|&(_, l)| l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let base = auroc(&scores, &labels).unwrap();
            let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            let affine: Vec<f64> = scores.iter().map(|s| 3.0 * s + 7.0).collect();
            prop_assert!((auroc(&exp, &labels).unwrap() - base).abs() < 1e-12);
            prop_assert!((auroc(&affine, &labels).unwrap() - base).abs() < 1e-12);
        }
    }
}
