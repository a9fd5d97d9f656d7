use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Which key tokens are hidden from attention during one forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub masked: Vec<bool>,
    /// Tokens in the upper half of the variation ranking, ascending.
    pub high_pool: Vec<usize>,
    /// Tokens in the lower half, ascending.
    pub low_pool: Vec<usize>,
    pub rho: f64,
    pub seed: u64,
}

impl MaskPlan {
    /// A plan that masks nothing.
    pub fn none(g: usize) -> Self {
        Self {
            masked: vec![false; g],
            high_pool: Vec::new(),
            low_pool: Vec::new(),
            rho: 0.0,
            seed: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }
}

/// Masks `round(rho * g)` tokens: half (rounded up) drawn uniformly from the
/// high-variation half of the tokens, the rest from the low half. Ranking
/// ties resolve by index, with the lower index ranking lower.
pub fn select_mask(var_geom: &[f64], rho: f64, seed: u64) -> Result<MaskPlan, ModelError> {
    if !(0.0..1.0).contains(&rho) {
        return Err(ModelError::Argument(format!("mask ratio must be in [0, 1), got {rho}")));
    }
    if let Some(i) = var_geom.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::Argument(format!("variation score {i} is not finite")));
    }
    let g = var_geom.len();
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| var_geom[a].total_cmp(&var_geom[b]).then(a.cmp(&b)));
    let mut low_pool = order[..g / 2].to_vec();
    let mut high_pool = order[g / 2..].to_vec();
    low_pool.sort_unstable();
    high_pool.sort_unstable();

    let total = (rho * g as f64).round() as usize;
    let from_high = total.div_ceil(2);
    let from_low = total / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masked = vec![false; g];
    for i in sample(&mut rng, high_pool.len(), from_high) {
        masked[high_pool[i]] = true;
    }
    for i in sample(&mut rng, low_pool.len(), from_low) {
        masked[low_pool[i]] = true;
    }
    Ok(MaskPlan {
        masked,
        high_pool,
        low_pool,
        rho,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_ratio_masks_nothing() {
        let plan = select_mask(&[3.0, 1.0, 2.0, 0.5], 0.0, 9).unwrap();
        assert_eq!(plan.count(), 0);
        assert_eq!(plan.high_pool, vec![0, 2]);
        assert_eq!(plan.low_pool, vec![1, 3]);
    }

    #[test]
    fn ten_tokens_split_two_and_two() {
        let var: Vec<f64> = (0..10).map(|i| ((i * 7) % 10) as f64).collect();
        for seed in 0..50 {
            let plan = select_mask(&var, 0.4, seed).unwrap();
            assert_eq!(plan.count(), 4);
            let top: Vec<usize> = (0..10).filter(|&i| var[i] >= 5.0).collect();
            assert_eq!(plan.high_pool, top);
            assert_eq!(plan.high_pool.iter().filter(|&&i| plan.masked[i]).count(), 2);
            assert_eq!(plan.low_pool.iter().filter(|&&i| plan.masked[i]).count(), 2);
        }
    }

    #[test]
    fn ties_split_by_index() {
        let plan = select_mask(&[1.0; 6], 0.0, 0).unwrap();
        assert_eq!(plan.low_pool, vec![0, 1, 2]);
        assert_eq!(plan.high_pool, vec![3, 4, 5]);
    }

    #[test]
    fn rejects_full_ratio() {
        assert!(select_mask(&[0.0; 4], 1.0, 0).is_err());
        assert!(select_mask(&[0.0; 4], -0.1, 0).is_err());
    }

    #[test]
    fn same_seed_same_plan() {
        let var: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
        assert_eq!(select_mask(&var, 0.4, 5).unwrap(), select_mask(&var, 0.4, 5).unwrap());
    }

    proptest! {
        #[test]
        fn count_and_balance_hold_on_the_grid(g in 4usize..=256, tenth in 0usize..10, seed: u64) {
            let rho = tenth as f64 / 10.0;
            let var: Vec<f64> = (0..g).map(|i| ((i * 31 + 7) % 17) as f64).collect();
            let plan = select_mask(&var, rho, seed).unwrap();
            prop_assert_eq!(plan.count(), (rho * g as f64).round() as usize);
            let hi = plan.high_pool.iter().filter(|&&i| plan.masked[i]).count();
            let lo = plan.low_pool.iter().filter(|&&i| plan.masked[i]).count();
            prop_assert!(hi >= lo && hi - lo <= 1);
            prop_assert_eq!(plan.high_pool.len() + plan.low_pool.len(), g);
        }
    }
}
