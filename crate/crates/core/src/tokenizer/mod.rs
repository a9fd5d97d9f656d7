//! Patch tokenization: k-nearest-neighbor groups around sampled centers,
//! a shared point encoder pooled into one token per group, and a learned
//! embedding of each center's coordinates.

use rand::Rng;
use thiserror::Error;

use crate::geometry::{knn, GeometryError, Point3};
use crate::tensor::{Bindings, Graph, Linear, ParamId, ParamStore, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("{0}")]
    Argument(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Floor on the per-group scale used to normalize relative coordinates.
pub const MIN_GROUP_SCALE: f64 = 1e-12;

/// Groups of `k` nearest points around each center, with member offsets
/// normalized by the group's largest offset.
#[derive(Clone, Debug, PartialEq)]
pub struct Grouping {
    pub center_indices: Vec<usize>,
    pub centers: Vec<Point3>,
    pub groups: Vec<Vec<usize>>,
    /// `[(g * k) x 3]`, group-major.
    pub relative: Tensor,
    pub k: usize,
}

impl Grouping {
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Center coordinates as a `[g x 3]` tensor.
    pub fn center_tensor(&self) -> Tensor {
        let data = self.centers.iter().flat_map(|c| [c.x, c.y, c.z]).collect();
        Tensor::new(vec![self.centers.len(), 3], data).expect("three columns")
    }
}

pub fn group_points(points: &[Point3], center_indices: &[usize], k: usize) -> Result<Grouping, TokenizerError> {
    if center_indices.is_empty() {
        return Err(TokenizerError::Argument("no centers to group around".into()));
    }
    if k == 0 || k > points.len() {
        return Err(TokenizerError::Argument(format!(
            "group size {k} must be in 1..={}",
            points.len()
        )));
    }
    if let Some(&i) = center_indices.iter().find(|&&i| i >= points.len()) {
        return Err(TokenizerError::Argument(format!("center index {i} out of range")));
    }
    let centers: Vec<Point3> = center_indices.iter().map(|&i| points[i]).collect();
    let mut groups = Vec::with_capacity(centers.len());
    let mut relative = Vec::with_capacity(centers.len() * k * 3);
    for c in &centers {
        let idx = knn(points, c, k)?;
        let scale = idx
            .iter()
            .map(|&i| (points[i] - c).norm())
            .fold(0.0f64, f64::max)
            .max(MIN_GROUP_SCALE);
        for &i in &idx {
            let d = (points[i] - c) / scale;
            relative.extend([d.x, d.y, d.z]);
        }
        groups.push(idx);
    }
    Ok(Grouping {
        center_indices: center_indices.to_vec(),
        centers,
        relative: Tensor::new(vec![groups.len() * k, 3], relative)?,
        groups,
        k,
    })
}

/// Shared per-point MLP `3 -> c/2 -> c`, max-pooled over each group, then a
/// linear head `c -> c`.
#[derive(Clone, Debug)]
pub struct GroupEncoder {
    pub first: Linear,
    pub second: Linear,
    pub head: Linear,
}

impl GroupEncoder {
    pub fn new(store: &mut ParamStore, channels: usize, trainable: bool, rng: &mut impl Rng) -> Self {
        let hidden = (channels / 2).max(1);
        let enc = Self {
            first: Linear::new(store, "encoder.first", 3, hidden, rng),
            second: Linear::new(store, "encoder.second", hidden, channels, rng),
            head: Linear::new(store, "encoder.head", channels, channels, rng),
        };
        for id in enc.params() {
            store.set_trainable(id, trainable);
        }
        enc
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.first, self.second, self.head].iter().flat_map(Linear::params).collect()
    }

    /// `relative` is `[(g * k) x 3]`; returns `[g x c]`.
    pub fn forward(&self, g: &mut Graph, b: &Bindings, relative: Var, k: usize) -> Result<Var, TensorError> {
        let h = self.first.forward(g, b, relative)?;
        let h = g.gelu(h)?;
        let h = self.second.forward(g, b, h)?;
        let pooled = g.group_max_pool(h, k)?;
        self.head.forward(g, b, pooled)
    }
}

/// Two-layer MLP `3 -> c -> c` with GELU between.
#[derive(Clone, Debug)]
pub struct PositionEmbed {
    pub first: Linear,
    pub second: Linear,
}

impl PositionEmbed {
    pub fn new(store: &mut ParamStore, channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            first: Linear::new(store, "position.first", 3, channels, rng),
            second: Linear::new(store, "position.second", channels, channels, rng),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.first, self.second].iter().flat_map(Linear::params).collect()
    }

    pub fn forward(&self, g: &mut Graph, b: &Bindings, centers: Var) -> Result<Var, TensorError> {
        let h = self.first.forward(g, b, centers)?;
        let h = g.gelu(h)?;
        self.second.forward(g, b, h)
    }
}

/// Per-group tokens and position embeddings for one cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    pub tokens: Tensor,
    pub positions: Tensor,
    pub grouping: Grouping,
}

impl TokenBatch {
    pub fn channels(&self) -> usize {
        self.tokens.cols()
    }
}

#[derive(Clone, Debug)]
pub struct Tokenizer {
    pub encoder: GroupEncoder,
    pub position: PositionEmbed,
}

impl Tokenizer {
    pub fn new(store: &mut ParamStore, channels: usize, train_encoder: bool, rng: &mut impl Rng) -> Self {
        Self {
            encoder: GroupEncoder::new(store, channels, train_encoder, rng),
            position: PositionEmbed::new(store, channels, rng),
        }
    }

    /// Adds tokens and positions for `grouping` to `g`.
    pub fn forward(&self, g: &mut Graph, b: &Bindings, grouping: &Grouping) -> Result<(Var, Var), TensorError> {
        let rel = g.input(grouping.relative.clone());
        let tokens = self.encoder.forward(g, b, rel, grouping.k)?;
        let centers = g.input(grouping.center_tensor());
        let positions = self.position.forward(g, b, centers)?;
        Ok((tokens, positions))
    }

    pub fn tokenize(&self, store: &ParamStore, grouping: Grouping) -> Result<TokenBatch, TokenizerError> {
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let (t, p) = self.forward(&mut g, &b, &grouping)?;
        Ok(TokenBatch {
            tokens: g.value(t).clone(),
            positions: g.value(p).clone(),
            grouping,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point3> {
        (0..n)
            .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn groups_contain_their_center_and_are_scaled_to_unit_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = cloud(200, &mut rng);
        let grouping = group_points(&pts, &[0, 10, 20], 16).unwrap();
        for (j, grp) in grouping.groups.iter().enumerate() {
            assert_eq!(grp[0], grouping.center_indices[j]);
            let rows = &grouping.relative.data()[j * 16 * 3..(j + 1) * 16 * 3];
            let max = rows.chunks(3).map(|r| (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt()).fold(0.0, f64::max);
            assert!((max - 1.0).abs() < 1e-12);
            let brute = {
                let mut all: Vec<usize> = (0..pts.len()).collect();
                let c = pts[grouping.center_indices[j]];
                all.sort_by(|&a, &b| (pts[a] - c).norm_squared().total_cmp(&(pts[b] - c).norm_squared()).then(a.cmp(&b)));
                all.truncate(16);
                all
            };
            assert_eq!(grp, &brute);
        }
    }

    #[test]
    fn coincident_group_keeps_zero_offsets() {
        let pts = vec![Point3::new(1.0, 1.0, 1.0); 4];
        let grouping = group_points(&pts, &[0], 4).unwrap();
        assert!(grouping.relative.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_arguments() {
        let pts = vec![Point3::zeros(); 4];
        assert!(group_points(&pts, &[0], 5).is_err());
        assert!(group_points(&pts, &[7], 2).is_err());
        assert!(group_points(&pts, &[], 2).is_err());
    }

    #[test]
    fn tokens_ignore_member_order_within_a_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let tok = Tokenizer::new(&mut store, 16, false, &mut rng);
        let pts = cloud(100, &mut rng);
        let grouping = group_points(&pts, &[3, 50], 8).unwrap();
        let mut shuffled = grouping.clone();
        // Reverse the member rows of each group.
        let mut rows: Vec<Vec<f64>> = shuffled.relative.data().chunks(3).map(<[f64]>::to_vec).collect();
        for grp in rows.chunks_mut(8) {
            grp.reverse();
        }
        shuffled.relative = Tensor::from_rows(&rows).unwrap();
        let a = tok.tokenize(&store, grouping).unwrap();
        let b = tok.tokenize(&store, shuffled).unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.channels(), 16);
    }

    #[test]
    fn zero_position_weights_give_the_output_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let tok = Tokenizer::new(&mut store, 4, false, &mut rng);
        for id in tok.position.params() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let bias = Tensor::vector(vec![0.5, -1.0, 2.0, 0.0]);
        *store.get_mut(tok.position.second.bias) = bias.clone();
        let pts = cloud(20, &mut rng);
        let batch = tok.tokenize(&store, group_points(&pts, &[0, 1, 2], 4).unwrap()).unwrap();
        for i in 0..3 {
            assert_eq!(batch.positions.row(i), bias.data());
        }
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let tok = Tokenizer::new(&mut store, 6, true, &mut rng);
        let pts = cloud(30, &mut rng);
        let grouping = group_points(&pts, &[0, 7, 14], 5).unwrap();
        let target = Tensor::new(vec![3, 6], (0..18).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let report = check_gradients(store.tensors(), 1e-6, |g, vars| {
            let b = Bindings::from_vars(vars.to_vec());
            let (t, p) = tok.forward(g, &b, &grouping)?;
            let sum = g.add(t, p)?;
            let y = g.input(target.clone());
            g.mse(sum, y)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
