use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Agma, FeedForward, MaskPlan, ModelConfig, ModelError};
use crate::tensor::{kernels, Bindings, Graph, LayerNorm, ParamStore, Tensor, TensorError, Var};
use crate::tokenizer::{Grouping, TokenBatch, Tokenizer};

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attention: Agma,
    pub ffn: FeedForward,
}

#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub cross: Agma,
    pub attention: Agma,
    pub ffn: FeedForward,
}

/// Training passes carry a mask plan and standard-normal jitter noise of
/// shape `[g x c]`; evaluation passes use neither.
#[derive(Clone, Copy, Debug)]
pub enum Mode<'a> {
    Train { plan: &'a MaskPlan, noise: &'a Tensor },
    Eval,
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Pass {
    pub tokens: Var,
    pub positions: Var,
    pub encoded: Var,
    pub reconstruction: Var,
    pub loss: Var,
}

/// Tokenizer, encoder stack and decoder stack with their parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub tokenizer: Tokenizer,
    pub encoder: Vec<EncoderBlock>,
    pub encoder_norm: LayerNorm,
    pub decoder: Vec<DecoderBlock>,
}

impl Model {
    /// Builds a model with parameters drawn from `seed`. The parameter
    /// order depends only on `config`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = config.channels;
        let tokenizer = Tokenizer::new(&mut store, c, config.train_encoder, &mut rng);
        let encoder = (0..config.blocks)
            .map(|i| EncoderBlock {
                attention: Agma::new(&mut store, &format!("lge.{i}.attention"), c, config.heads, false, &mut rng),
                ffn: FeedForward::new(&mut store, &format!("lge.{i}.ffn"), c, config.ffn_expansion, &mut rng),
            })
            .collect();
        let encoder_norm = LayerNorm::new(&mut store, "lge.norm", c);
        let decoder = if config.use_decoder {
            (0..config.blocks)
                .map(|i| DecoderBlock {
                    cross: Agma::new(&mut store, &format!("gqd.{i}.cross"), c, config.heads, true, &mut rng),
                    attention: Agma::new(&mut store, &format!("gqd.{i}.attention"), c, config.heads, false, &mut rng),
                    ffn: FeedForward::new(&mut store, &format!("gqd.{i}.ffn"), c, config.ffn_expansion, &mut rng),
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            config,
            store,
            tokenizer,
            encoder,
            encoder_norm,
            decoder,
        })
    }

    /// Tokenizes `grouping` and runs the encoder/decoder on it.
    pub fn forward(&self, g: &mut Graph, b: &Bindings, grouping: &Grouping, mode: Mode<'_>) -> Result<Pass, ModelError> {
        self.check_grouping(grouping)?;
        let (tokens, positions) = self.tokenizer.forward(g, b, grouping)?;
        Ok(self.forward_tokens(g, b, tokens, positions, mode)?)
    }

    /// Encoder/decoder pass on precomputed tokens and position embeddings.
    /// The loss compares the reconstruction with the clean `tokens`.
    pub fn forward_tokens(&self, g: &mut Graph, b: &Bindings, tokens: Var, positions: Var, mode: Mode<'_>) -> Result<Pass, TensorError> {
        let n = g.value(tokens).rows();
        let open = vec![false; n];
        let (enc_mask, dec_mask, input) = match mode {
            Mode::Train { plan, noise } => {
                if plan.masked.len() != n {
                    return Err(TensorError::Shape(format!(
                        "mask plan covers {} tokens, batch has {n}",
                        plan.masked.len()
                    )));
                }
                let jittered = if self.config.gamma > 0.0 {
                    g.jitter(tokens, noise.clone(), self.config.gamma / self.config.channels as f64)?
                } else {
                    tokens
                };
                let enc = if self.config.mask_encoder { &plan.masked } else { &open };
                let dec = if self.config.mask_decoder { &plan.masked } else { &open };
                (enc, dec, jittered)
            }
            Mode::Eval => (&open, &open, tokens),
        };

        let mut stream = g.add(input, positions)?;
        for block in &self.encoder {
            stream = block.attention.forward(g, b, stream, None, enc_mask)?;
            stream = block.ffn.forward(g, b, stream)?;
        }
        let encoded = self.encoder_norm.forward(g, b, stream)?;

        let reconstruction = if self.decoder.is_empty() {
            stream
        } else {
            let mut prev: Option<Var> = None;
            for block in &self.decoder {
                let query = match prev {
                    Some(p) => g.add(positions, p)?,
                    None => positions,
                };
                let a1 = block.cross.forward(g, b, query, Some(encoded), dec_mask)?;
                let a2_in = g.add(a1, positions)?;
                let a2 = block.attention.forward(g, b, a2_in, None, dec_mask)?;
                prev = Some(block.ffn.forward(g, b, a2)?);
            }
            prev.expect("at least one decoder block")
        };
        let loss = g.mse(tokens, reconstruction)?;
        Ok(Pass {
            tokens,
            positions,
            encoded,
            reconstruction,
            loss,
        })
    }

    fn check_grouping(&self, grouping: &Grouping) -> Result<(), ModelError> {
        if grouping.k != self.config.group_size {
            return Err(ModelError::CheckpointMismatch(format!(
                "model expects groups of {}, got {}",
                self.config.group_size, grouping.k
            )));
        }
        if grouping.num_groups() < 1 {
            return Err(ModelError::Argument("empty grouping".into()));
        }
        Ok(())
    }

    /// Evaluation pass returning the tokens and each token's reconstruction
    /// error `||F_tok_i - F_rec_i||`.
    pub fn token_errors(&self, grouping: &Grouping) -> Result<(TokenBatch, Vec<f64>), ModelError> {
        let mut g = Graph::new();
        let b = self.store.bind(&mut g, false);
        let pass = self.forward(&mut g, &b, grouping, Mode::Eval)?;
        let t = g.value(pass.tokens);
        let r = g.value(pass.reconstruction);
        let c = t.cols();
        let errors = t
            .data()
            .chunks_exact(c)
            .zip(r.data().chunks_exact(c))
            .map(|(a, b)| {
                let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                kernels::norm(&d)
            })
            .collect();
        let batch = TokenBatch {
            tokens: t.clone(),
            positions: g.value(pass.positions).clone(),
            grouping: grouping.clone(),
        };
        Ok((batch, errors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use crate::tensor::gradcheck::check_gradients;
    use crate::tokenizer::group_points;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn toy_config() -> ModelConfig {
        ModelConfig {
            groups: 8,
            group_size: 6,
            channels: 16,
            heads: 4,
            blocks: 2,
            ffn_expansion: 2,
            train_encoder: true,
            ..Default::default()
        }
    }

    fn toy_grouping(seed: u64, cfg: &ModelConfig) -> Grouping {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Point3> = (0..40)
            .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.2..0.2)))
            .collect();
        let centers: Vec<usize> = (0..cfg.groups).map(|i| i * 5).collect();
        group_points(&pts, &centers, cfg.group_size).unwrap()
    }

    fn noise(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let cfg = toy_config();
        let model = Model::new(cfg.clone(), 1).unwrap();
        let grouping = toy_grouping(2, &cfg);
        let plan = super::super::select_mask(&(0..8).map(f64::from).collect::<Vec<_>>(), 0.4, 3).unwrap();
        let z = noise(8, 16, 4);
        let report = check_gradients(model.store.tensors(), 1e-6, |g, vars| {
            let b = Bindings::from_vars(vars.to_vec());
            let pass = model.forward(g, &b, &grouping, Mode::Train { plan: &plan, noise: &z }).map_err(|e| match e {
                ModelError::Tensor(t) => t,
                other => TensorError::Shape(other.to_string()),
            })?;
            Ok(pass.loss)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-3, "{report:?}");
        assert!(report.checked > 1000);
    }

    #[test]
    fn zero_residual_branches_leave_the_normalized_input() {
        let cfg = ModelConfig { use_decoder: false, ..toy_config() };
        let mut model = Model::new(cfg.clone(), 5).unwrap();
        for blk in &model.encoder {
            model.store.get_mut(blk.attention.output.weight).data_mut().fill(0.0);
            model.store.get_mut(blk.ffn.down.weight).data_mut().fill(0.0);
        }
        let grouping = toy_grouping(6, &cfg);
        let mut g = Graph::new();
        let b = model.store.bind(&mut g, false);
        let pass = model.forward(&mut g, &b, &grouping, Mode::Eval).unwrap();
        let sum = g.add(pass.tokens, pass.positions).unwrap();
        let one = g.input(Tensor::filled(&[cfg.channels], 1.0));
        let zero = g.input(Tensor::zeros(&[cfg.channels]));
        let normed = g.layer_norm(sum, one, zero, crate::tensor::LAYER_NORM_EPS).unwrap();
        assert_eq!(g.value(pass.encoded), g.value(normed));
    }

    #[test]
    fn eval_is_deterministic_and_masking_is_train_only() {
        let cfg = toy_config();
        let model = Model::new(cfg.clone(), 7).unwrap();
        let grouping = toy_grouping(8, &cfg);
        let (_, e1) = model.token_errors(&grouping).unwrap();
        let (_, e2) = model.token_errors(&grouping).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1.len(), cfg.groups);
    }

    #[test]
    fn zero_ratio_training_pass_ignores_the_mask_seed() {
        let cfg = ModelConfig { gamma: 0.0, ..toy_config() };
        let model = Model::new(cfg.clone(), 9).unwrap();
        let grouping = toy_grouping(10, &cfg);
        let var: Vec<f64> = (0..8).map(|i| (i as f64).cos()).collect();
        let z = noise(8, 16, 0);
        let run = |seed| {
            let plan = super::super::select_mask(&var, 0.0, seed).unwrap();
            let mut g = Graph::new();
            let b = model.store.bind(&mut g, false);
            let pass = model.forward(&mut g, &b, &grouping, Mode::Train { plan: &plan, noise: &z }).unwrap();
            g.value(pass.reconstruction).clone()
        };
        assert_eq!(run(1), run(2));
        let mut g = Graph::new();
        let b = model.store.bind(&mut g, false);
        let eval = model.forward(&mut g, &b, &grouping, Mode::Eval).unwrap();
        assert_eq!(g.value(eval.reconstruction), &run(3));
    }

    #[test]
    fn permuting_groups_permutes_outputs() {
        let cfg = toy_config();
        let model = Model::new(cfg.clone(), 11).unwrap();
        let grouping = toy_grouping(12, &cfg);
        let perm = [3usize, 0, 7, 1, 6, 2, 5, 4];
        let mut permuted = grouping.clone();
        permuted.center_indices = perm.iter().map(|&i| grouping.center_indices[i]).collect();
        permuted.centers = perm.iter().map(|&i| grouping.centers[i]).collect();
        permuted.groups = perm.iter().map(|&i| grouping.groups[i].clone()).collect();
        let k3 = cfg.group_size * 3;
        let rel: Vec<f64> = perm.iter().flat_map(|&i| grouping.relative.data()[i * k3..(i + 1) * k3].to_vec()).collect();
        permuted.relative = Tensor::new(grouping.relative.shape().to_vec(), rel).unwrap();
        let (_, a) = model.token_errors(&grouping).unwrap();
        let (_, b) = model.token_errors(&permuted).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert!((b[j] - a[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_jitter_leaves_tokens_bitwise() {
        let cfg = ModelConfig { gamma: 0.0, rho: 0.0, ..toy_config() };
        let model = Model::new(cfg.clone(), 13).unwrap();
        let grouping = toy_grouping(14, &cfg);
        let plan = MaskPlan::none(cfg.groups);
        let z = noise(8, 16, 1);
        let mut g = Graph::new();
        let b = model.store.bind(&mut g, false);
        let train = model.forward(&mut g, &b, &grouping, Mode::Train { plan: &plan, noise: &z }).unwrap();
        let eval = model.forward(&mut g, &b, &grouping, Mode::Eval).unwrap();
        assert_eq!(g.value(train.loss), g.value(eval.loss));
    }
}
