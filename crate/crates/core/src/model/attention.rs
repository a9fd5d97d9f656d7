use rand::Rng;

use crate::tensor::{Bindings, Graph, LayerNorm, Linear, ParamId, ParamStore, TensorError, Var};

/// Multi-head attention with a pre-norm residual. Keys and values come from
/// the normalized query stream (self-attention) or from a separate,
/// separately normalized stream (cross-attention). Masked tokens are
/// removed from the key/value set only.
#[derive(Clone, Debug)]
pub struct Agma {
    pub norm_q: LayerNorm,
    pub norm_kv: Option<LayerNorm>,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl Agma {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, heads: usize, cross: bool, rng: &mut impl Rng) -> Self {
        Self {
            norm_q: LayerNorm::new(store, &format!("{name}.norm_q"), channels),
            norm_kv: cross.then(|| LayerNorm::new(store, &format!("{name}.norm_kv"), channels)),
            query: Linear::new(store, &format!("{name}.query"), channels, channels, rng),
            key: Linear::new(store, &format!("{name}.key"), channels, channels, rng),
            value: Linear::new(store, &format!("{name}.value"), channels, channels, rng),
            output: Linear::new(store, &format!("{name}.output"), channels, channels, rng),
            heads,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out: Vec<ParamId> = self.norm_q.params().to_vec();
        if let Some(n) = &self.norm_kv {
            out.extend(n.params());
        }
        for l in [self.query, self.key, self.value, self.output] {
            out.extend(l.params());
        }
        out
    }

    /// `stream + Wo * attention(LN(stream), LN(kv))`. `masked` flags key
    /// tokens; pass all `false` for plain attention.
    pub fn forward(&self, g: &mut Graph, b: &Bindings, stream: Var, kv: Option<Var>, masked: &[bool]) -> Result<Var, TensorError> {
        let q_in = self.norm_q.forward(g, b, stream)?;
        let kv_in = match (kv, &self.norm_kv) {
            (Some(kv), Some(norm)) => norm.forward(g, b, kv)?,
            (None, None) => q_in,
            _ => {
                return Err(TensorError::Shape(
                    "cross-attention needs a key/value stream and its own norm".into(),
                ))
            }
        };
        let q = self.query.forward(g, b, q_in)?;
        let k = self.key.forward(g, b, kv_in)?;
        let v = self.value.forward(g, b, kv_in)?;
        let head_dim = g.value(q).cols() / self.heads;
        let scores = g.head_scores(q, k, self.heads, 1.0 / (head_dim as f64).sqrt())?;
        let weights = g.masked_softmax(scores, masked)?;
        let context = g.head_mix(weights, v)?;
        let out = self.output.forward(g, b, context)?;
        g.add(stream, out)
    }
}

/// Pre-norm two-layer GELU MLP with a residual.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub norm: LayerNorm,
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, expansion: usize, rng: &mut impl Rng) -> Self {
        Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), channels),
            up: Linear::new(store, &format!("{name}.up"), channels, channels * expansion, rng),
            down: Linear::new(store, &format!("{name}.down"), channels * expansion, channels, rng),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = self.norm.params().to_vec();
        out.extend(self.up.params());
        out.extend(self.down.params());
        out
    }

    pub fn forward(&self, g: &mut Graph, b: &Bindings, x: Var) -> Result<Var, TensorError> {
        let h = self.norm.forward(g, b, x)?;
        let h = self.up.forward(g, b, h)?;
        let h = g.gelu(h)?;
        let h = self.down.forward(g, b, h)?;
        g.add(x, h)
    }
}
