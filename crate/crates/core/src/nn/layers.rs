//! Parameter store, transformer blocks and the small loss helpers shared by
//! the encoders, decoders and denoisers.

use std::collections::BTreeMap;

use rand::Rng;

use super::autograd::{causal_mask, Graph, NodeId};
use super::{NnError, Tensor};

/// Named parameters of one model, ordered by name so every iteration over
/// them is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NnError> {
        self.map.get(name).ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, NnError> {
        self.map.get_mut(name).ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    /// Loads a parameter into the graph as a named leaf.
    pub fn load(&self, g: &mut Graph, name: &str) -> Result<NodeId, NnError> {
        Ok(g.param(name, self.get(name)?.clone()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor> {
        self.map
    }

    pub fn from_map(map: BTreeMap<String, Tensor>) -> Self {
        Self { map }
    }
}

/// Shape of a transformer stack.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransformerConfig {
    pub depth: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.hidden % self.heads != 0 || self.depth == 0 || self.mlp_ratio == 0 {
            return Err(NnError::ShapeMismatch {
                op: "TransformerConfig",
                lhs: vec![self.hidden],
                rhs: vec![self.heads],
            });
        }
        Ok(())
    }
}

fn init_dense(store: &mut ParamStore, prefix: &str, rows: usize, cols: usize, rng: &mut impl Rng) {
    store.insert(format!("{prefix}.w"), Tensor::fan_in_init(rows, cols, rng));
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[cols]));
}

/// `x·W + b` with parameters `{prefix}.w` / `{prefix}.b`.
pub fn dense(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId, NnError> {
    let w = store.load(g, &format!("{prefix}.w"))?;
    let b = store.load(g, &format!("{prefix}.b"))?;
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

fn layer_norm_affine(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId, NnError> {
    let gamma = store.load(g, &format!("{prefix}.g"))?;
    let beta = store.load(g, &format!("{prefix}.b"))?;
    let normed = g.layer_norm(x, 1e-6);
    let scaled = g.mul_row(normed, gamma)?;
    g.add_row(scaled, beta)
}

/// A pre-LN transformer stack of self-attention blocks over `[L, hidden]`
/// token matrices. Parameter names live under `prefix`.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub prefix: String,
    pub cfg: TransformerConfig,
}

impl Transformer {
    pub fn new(prefix: impl Into<String>, cfg: TransformerConfig) -> Self {
        Self { prefix: prefix.into(), cfg }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let h = self.cfg.hidden;
        for b in 0..self.cfg.depth {
            let p = format!("{}.blk{b}", self.prefix);
            store.insert(format!("{p}.ln1.g"), Tensor::full(&[h], 1.0));
            store.insert(format!("{p}.ln1.b"), Tensor::zeros(&[h]));
            init_dense(store, &format!("{p}.attn.q"), h, h, rng);
            init_dense(store, &format!("{p}.attn.k"), h, h, rng);
            init_dense(store, &format!("{p}.attn.v"), h, h, rng);
            init_dense(store, &format!("{p}.attn.o"), h, h, rng);
            store.insert(format!("{p}.ln2.g"), Tensor::full(&[h], 1.0));
            store.insert(format!("{p}.ln2.b"), Tensor::zeros(&[h]));
            init_dense(store, &format!("{p}.mlp.fc1"), h, h * self.cfg.mlp_ratio, rng);
            init_dense(store, &format!("{p}.mlp.fc2"), h * self.cfg.mlp_ratio, h, rng);
        }
        store.insert(format!("{}.ln_f.g", self.prefix), Tensor::full(&[h], 1.0));
        store.insert(format!("{}.ln_f.b", self.prefix), Tensor::zeros(&[h]));
    }

    fn attention(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        block: &str,
        x: NodeId,
        causal: bool,
    ) -> Result<NodeId, NnError> {
        let heads = self.cfg.heads;
        let head_dim = self.cfg.hidden / heads;
        let len = g.value(x).rows();
        let q = dense(g, store, &format!("{block}.attn.q"), x)?;
        let k = dense(g, store, &format!("{block}.attn.k"), x)?;
        let v = dense(g, store, &format!("{block}.attn.v"), x)?;
        let mask = causal.then(|| g.constant(causal_mask(len)));
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            let qh = g.slice_cols(q, lo, hi)?;
            let kh = g.slice_cols(k, lo, hi)?;
            let vh = g.slice_cols(v, lo, hi)?;
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt)?;
            let mut scores = g.scale(scores, 1.0 / (head_dim as f64).sqrt());
            if let Some(m) = mask {
                scores = g.add(scores, m)?;
            }
            let probs = g.softmax(scores);
            outs.push(g.matmul(probs, vh)?);
        }
        let merged = g.concat_cols(&outs)?;
        dense(g, store, &format!("{block}.attn.o"), merged)
    }

    /// Runs the stack; input and output are `[L, hidden]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        mut x: NodeId,
        causal: bool,
    ) -> Result<NodeId, NnError> {
        self.cfg.validate()?;
        for b in 0..self.cfg.depth {
            let block = format!("{}.blk{b}", self.prefix);
            let normed = layer_norm_affine(g, store, &format!("{block}.ln1"), x)?;
            let attn = self.attention(g, store, &block, normed, causal)?;
            x = g.add(x, attn)?;
            let normed = layer_norm_affine(g, store, &format!("{block}.ln2"), x)?;
            let h1 = dense(g, store, &format!("{block}.mlp.fc1"), normed)?;
            let h1 = g.gelu(h1);
            let h2 = dense(g, store, &format!("{block}.mlp.fc2"), h1)?;
            x = g.add(x, h2)?;
        }
        layer_norm_affine(g, store, &format!("{}.ln_f", self.prefix), x)
    }
}

/// Sinusoidal timestep embedding as a `[1, dim]` row.
pub fn timestep_embedding(t: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(i as f64) * (10_000f64).ln() / half as f64).exp();
        let arg = t as f64 * freq;
        data[i] = arg.sin();
        data[half + i] = arg.cos();
    }
    Tensor::new(vec![1, dim], data).expect("shape is consistent")
}

/// KL(N(μ, σ²) ‖ N(0, I)) summed over latent dimensions, averaged over
/// tokens: `0.5·Σ(μ² + e^lv − 1 − lv) / L`.
pub fn gaussian_kl(g: &mut Graph, mean: NodeId, logvar: NodeId) -> Result<NodeId, NnError> {
    let rows = g.value(mean).rows();
    let mu2 = g.mul(mean, mean)?;
    let var = g.exp(logvar);
    let s = g.add(mu2, var)?;
    let s = g.sub(s, logvar)?;
    let s = g.add_scalar(s, -1.0);
    let total = g.sum_all(s);
    Ok(g.scale(total, 0.5 / rows as f64))
}

/// Mean squared error over masked feature entries. Columns at `wrap_from` and
/// beyond are angular: their residual is wrapped into `(-π, π]` before
/// squaring so errors measure the short way around the circle.
pub fn masked_feature_mse(
    g: &mut Graph,
    pred: NodeId,
    target: &Tensor,
    mask: &Tensor,
    wrap_from: usize,
) -> Result<NodeId, NnError> {
    let cols = g.value(pred).cols();
    let t = g.constant(target.clone());
    let diff = g.sub(pred, t)?;
    let diff = if wrap_from == 0 {
        g.wrap_to_pi(diff)
    } else if wrap_from >= cols {
        diff
    } else {
        let plain = g.slice_cols(diff, 0, wrap_from)?;
        let angular = g.slice_cols(diff, wrap_from, cols)?;
        let wrapped = g.wrap_to_pi(angular);
        g.concat_cols(&[plain, wrapped])?
    };
    let sq = g.mul(diff, diff)?;
    let m = g.constant(mask.clone());
    let masked = g.mul(sq, m)?;
    let total = g.sum_all(masked);
    let count: f64 = mask.data().iter().sum::<f64>().max(1.0);
    Ok(g.scale(total, 1.0 / count))
}
