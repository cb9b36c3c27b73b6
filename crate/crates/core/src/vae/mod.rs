//! Per-level variational autoencoders: message-passing encoders over the
//! level representations, autoregressive decoders back to tokens or
//! geometric features.

mod decoder;
mod encoder;

pub use decoder::BOS;
pub use encoder::EncoderInput;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::LevelFeatures;
use crate::nn::{
    gaussian_kl, masked_feature_mse, Adam, AdamConfig, Graph, NnError, ParamStore, Tensor,
    TransformerConfig,
};
use crate::residues::NUM_RESIDUES;
use crate::rng::{normal_vec, stream_rng, PortableRng};

/// The three representation levels, ordered atom → backbone → amino acid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Atom,
    Backbone,
    AminoAcid,
}

impl Level {
    /// Numeric index used by the conditional flow (atom = 1 … amino acid = 3).
    pub fn index(&self) -> usize {
        match self {
            Level::Atom => 1,
            Level::Backbone => 2,
            Level::AminoAcid => 3,
        }
    }

    pub fn all() -> [Level; 3] {
        [Level::Atom, Level::Backbone, Level::AminoAcid]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Level::Atom => "atom",
            Level::Backbone => "backbone",
            Level::AminoAcid => "amino_acid",
        }
    }
}

#[derive(Debug, Error)]
pub enum VaeError {
    #[error("representation does not match level {expected:?}")]
    LevelMismatch { expected: Level },
    #[error("record lacks {0} data required for this level")]
    MissingData(&'static str),
    #[error("latent has dim {got}, model expects {expected}")]
    LatentDim { expected: usize, got: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Per-level latent token sequence `[L, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSeq {
    pub level: Level,
    pub tokens: Tensor,
    pub mask: Vec<bool>,
}

impl LatentSeq {
    /// Validates the mask length and that masked positions hold zeros.
    pub fn new(level: Level, tokens: Tensor, mask: Vec<bool>) -> Result<Self, VaeError> {
        if mask.len() != tokens.rows() {
            return Err(VaeError::LatentDim { expected: tokens.rows(), got: mask.len() });
        }
        for (i, &keep) in mask.iter().enumerate() {
            if !keep && tokens.row(i).iter().any(|&v| v != 0.0) {
                return Err(VaeError::MissingData("masked latent positions must be zero"));
            }
        }
        Ok(Self { level, tokens, mask })
    }

    /// All-active latent of the given tokens.
    pub fn full(level: Level, tokens: Tensor) -> Self {
        let mask = vec![true; tokens.rows()];
        Self { level, tokens, mask }
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }
}

/// Encoder output: posterior moments and the reparameterized sample with its
/// recorded noise.
#[derive(Debug, Clone)]
pub struct VaeOutput {
    pub mean: Tensor,
    pub log_variance: Tensor,
    pub sample: Tensor,
    pub noise: Tensor,
}

/// Variational autoencoder shape. `desk()` is the default small
/// configuration; `paper_scale()` documents the full-scale values (latent
/// 384, 8 decoder blocks, 8 heads).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub latent: usize,
    pub enc_hidden: usize,
    pub enc_rounds: usize,
    pub dec: TransformerConfig,
    pub max_len: usize,
    pub kl_weight: f64,
}

impl VaeConfig {
    pub fn desk() -> Self {
        Self {
            latent: 16,
            enc_hidden: 32,
            enc_rounds: 2,
            dec: TransformerConfig { depth: 2, hidden: 64, heads: 2, mlp_ratio: 2 },
            max_len: 64,
            kl_weight: 1e-5,
        }
    }

    pub fn paper_scale() -> Self {
        Self {
            latent: 384,
            enc_hidden: 384,
            enc_rounds: 2,
            dec: TransformerConfig { depth: 8, hidden: 384, heads: 8, mlp_ratio: 4 },
            max_len: 512,
            kl_weight: 1e-5,
        }
    }
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self::desk()
    }
}

fn encoder_dims(level: Level) -> (usize, usize, bool) {
    match level {
        Level::AminoAcid => (crate::featurize::AA_NODE_DIM, crate::featurize::AA_EDGE_DIM, true),
        Level::Backbone => {
            (crate::featurize::BACKBONE_NODE_DIM, crate::featurize::BACKBONE_EDGE_DIM, false)
        }
        Level::Atom => (crate::featurize::ATOM_NODE_DIM, crate::featurize::ATOM_EDGE_DIM, false),
    }
}

/// Geometry reconstruction target (backbone steps or χ angles).
#[derive(Debug, Clone)]
pub struct GeometryTarget {
    pub feats: Tensor,
    pub mask: Tensor,
    /// Columns at this index and beyond are angles (wrapped residuals).
    pub wrap_from: usize,
    /// Apply the softplus positivity map to column 0 (distances).
    pub positive_first: bool,
}

/// Reconstruction target for one sample.
#[derive(Debug, Clone)]
pub enum LevelTarget {
    Sequence(Vec<usize>),
    Geometry(GeometryTarget),
}

/// One training sample: encoder input plus reconstruction target.
#[derive(Debug, Clone)]
pub struct VaeTrainItem {
    pub enc_input: EncoderInput,
    pub target: LevelTarget,
}

/// Builds the training item for a level from featurized data.
pub fn train_item(level: Level, feats: &LevelFeatures) -> Result<VaeTrainItem, VaeError> {
    let (_, edge_dim, include_pos) = encoder_dims(level);
    match level {
        Level::AminoAcid => Ok(VaeTrainItem {
            enc_input: EncoderInput::from_graph(&feats.aa_graph, include_pos, edge_dim),
            target: LevelTarget::Sequence(feats.residue_indices.clone()),
        }),
        Level::Backbone => {
            let bb = feats.backbone.as_ref().ok_or(VaeError::MissingData("backbone"))?;
            let l = feats.len;
            let mut target = Tensor::zeros(&[l, 4]);
            let mut mask = Tensor::zeros(&[l, 4]);
            for i in 0..l {
                for k in 0..4 {
                    target.data_mut()[i * 4 + k] = bb.steps[i][k];
                    mask.data_mut()[i * 4 + k] = if bb.step_mask[i] { 1.0 } else { 0.0 };
                }
            }
            Ok(VaeTrainItem {
                enc_input: EncoderInput::from_graph(&bb.graph, include_pos, edge_dim),
                target: LevelTarget::Geometry(GeometryTarget {
                    feats: target,
                    mask,
                    wrap_from: 1,
                    positive_first: true,
                }),
            })
        }
        Level::Atom => {
            let atom = feats.atom.as_ref().ok_or(VaeError::MissingData("torsions"))?;
            let l = feats.len;
            let mut target = Tensor::zeros(&[l, 4]);
            let mut mask = Tensor::zeros(&[l, 4]);
            for i in 0..l {
                for k in 0..4 {
                    target.data_mut()[i * 4 + k] = atom.chi[i][k];
                    mask.data_mut()[i * 4 + k] = if atom.chi_mask[i][k] { 1.0 } else { 0.0 };
                }
            }
            Ok(VaeTrainItem {
                enc_input: EncoderInput::from_graph(&atom.graph, include_pos, edge_dim),
                target: LevelTarget::Geometry(GeometryTarget {
                    feats: target,
                    mask,
                    wrap_from: 0,
                    positive_first: false,
                }),
            })
        }
    }
}

/// Loss component breakdown.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct VaeLossParts {
    pub cross_entropy: f64,
    pub mse: f64,
    pub kl: f64,
    pub total: f64,
}

impl VaeLossParts {
    fn add(&mut self, other: &VaeLossParts) {
        self.cross_entropy += other.cross_entropy;
        self.mse += other.mse;
        self.kl += other.kl;
        self.total += other.total;
    }

    fn scaled(&self, s: f64) -> VaeLossParts {
        VaeLossParts {
            cross_entropy: self.cross_entropy * s,
            mse: self.mse * s,
            kl: self.kl * s,
            total: self.total * s,
        }
    }
}

/// One level's encoder/decoder pair.
#[derive(Debug, Clone)]
pub struct LevelVae {
    pub level: Level,
    pub cfg: VaeConfig,
    pub params: ParamStore,
}

impl LevelVae {
    /// Fresh model with uniform(±1/√fan_in) weights from a seeded stream.
    pub fn init(level: Level, cfg: VaeConfig, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0x5641_4500 + level.index() as u64);
        let mut params = ParamStore::new();
        let (node_dim, edge_dim, _) = encoder_dims(level);
        encoder::init_encoder(
            &mut params,
            node_dim,
            edge_dim,
            cfg.enc_hidden,
            cfg.latent,
            cfg.enc_rounds,
            &mut rng,
        );
        match level {
            Level::AminoAcid => decoder::init_sequence_decoder(
                &mut params,
                &cfg.dec,
                cfg.latent,
                cfg.max_len,
                &mut rng,
            ),
            _ => decoder::init_geometry_decoder(
                &mut params,
                &cfg.dec,
                cfg.latent,
                cfg.max_len,
                &mut rng,
            ),
        }
        Self { level, cfg, params }
    }

    /// Encoder input for this level from featurized data.
    pub fn encoder_input(&self, feats: &LevelFeatures) -> Result<EncoderInput, VaeError> {
        match train_item(self.level, feats) {
            Ok(item) => Ok(item.enc_input),
            Err(e) => Err(e),
        }
    }

    /// Encodes one representation; `noise` must be `[L, latent]` when given,
    /// otherwise the posterior is sampled with zero noise (the mean).
    pub fn encode(
        &self,
        input: &EncoderInput,
        noise: Option<&Tensor>,
    ) -> Result<VaeOutput, VaeError> {
        let l = input.len();
        let eps = match noise {
            Some(n) => {
                if n.shape() != [l, self.cfg.latent] {
                    return Err(VaeError::LatentDim {
                        expected: self.cfg.latent,
                        got: n.cols(),
                    });
                }
                n.clone()
            }
            None => Tensor::zeros(&[l, self.cfg.latent]),
        };
        let mut g = Graph::new();
        let (mu, lv) = encoder::encoder_forward(&mut g, &self.params, self.cfg.enc_rounds, input)?;
        let mean = g.value(mu).clone();
        let log_variance = g.value(lv).clone();
        let mut sample = mean.clone();
        for i in 0..sample.numel() {
            sample.data_mut()[i] += (0.5 * log_variance.data()[i]).exp() * eps.data()[i];
        }
        Ok(VaeOutput { mean, log_variance, sample, noise: eps })
    }

    /// Builds the full loss graph for one item; returns node ids for the
    /// total and the components `(total, ce, mse, kl)`.
    fn loss_graph(
        &self,
        g: &mut Graph,
        item: &VaeTrainItem,
        eps: &Tensor,
    ) -> Result<(crate::nn::NodeId, Option<crate::nn::NodeId>, Option<crate::nn::NodeId>, crate::nn::NodeId), VaeError>
    {
        let (mu, lv) = encoder::encoder_forward(g, &self.params, self.cfg.enc_rounds, &item.enc_input)?;
        // Reparameterized sample: z = μ + exp(lv/2)·ε.
        let half_lv = g.scale(lv, 0.5);
        let std = g.exp(half_lv);
        let noise = g.constant(eps.clone());
        let scaled = g.mul(std, noise)?;
        let z = g.add(mu, scaled)?;

        let kl = gaussian_kl(g, mu, lv)?;
        match &item.target {
            LevelTarget::Sequence(tokens) => {
                let mut input_tokens = Vec::with_capacity(tokens.len());
                input_tokens.push(BOS);
                input_tokens.extend_from_slice(&tokens[..tokens.len() - 1]);
                let logits =
                    decoder::sequence_decoder_forward(g, &self.params, &self.cfg.dec, z, &input_tokens)?;
                let ce = g.cross_entropy_rows(logits, tokens)?;
                let weighted_kl = g.scale(kl, self.cfg.kl_weight);
                let total = g.add(ce, weighted_kl)?;
                Ok((total, Some(ce), None, kl))
            }
            LevelTarget::Geometry(target) => {
                let l = target.feats.rows();
                // Teacher forcing: row k sees the ground-truth features of
                // row k−1.
                let mut prev = Tensor::zeros(&[l, 4]);
                for i in 1..l {
                    let src: Vec<f64> = target.feats.row(i - 1).to_vec();
                    prev.data_mut()[i * 4..(i + 1) * 4].copy_from_slice(&src);
                }
                let raw =
                    decoder::geometry_decoder_forward(g, &self.params, &self.cfg.dec, z, &prev)?;
                let pred = if target.positive_first {
                    let dist = g.slice_cols(raw, 0, 1)?;
                    let dist = g.softplus(dist);
                    let rest = g.slice_cols(raw, 1, 4)?;
                    g.concat_cols(&[dist, rest])?
                } else {
                    raw
                };
                let mse =
                    masked_feature_mse(g, pred, &target.feats, &target.mask, target.wrap_from)?;
                let weighted_kl = g.scale(kl, self.cfg.kl_weight);
                let total = g.add(mse, weighted_kl)?;
                Ok((total, None, Some(mse), kl))
            }
        }
    }

    /// Loss components for one item (forward only).
    pub fn loss(&self, item: &VaeTrainItem, eps: &Tensor) -> Result<VaeLossParts, VaeError> {
        let mut g = Graph::new();
        let (total, ce, mse, kl) = self.loss_graph(&mut g, item, eps)?;
        Ok(VaeLossParts {
            cross_entropy: ce.map_or(0.0, |id| g.value(id).item()),
            mse: mse.map_or(0.0, |id| g.value(id).item()),
            kl: g.value(kl).item(),
            total: g.value(total).item(),
        })
    }

    /// Trains with Adam on minibatches; gradients of a batch are evaluated in
    /// parallel per sample and reduced in sample order, so runs are
    /// deterministic for a fixed seed. Returns the per-epoch mean loss parts.
    pub fn train(
        &mut self,
        items: &[VaeTrainItem],
        epochs: usize,
        batch_size: usize,
        adam_cfg: AdamConfig,
        seed: u64,
    ) -> Result<Vec<VaeLossParts>, VaeError> {
        let mut adam = Adam::new(adam_cfg);
        let mut history = Vec::with_capacity(epochs);
        let level_stream = 0x7472_6100 + self.level.index() as u64;
        for epoch in 0..epochs {
            let mut order: Vec<usize> = (0..items.len()).collect();
            let mut order_rng = stream_rng(seed, level_stream ^ (epoch as u64) << 16);
            shuffle(&mut order, &mut order_rng);
            let mut eps_rng = stream_rng(seed, level_stream ^ 0xE0 ^ ((epoch as u64) << 16));

            let mut epoch_parts = VaeLossParts::default();
            let mut count = 0usize;
            for chunk in order.chunks(batch_size.max(1)) {
                // Draw noise sequentially, then evaluate the batch in
                // parallel.
                let noises: Vec<Tensor> = chunk
                    .iter()
                    .map(|&i| {
                        let l = items[i].enc_input.len();
                        Tensor::new(
                            vec![l, self.cfg.latent],
                            normal_vec(&mut eps_rng, l * self.cfg.latent),
                        )
                        .expect("shape consistent")
                    })
                    .collect();
                let results: Vec<Result<(VaeLossParts, std::collections::BTreeMap<String, Tensor>), VaeError>> =
                    chunk
                        .par_iter()
                        .zip(noises.par_iter())
                        .map(|(&i, eps)| {
                            let mut g = Graph::new();
                            let (total, ce, mse, kl) = self.loss_graph(&mut g, &items[i], eps)?;
                            g.backward(total)?;
                            let grads = g.param_grads()?;
                            let parts = VaeLossParts {
                                cross_entropy: ce.map_or(0.0, |id| g.value(id).item()),
                                mse: mse.map_or(0.0, |id| g.value(id).item()),
                                kl: g.value(kl).item(),
                                total: g.value(total).item(),
                            };
                            Ok((parts, grads))
                        })
                        .collect();
                let mut grad_sum: Option<std::collections::BTreeMap<String, Tensor>> = None;
                let mut batch_count = 0usize;
                for r in results {
                    let (parts, grads) = r?;
                    epoch_parts.add(&parts);
                    count += 1;
                    batch_count += 1;
                    match &mut grad_sum {
                        None => grad_sum = Some(grads),
                        Some(acc) => {
                            for (name, g) in grads {
                                acc.get_mut(&name).expect("same param set").axpy(1.0, &g);
                            }
                        }
                    }
                }
                if let Some(mut grads) = grad_sum {
                    let scale = 1.0 / batch_count as f64;
                    for g in grads.values_mut() {
                        *g = g.scale(scale);
                    }
                    adam.step(&mut self.params, &grads).map_err(VaeError::Nn)?;
                }
            }
            history.push(epoch_parts.scaled(1.0 / count.max(1) as f64));
        }
        Ok(history)
    }

    /// Next-token distribution over the 20 residues given the latent and a
    /// prefix (teacher-forced decode of position `prefix.len()`).
    pub fn decode_sequence(
        &self,
        latent: &LatentSeq,
        prefix: &[usize],
    ) -> Result<Vec<f64>, VaeError> {
        if self.level != Level::AminoAcid {
            return Err(VaeError::LevelMismatch { expected: Level::AminoAcid });
        }
        if latent.dim() != self.cfg.latent {
            return Err(VaeError::LatentDim { expected: self.cfg.latent, got: latent.dim() });
        }
        let k = prefix.len();
        assert!(k < latent.len(), "prefix already covers the whole latent");
        let mut input_tokens = Vec::with_capacity(k + 1);
        input_tokens.push(BOS);
        input_tokens.extend_from_slice(prefix);

        let mut g = Graph::new();
        let z_slice = Tensor::new(
            vec![k + 1, self.cfg.latent],
            latent.tokens.data()[..(k + 1) * self.cfg.latent].to_vec(),
        )
        .expect("shape consistent");
        let z = g.constant(z_slice);
        let logits =
            decoder::sequence_decoder_forward(&mut g, &self.params, &self.cfg.dec, z, &input_tokens)?;
        let probs = g.softmax(logits);
        let row = g.value(probs).row(k).to_vec();
        let sum: f64 = row.iter().sum();
        Ok(row.iter().map(|v| v / sum).collect())
    }

    /// Greedy autoregressive decode of a full sequence from a latent.
    pub fn greedy_decode_sequence(&self, latent: &LatentSeq) -> Result<String, VaeError> {
        let mut prefix = Vec::with_capacity(latent.len());
        for _ in 0..latent.len() {
            let dist = self.decode_sequence(latent, &prefix)?;
            let best = dist
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probs"))
                .map(|(i, _)| i)
                .expect("non-empty distribution");
            prefix.push(best);
        }
        Ok(prefix.iter().map(|&i| crate::residues::code_of(i) as char).collect())
    }

    /// Autoregressive decode of per-residue geometric features. Backbone
    /// level emits `[distance, τ1, τ2, τ3]` (row 0 is zeros), atom level
    /// `[χ1..χ4]` wrapped into `(-π, π]`.
    pub fn decode_geometry(&self, latent: &LatentSeq) -> Result<Vec<[f64; 4]>, VaeError> {
        if self.level == Level::AminoAcid {
            return Err(VaeError::LevelMismatch { expected: self.level });
        }
        if latent.dim() != self.cfg.latent {
            return Err(VaeError::LatentDim { expected: self.cfg.latent, got: latent.dim() });
        }
        let positive_first = self.level == Level::Backbone;
        let l = latent.len();
        let start = if positive_first { 1 } else { 0 };
        let mut feats: Vec<[f64; 4]> = vec![[0.0; 4]; l];
        for k in start..l {
            let mut prev = Tensor::zeros(&[k + 1, 4]);
            for i in 1..=k {
                prev.data_mut()[i * 4..(i + 1) * 4].copy_from_slice(&feats[i - 1]);
            }
            let z_slice = Tensor::new(
                vec![k + 1, self.cfg.latent],
                latent.tokens.data()[..(k + 1) * self.cfg.latent].to_vec(),
            )
            .expect("shape consistent");
            let mut g = Graph::new();
            let z = g.constant(z_slice);
            let raw =
                decoder::geometry_decoder_forward(&mut g, &self.params, &self.cfg.dec, z, &prev)?;
            feats[k] = decoder::transform_geometry_row(g.value(raw).row(k), positive_first);
        }
        Ok(feats)
    }
}

fn shuffle(order: &mut [usize], rng: &mut PortableRng) {
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}
