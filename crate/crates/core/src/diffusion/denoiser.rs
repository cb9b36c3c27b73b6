//! Per-level noise prediction network with the conditional-flow input.
//!
//! The lower level's latent enters through a learned `d×d` projection added
//! to the noisy latent before the input projection; class and timestep
//! embeddings are broadcast onto every token after it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DiffusionError;
use crate::nn::{
    timestep_embedding, Graph, NodeId, ParamStore, Tensor, Transformer, TransformerConfig,
};
use crate::rng::stream_rng;
use crate::vae::Level;

/// Denoiser shape. `desk` is the small default (depth 2, hidden 64);
/// `paper_scale` documents the full-size configuration (12 blocks, hidden
/// 768).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub latent: usize,
    pub tf: TransformerConfig,
    pub cond_dim: usize,
    pub time_dim: usize,
    pub max_len: usize,
    pub num_classes: usize,
}

impl DenoiserConfig {
    pub fn desk(num_classes: usize) -> Self {
        Self {
            latent: 16,
            tf: TransformerConfig { depth: 2, hidden: 64, heads: 2, mlp_ratio: 2 },
            cond_dim: 32,
            time_dim: 64,
            max_len: 64,
            num_classes,
        }
    }

    pub fn paper_scale(num_classes: usize) -> Self {
        Self {
            latent: 384,
            tf: TransformerConfig { depth: 12, hidden: 768, heads: 12, mlp_ratio: 4 },
            cond_dim: 768,
            time_dim: 256,
            max_len: 512,
            num_classes,
        }
    }
}

/// One level's denoiser ε^i.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub level: Level,
    pub cfg: DenoiserConfig,
    pub params: ParamStore,
}

impl Denoiser {
    pub fn init(level: Level, cfg: DenoiserConfig, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0xD1F0_0000 + level.index() as u64);
        let mut params = ParamStore::new();
        init_params(&mut params, &cfg, &mut rng);
        Self { level, cfg, params }
    }

    fn check_class_ids(&self, class_ids: &[usize]) -> Result<(), DiffusionError> {
        for &id in class_ids {
            if id == 0 || id > self.cfg.num_classes {
                return Err(DiffusionError::ClassOutOfRange {
                    id,
                    num_classes: self.cfg.num_classes,
                });
            }
        }
        if class_ids.is_empty() {
            return Err(DiffusionError::ClassOutOfRange { id: 0, num_classes: self.cfg.num_classes });
        }
        Ok(())
    }

    /// Builds the ε̂ prediction inside an existing graph (training path).
    /// `lower` is the diffused lower-level latent at the same timestep; the
    /// atom level must pass `None` (or all zeros).
    pub(crate) fn forward_graph(
        &self,
        g: &mut Graph,
        z_t: &Tensor,
        lower: Option<&Tensor>,
        class_ids: &[usize],
        t: usize,
    ) -> Result<NodeId, DiffusionError> {
        self.check_class_ids(class_ids)?;
        let len = z_t.rows();
        if z_t.cols() != self.cfg.latent || len > self.cfg.max_len {
            return Err(DiffusionError::LatentShape {
                expected: vec![self.cfg.max_len, self.cfg.latent],
                got: z_t.shape().to_vec(),
            });
        }
        if self.level == Level::Atom {
            if let Some(lower) = lower {
                if lower.data().iter().any(|&v| v != 0.0) {
                    return Err(DiffusionError::NonzeroLowerLatent);
                }
            }
        }

        let z = g.constant(z_t.clone());
        let x = match lower {
            Some(lower_latent) if self.level != Level::Atom => {
                if lower_latent.shape() != z_t.shape() {
                    return Err(DiffusionError::LatentShape {
                        expected: z_t.shape().to_vec(),
                        got: lower_latent.shape().to_vec(),
                    });
                }
                let low = g.constant(lower_latent.clone());
                let w_lower = self.params.load(g, "w_lower")?;
                let projected = g.matmul(low, w_lower)?;
                g.add(z, projected)?
            }
            _ => z,
        };

        let w_in = self.params.load(g, "in_proj.w")?;
        let b_in = self.params.load(g, "in_proj.b")?;
        let h = g.matmul(x, w_in)?;
        let h = g.add_row(h, b_in)?;

        // Position, class and timestep conditioning added to every token.
        let pos_table = self.params.load(g, "pos")?;
        let positions: Vec<usize> = (0..len).collect();
        let pos = g.gather_rows(pos_table, &positions)?;
        let h = g.add(h, pos)?;

        let cond_table = self.params.load(g, "cond")?;
        let rows: Vec<usize> = class_ids.iter().map(|&id| id - 1).collect();
        let gathered = g.gather_rows(cond_table, &rows)?;
        // Label sets use the mean of their member embeddings.
        let ones = g.constant(Tensor::full(&[1, rows.len()], 1.0 / rows.len() as f64));
        let cond = g.matmul(ones, gathered)?;
        let w_c = self.params.load(g, "cond_proj.w")?;
        let b_c = self.params.load(g, "cond_proj.b")?;
        let cond = g.matmul(cond, w_c)?;
        let cond = g.add_row(cond, b_c)?;

        let gamma = g.constant(timestep_embedding(t, self.cfg.time_dim));
        let w_t = self.params.load(g, "time_proj.w")?;
        let b_t = self.params.load(g, "time_proj.b")?;
        let gamma = g.matmul(gamma, w_t)?;
        let gamma = g.add_row(gamma, b_t)?;

        let inject = g.add(cond, gamma)?;
        let h = g.add_row(h, inject)?;

        let h = Transformer::new("tf", self.cfg.tf).forward(g, &self.params, h, false)?;
        let w_out = self.params.load(g, "head.w")?;
        let b_out = self.params.load(g, "head.b")?;
        let out = g.matmul(h, w_out)?;
        Ok(g.add_row(out, b_out)?)
    }

    /// Plain ε̂ prediction (sampling path, no gradients kept).
    pub fn predict_noise(
        &self,
        z_t: &Tensor,
        lower: Option<&Tensor>,
        class_ids: &[usize],
        t: usize,
    ) -> Result<Tensor, DiffusionError> {
        let mut g = Graph::new();
        let out = self.forward_graph(&mut g, z_t, lower, class_ids, t)?;
        Ok(g.value(out).clone())
    }
}

fn init_params(store: &mut ParamStore, cfg: &DenoiserConfig, rng: &mut impl Rng) {
    store.insert("w_lower", Tensor::fan_in_init(cfg.latent, cfg.latent, rng));
    store.insert("in_proj.w", Tensor::fan_in_init(cfg.latent, cfg.tf.hidden, rng));
    store.insert("in_proj.b", Tensor::zeros(&[cfg.tf.hidden]));
    store.insert("pos", Tensor::fan_in_init(cfg.max_len, cfg.tf.hidden, rng));
    store.insert("cond", Tensor::fan_in_init(cfg.num_classes, cfg.cond_dim, rng));
    store.insert("cond_proj.w", Tensor::fan_in_init(cfg.cond_dim, cfg.tf.hidden, rng));
    store.insert("cond_proj.b", Tensor::zeros(&[cfg.tf.hidden]));
    store.insert("time_proj.w", Tensor::fan_in_init(cfg.time_dim, cfg.tf.hidden, rng));
    store.insert("time_proj.b", Tensor::zeros(&[cfg.tf.hidden]));
    Transformer::new("tf", cfg.tf).init(store, rng);
    store.insert("head.w", Tensor::fan_in_init(cfg.tf.hidden, cfg.latent, rng));
    store.insert("head.b", Tensor::zeros(&[cfg.latent]));
}
