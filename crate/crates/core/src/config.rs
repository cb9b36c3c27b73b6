//! Run configuration: a single JSON-serializable struct with the desk-scale
//! defaults. Unknown keys are rejected; CLI flags override file values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::diffusion::{DenoiserConfig, LevelSwitches};
use crate::meta_eval::ConsistencyMetric;
use crate::nn::TransformerConfig;
use crate::vae::VaeConfig;

/// Model sequence capacities supported by the config.
pub const SUPPORTED_MAX_LEN: [usize; 4] = [64, 128, 256, 512];

/// All knobs of a run. Defaults are the desk-scale configuration; the
/// paper-scale values (latent 384, 8 decoder blocks with 8 heads, 12
/// denoiser blocks at hidden 768, lr 1e-4) are documented on
/// [`VaeConfig::paper_scale`] and [`DenoiserConfig::paper_scale`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,

    // Synthetic dataset.
    pub classes: usize,
    pub per_class: usize,
    pub min_len: usize,
    pub max_len_data: usize,
    pub motif_density: f64,

    // Geometry.
    pub contact_threshold: f64,
    pub canon_fallback: bool,

    // Model capacity (shared latent dimension across levels).
    pub latent: usize,
    pub max_len: usize,
    pub enc_hidden: usize,
    pub enc_rounds: usize,
    pub vae_depth: usize,
    pub vae_hidden: usize,
    pub vae_heads: usize,
    pub vae_mlp_ratio: usize,
    pub kl_weight: f64,
    pub dit_depth: usize,
    pub dit_hidden: usize,
    pub dit_heads: usize,
    pub dit_mlp_ratio: usize,
    pub cond_dim: usize,
    pub time_dim: usize,

    // Diffusion schedule.
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,

    // Level switches (Table-3 style ablations).
    pub remove_atom: bool,
    pub remove_backbone: bool,

    // Training.
    pub vae_epochs: usize,
    pub vae_lr: f64,
    pub vae_batch: usize,
    pub diff_epochs: usize,
    pub diff_lr: f64,
    pub diff_batch: usize,

    // Generation / evaluation.
    pub gen_per_class: usize,
    pub metric: ConsistencyMetric,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            classes: 3,
            per_class: 50,
            min_len: 40,
            max_len_data: 60,
            motif_density: 0.4,
            contact_threshold: 8.0,
            canon_fallback: false,
            latent: 16,
            max_len: 64,
            enc_hidden: 32,
            enc_rounds: 2,
            vae_depth: 2,
            vae_hidden: 64,
            vae_heads: 2,
            vae_mlp_ratio: 2,
            kl_weight: 1e-5,
            dit_depth: 2,
            dit_hidden: 64,
            dit_heads: 2,
            dit_mlp_ratio: 2,
            cond_dim: 32,
            time_dim: 64,
            timesteps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
            remove_atom: false,
            remove_backbone: false,
            vae_epochs: 30,
            vae_lr: 3e-3,
            vae_batch: 16,
            diff_epochs: 40,
            diff_lr: 1e-3,
            diff_batch: 16,
            gen_per_class: 16,
            metric: ConsistencyMetric::ProteinMmd,
        }
    }
}

impl RunConfig {
    /// Validates value constraints (the serde layer already rejects unknown
    /// keys).
    pub fn validate(&self) -> Result<(), String> {
        if !SUPPORTED_MAX_LEN.contains(&self.max_len) {
            return Err(format!(
                "max_len {} unsupported; pick one of {SUPPORTED_MAX_LEN:?}",
                self.max_len
            ));
        }
        if self.classes < 2 {
            return Err("need at least 2 classes".into());
        }
        if self.min_len < 3 || self.min_len > self.max_len_data {
            return Err("bad dataset length range".into());
        }
        if self.max_len_data > self.max_len {
            return Err(format!(
                "dataset max length {} exceeds model capacity {}",
                self.max_len_data, self.max_len
            ));
        }
        if !(0.0..=1.0).contains(&self.motif_density) {
            return Err("motif_density must lie in [0, 1]".into());
        }
        if self.timesteps == 0 || self.beta_start <= 0.0 || self.beta_end >= 1.0 {
            return Err("bad diffusion schedule parameters".into());
        }
        if self.contact_threshold <= 0.0 {
            return Err("contact_threshold must be positive".into());
        }
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            classes: self.classes,
            per_class: self.per_class,
            min_len: self.min_len,
            max_len: self.max_len_data,
            motif_density: self.motif_density,
        }
    }

    pub fn vae_config(&self) -> VaeConfig {
        VaeConfig {
            latent: self.latent,
            enc_hidden: self.enc_hidden,
            enc_rounds: self.enc_rounds,
            dec: TransformerConfig {
                depth: self.vae_depth,
                hidden: self.vae_hidden,
                heads: self.vae_heads,
                mlp_ratio: self.vae_mlp_ratio,
            },
            max_len: self.max_len,
            kl_weight: self.kl_weight,
        }
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            latent: self.latent,
            tf: TransformerConfig {
                depth: self.dit_depth,
                hidden: self.dit_hidden,
                heads: self.dit_heads,
                mlp_ratio: self.dit_mlp_ratio,
            },
            cond_dim: self.cond_dim,
            time_dim: self.time_dim,
            max_len: self.max_len,
            num_classes: self.classes,
        }
    }

    pub fn switches(&self) -> Result<LevelSwitches, crate::diffusion::DiffusionError> {
        LevelSwitches::from_removals(self.remove_atom, self.remove_backbone, false)
    }

    /// Loads a config file (JSON with these exact keys).
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form; recorded in run manifests.
    pub fn hash(&self) -> String {
        use sha2::Digest;
        let canon = serde_json::to_string(self).expect("serializable");
        let digest = sha2::Sha256::digest(canon.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
