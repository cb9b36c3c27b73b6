//! Teacher-forced training of the three level denoisers.
//!
//! Every level draws its diffusion noise from its own seeded stream and owns
//! its parameters and optimizer state, so the levels train independently:
//! running one level alone reproduces its joint-training loss trajectory bit
//! for bit, and no gradient ever crosses levels.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;

use super::denoiser::{Denoiser, DenoiserConfig};
use super::{forward_diffuse, DiffusionError, DiffusionSchedule, LevelSwitches};
use crate::nn::{Adam, AdamConfig, Graph, Tensor};
use crate::rng::{normal_vec, stream_rng};
use crate::vae::Level;

const STREAM_ORDER: u64 = 0xA1;
const STREAM_T: u64 = 0xA2;
const STREAM_NOISE: u64 = 0xB0; // + level index

/// Per-dimension normalization of ground-truth latents; stored with the
/// model and inverted before decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentStats {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Fits per-dimension moments over all tokens of all latents.
    pub fn fit<'a>(latents: impl Iterator<Item = &'a Tensor>, dim: usize) -> Self {
        let mut sum = vec![0.0; dim];
        let mut sumsq = vec![0.0; dim];
        let mut count = 0usize;
        for t in latents {
            debug_assert_eq!(t.cols(), dim);
            for r in 0..t.rows() {
                for (k, &v) in t.row(r).iter().enumerate() {
                    sum[k] += v;
                    sumsq[k] += v * v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Self::identity(dim);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sumsq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| ((sq / n - m * m).max(0.0)).sqrt().max(1e-6))
            .collect();
        Self { mean, std }
    }

    pub fn normalize(&self, t: &Tensor) -> Tensor {
        let cols = t.cols();
        let mut out = t.clone();
        for r in 0..out.rows() {
            let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
        out
    }

    pub fn denormalize(&self, t: &Tensor) -> Tensor {
        let cols = t.cols();
        let mut out = t.clone();
        for r in 0..out.rows() {
            let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
            for (k, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[k] + self.mean[k];
            }
        }
        out
    }
}

/// Ground-truth latents of one record (raw, unnormalized) plus its condition.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub latents: BTreeMap<Level, Tensor>,
    pub class_ids: Vec<usize>,
}

pub type LevelLosses = BTreeMap<Level, f64>;

/// The hierarchical diffusion model: one denoiser per active level plus the
/// latent normalization stats.
#[derive(Debug, Clone)]
pub struct HierDiffusion {
    pub schedule: DiffusionSchedule,
    pub switches: LevelSwitches,
    pub denoisers: BTreeMap<Level, Denoiser>,
    pub stats: BTreeMap<Level, LatentStats>,
}

impl HierDiffusion {
    /// Fresh denoisers for every active level; each level initializes from
    /// its own stream so removing a level never shifts another's weights.
    pub fn init(
        cfg: DenoiserConfig,
        schedule: DiffusionSchedule,
        switches: LevelSwitches,
        seed: u64,
    ) -> Self {
        let mut denoisers = BTreeMap::new();
        let mut stats = BTreeMap::new();
        for level in switches.active() {
            denoisers.insert(level, Denoiser::init(level, cfg, seed));
            stats.insert(level, LatentStats::identity(cfg.latent));
        }
        Self { schedule, switches, denoisers, stats }
    }

    pub fn latent_dim(&self) -> usize {
        self.denoisers.values().next().map_or(0, |d| d.cfg.latent)
    }

    /// Fits normalization stats per active level from the training latents.
    pub fn fit_stats(&mut self, items: &[TrainItem]) -> Result<(), DiffusionError> {
        let dim = self.latent_dim();
        for level in self.switches.active() {
            for item in items {
                if !item.latents.contains_key(&level) {
                    return Err(DiffusionError::MissingLevelData(level));
                }
            }
            let stats = LatentStats::fit(items.iter().map(|i| &i.latents[&level]), dim);
            self.stats.insert(level, stats);
        }
        Ok(())
    }

    /// Prepares the diffused latents z_t for every active level of one item.
    /// Teacher forcing: the ground-truth latent of the level below, diffused
    /// to the same timestep, becomes the conditioning input.
    fn prepare(
        &self,
        item: &TrainItem,
        t: usize,
        noise_rngs: &mut BTreeMap<Level, crate::rng::PortableRng>,
    ) -> Result<BTreeMap<Level, (Tensor, Tensor)>, DiffusionError> {
        let mut out = BTreeMap::new();
        for level in self.switches.active() {
            let z0 = item
                .latents
                .get(&level)
                .ok_or(DiffusionError::MissingLevelData(level))?;
            let z0 = self.stats[&level].normalize(z0);
            let rng = noise_rngs.get_mut(&level).expect("active level stream");
            let eps = Tensor::new(vec![z0.rows(), z0.cols()], normal_vec(rng, z0.numel()))
                .expect("shape consistent");
            let z_t = forward_diffuse(&z0, t, &self.schedule, &eps)?;
            out.insert(level, (z_t, eps));
        }
        Ok(out)
    }

    /// One pass over the dataset in seeded minibatch order. Only levels in
    /// `train_levels` (when given) compute losses and update; the noise and
    /// timestep streams advance identically either way.
    #[allow(clippy::too_many_arguments)]
    pub fn train_epoch(
        &mut self,
        items: &[TrainItem],
        epoch: usize,
        batch_size: usize,
        optimizers: &mut BTreeMap<Level, Adam>,
        seed: u64,
        train_levels: Option<&BTreeSet<Level>>,
    ) -> Result<LevelLosses, DiffusionError> {
        let active = self.switches.active();
        let training: Vec<Level> = active
            .iter()
            .copied()
            .filter(|l| train_levels.is_none_or(|set| set.contains(l)))
            .collect();

        let epoch_key = (epoch as u64 + 1) << 16;
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut order_rng = stream_rng(seed, STREAM_ORDER ^ epoch_key);
        for i in (1..order.len()).rev() {
            let j = order_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut t_rng = stream_rng(seed, STREAM_T ^ epoch_key);
        let mut noise_rngs: BTreeMap<Level, crate::rng::PortableRng> = active
            .iter()
            .map(|l| (*l, stream_rng(seed, (STREAM_NOISE + l.index() as u64) ^ epoch_key)))
            .collect();

        let mut loss_sums: LevelLosses = training.iter().map(|l| (*l, 0.0)).collect();
        let mut count = 0usize;

        for chunk in order.chunks(batch_size.max(1)) {
            // Sequential draw of timesteps and noises (stream discipline),
            // parallel loss/gradient evaluation.
            let mut preps = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let t = t_rng.random_range(1..=self.schedule.timesteps());
                let diffused = self.prepare(&items[idx], t, &mut noise_rngs)?;
                preps.push((idx, t, diffused));
            }

            type SampleResult =
                Result<BTreeMap<Level, (f64, BTreeMap<String, Tensor>)>, DiffusionError>;
            let results: Vec<SampleResult> = preps
                .par_iter()
                .map(|(idx, t, diffused)| {
                    let mut per_level = BTreeMap::new();
                    for &level in &training {
                        let denoiser = &self.denoisers[&level];
                        let (z_t, eps) = &diffused[&level];
                        let lower = self
                            .switches
                            .lower_source(level)
                            .map(|src| diffused[&src].0.clone());
                        let mut g = Graph::new();
                        let eps_hat =
                            denoiser.forward_graph(&mut g, z_t, lower.as_ref(), &items[*idx].class_ids, *t)?;
                        let target = g.constant(eps.clone());
                        let diff = g.sub(eps_hat, target)?;
                        let sq = g.mul(diff, diff)?;
                        let loss = g.mean_all(sq);
                        g.backward(loss)?;
                        let grads = g.param_grads()?;
                        per_level.insert(level, (g.value(loss).item(), grads));
                    }
                    Ok(per_level)
                })
                .collect();

            let mut grad_sums: BTreeMap<Level, BTreeMap<String, Tensor>> = BTreeMap::new();
            let mut batch_count = 0usize;
            for r in results {
                let per_level = r?;
                batch_count += 1;
                count += 1;
                for (level, (loss, grads)) in per_level {
                    *loss_sums.get_mut(&level).expect("training level") += loss;
                    match grad_sums.entry(level) {
                        std::collections::btree_map::Entry::Vacant(e) => {
                            e.insert(grads);
                        }
                        std::collections::btree_map::Entry::Occupied(mut e) => {
                            for (name, g) in grads {
                                e.get_mut().get_mut(&name).expect("same params").axpy(1.0, &g);
                            }
                        }
                    }
                }
            }
            for (level, mut grads) in grad_sums {
                let scale = 1.0 / batch_count as f64;
                for g in grads.values_mut() {
                    *g = g.scale(scale);
                }
                let denoiser = self.denoisers.get_mut(&level).expect("active level");
                optimizers
                    .get_mut(&level)
                    .expect("optimizer per level")
                    .step(&mut denoiser.params, &grads)?;
            }
        }

        let n = count.max(1) as f64;
        Ok(loss_sums.into_iter().map(|(l, s)| (l, s / n)).collect())
    }

    /// Full training loop; returns the per-epoch, per-level mean losses.
    pub fn train(
        &mut self,
        items: &[TrainItem],
        epochs: usize,
        batch_size: usize,
        adam_cfg: AdamConfig,
        seed: u64,
        train_levels: Option<&BTreeSet<Level>>,
    ) -> Result<Vec<LevelLosses>, DiffusionError> {
        self.fit_stats(items)?;
        let mut optimizers: BTreeMap<Level, Adam> = self
            .switches
            .active()
            .into_iter()
            .map(|l| (l, Adam::new(adam_cfg)))
            .collect();
        let mut history = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            history.push(self.train_epoch(
                items,
                epoch,
                batch_size,
                &mut optimizers,
                seed,
                train_levels,
            )?);
        }
        Ok(history)
    }
}
