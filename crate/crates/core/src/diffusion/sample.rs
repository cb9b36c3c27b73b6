//! Hierarchical ancestral sampling: at each reverse step the active levels
//! update in atom → backbone → amino-acid order, each conditioning on the
//! level below's latent at the same timestep (the pre-update snapshot).

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::train::HierDiffusion;
use super::{DiffusionError, DiffusionSchedule};
use crate::nn::Tensor;
use crate::rng::{normal_vec, stream_rng};
use crate::vae::Level;

const STREAM_SAMPLE: u64 = 0x5A00;

/// One ancestral reverse step with fixed variance σ² = β_t:
/// `x_{t-1} = (x_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t + √β_t·noise`.
pub fn reverse_step(
    z_t: &Tensor,
    eps_hat: &Tensor,
    t: usize,
    schedule: &DiffusionSchedule,
    noise: Option<&Tensor>,
) -> Result<Tensor, DiffusionError> {
    if t == 0 || t > schedule.timesteps() {
        return Err(DiffusionError::BadTimestep { t, max: schedule.timesteps() });
    }
    if z_t.shape() != eps_hat.shape() {
        return Err(DiffusionError::LatentShape {
            expected: z_t.shape().to_vec(),
            got: eps_hat.shape().to_vec(),
        });
    }
    let beta = schedule.beta(t);
    let coeff = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
    let mut out = z_t.clone();
    out.axpy(-coeff, eps_hat);
    let mut out = out.scale(1.0 / schedule.alpha(t).sqrt());
    if let Some(n) = noise {
        out.axpy(beta.sqrt(), n);
    }
    Ok(out)
}

/// Latents of one generated sample, denormalized back to encoder scale.
#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub latents: BTreeMap<Level, Tensor>,
    pub class_ids: Vec<usize>,
    pub length: usize,
}

impl HierDiffusion {
    /// Draws `lengths.len()` samples under one condition. Each sample uses
    /// its own derived stream, so results are deterministic for a fixed seed
    /// regardless of parallel scheduling.
    pub fn sample(
        &self,
        class_ids: &[usize],
        lengths: &[usize],
        seed: u64,
    ) -> Result<Vec<SampleOutput>, DiffusionError> {
        let dim = self.latent_dim();
        let active = self.switches.active();
        lengths
            .par_iter()
            .enumerate()
            .map(|(s, &len)| {
                let mut rng = stream_rng(seed, STREAM_SAMPLE + s as u64);
                let mut current: BTreeMap<Level, Tensor> = BTreeMap::new();
                for &level in &active {
                    let init = Tensor::new(vec![len, dim], normal_vec(&mut rng, len * dim))
                        .expect("shape consistent");
                    current.insert(level, init);
                }
                for t in (1..=self.schedule.timesteps()).rev() {
                    // Conditioning reads the snapshot at timestep t.
                    let snapshot = current.clone();
                    for &level in &active {
                        let lower = self.switches.lower_source(level).map(|src| &snapshot[&src]);
                        let eps_hat = self.denoisers[&level].predict_noise(
                            &snapshot[&level],
                            lower.map(|v| v as &Tensor),
                            class_ids,
                            t,
                        )?;
                        let noise = if t > 1 {
                            Some(
                                Tensor::new(vec![len, dim], normal_vec(&mut rng, len * dim))
                                    .expect("shape consistent"),
                            )
                        } else {
                            None
                        };
                        let stepped = reverse_step(
                            &snapshot[&level],
                            &eps_hat,
                            t,
                            &self.schedule,
                            noise.as_ref(),
                        )?;
                        current.insert(level, stepped);
                    }
                }
                let latents = current
                    .into_iter()
                    .map(|(level, z)| (level, self.stats[&level].denormalize(&z)))
                    .collect();
                Ok(SampleOutput { latents, class_ids: class_ids.to_vec(), length: len })
            })
            .collect()
    }
}
