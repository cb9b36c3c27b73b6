//! Three-level latent DDPM: schedules, forward diffusion, per-level
//! denoisers with the conditional flow between levels, teacher-forced
//! training and hierarchical ancestral sampling.

mod denoiser;
mod sample;
mod train;

pub use denoiser::{Denoiser, DenoiserConfig};
pub use sample::{reverse_step, SampleOutput};
pub use train::{HierDiffusion, LatentStats, LevelLosses, TrainItem};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{NnError, Tensor};
use crate::vae::Level;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("timestep {t} outside schedule (T = {max})")]
    BadTimestep { t: usize, max: usize },
    #[error("bad schedule: {0}")]
    BadSchedule(String),
    #[error("the atom level conditions on z⁰ = 0; got a nonzero lower latent")]
    NonzeroLowerLatent,
    #[error("class id {id} outside 1..={num_classes}")]
    ClassOutOfRange { id: usize, num_classes: usize },
    #[error("no ground-truth latent for level {0:?}")]
    MissingLevelData(Level),
    #[error("the amino-acid level cannot be removed")]
    CannotRemoveSequenceLevel,
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("latent shape {got:?} does not match expected {expected:?}")]
    LatentShape { expected: Vec<usize>, got: Vec<usize> },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// β/α/ᾱ tables for `T` steps; `ᾱ(0)` is 1 by convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    /// Builds from explicit β values, validating 0 < β < 1 and strict
    /// monotonicity of ᾱ.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::BadSchedule("empty schedule".into()));
        }
        let mut alphas = Vec::with_capacity(betas.len());
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for (i, &b) in betas.iter().enumerate() {
            if !(0.0 < b && b < 1.0) {
                return Err(DiffusionError::BadSchedule(format!("β_{} = {b} out of (0,1)", i + 1)));
            }
            let a = 1.0 - b;
            prod *= a;
            alphas.push(a);
            alpha_bars.push(prod);
        }
        for w in alpha_bars.windows(2) {
            if w[1] >= w[0] {
                return Err(DiffusionError::BadSchedule("ᾱ not strictly decreasing".into()));
            }
        }
        Ok(Self { betas, alphas, alpha_bars })
    }

    /// Linear β schedule; the desk-scale default is
    /// `linear(200, 1e-4, 0.02)`.
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self, DiffusionError> {
        if timesteps == 0 {
            return Err(DiffusionError::BadSchedule("need at least one step".into()));
        }
        let betas = (0..timesteps)
            .map(|i| {
                if timesteps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    /// β_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// α_t = 1 − β_t for t in 1..=T.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// ᾱ_t = Π α_s for t in 0..=T (ᾱ_0 = 1).
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }
}

/// Closed-form forward marginal: `x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε`.
pub fn forward_diffuse(
    x0: &Tensor,
    t: usize,
    schedule: &DiffusionSchedule,
    noise: &Tensor,
) -> Result<Tensor, DiffusionError> {
    if t > schedule.timesteps() {
        return Err(DiffusionError::BadTimestep { t, max: schedule.timesteps() });
    }
    if x0.shape() != noise.shape() {
        return Err(DiffusionError::LatentShape {
            expected: x0.shape().to_vec(),
            got: noise.shape().to_vec(),
        });
    }
    let ab = schedule.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = x0.scale(sa);
    out.axpy(sn, noise);
    Ok(out)
}

/// Which levels participate; the amino-acid level is always retained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSwitches {
    pub atom: bool,
    pub backbone: bool,
}

impl Default for LevelSwitches {
    fn default() -> Self {
        Self::full()
    }
}

impl LevelSwitches {
    pub fn full() -> Self {
        Self { atom: true, backbone: true }
    }

    /// Table-3 style ablation flags. Removing the amino-acid level is
    /// rejected.
    pub fn from_removals(
        remove_atom: bool,
        remove_backbone: bool,
        remove_amino_acid: bool,
    ) -> Result<Self, DiffusionError> {
        if remove_amino_acid {
            return Err(DiffusionError::CannotRemoveSequenceLevel);
        }
        Ok(Self { atom: !remove_atom, backbone: !remove_backbone })
    }

    pub fn is_active(&self, level: Level) -> bool {
        match level {
            Level::Atom => self.atom,
            Level::Backbone => self.backbone,
            Level::AminoAcid => true,
        }
    }

    /// Active levels in conditional-flow order (atom → backbone → amino
    /// acid).
    pub fn active(&self) -> Vec<Level> {
        Level::all().into_iter().filter(|&l| self.is_active(l)).collect()
    }

    /// The nearest active level below `level`: the source of its
    /// conditional-flow input. Removed levels are skipped entirely, so with
    /// the backbone removed the amino-acid level conditions on the atom
    /// latent; with everything below removed the input is the zero matrix.
    pub fn lower_source(&self, level: Level) -> Option<Level> {
        let idx = level.index();
        Level::all()
            .into_iter()
            .filter(|l| l.index() < idx && self.is_active(*l))
            .max_by_key(|l| l.index())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, stream_rng};
    use approx::assert_abs_diff_eq;

    #[test]
    fn schedule_tables_and_conventions() {
        let s = DiffusionSchedule::linear(200, 1e-4, 0.02).unwrap();
        assert_eq!(s.timesteps(), 200);
        assert_abs_diff_eq!(s.beta(1), 1e-4);
        assert_abs_diff_eq!(s.beta(200), 0.02);
        assert_eq!(s.alpha_bar(0), 1.0);
        for t in 1..=200 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert_abs_diff_eq!(s.alpha(t), 1.0 - s.beta(t), epsilon = 1e-15);
        }
    }

    #[test]
    fn bad_schedules_are_rejected() {
        assert!(DiffusionSchedule::from_betas(vec![]).is_err());
        assert!(DiffusionSchedule::from_betas(vec![0.0]).is_err());
        assert!(DiffusionSchedule::from_betas(vec![1.0]).is_err());
        assert!(DiffusionSchedule::linear(0, 1e-4, 0.02).is_err());
    }

    #[test]
    fn forward_diffuse_identity_at_t0_and_hand_case() {
        let s = DiffusionSchedule::linear(2, 0.5, 0.5).unwrap();
        let x0 = Tensor::vector(vec![1.0]);
        let zero = Tensor::vector(vec![0.0]);
        // t = 0 convention: ᾱ = 1 → x unchanged.
        assert_eq!(forward_diffuse(&x0, 0, &s, &zero).unwrap(), x0);
        // Constant β = 0.5, T = 2, noise 0, t = 2 → ᾱ₂ = 0.25, output 0.5.
        let x2 = forward_diffuse(&x0, 2, &s, &zero).unwrap();
        assert_abs_diff_eq!(x2.data()[0], 0.5, epsilon = 1e-15);
        // Out-of-range t rejected.
        assert!(matches!(
            forward_diffuse(&x0, 3, &s, &zero),
            Err(DiffusionError::BadTimestep { t: 3, max: 2 })
        ));
    }

    #[test]
    fn forward_marginal_matches_iterated_single_steps() {
        // Iterating q(x_t | x_{t-1}) with the same underlying Gaussians must
        // land on the closed-form marginal: check the deterministic part and
        // the accumulated variance by moment-matching equivalence.
        let mut rng = stream_rng(8, 1);
        for _ in 0..20 {
            use rand::Rng;
            let t_max = rng.random_range(1..=50);
            let betas: Vec<f64> =
                (0..t_max).map(|_| rng.random_range(1e-4..0.2)).collect();
            let s = DiffusionSchedule::from_betas(betas).unwrap();
            // Deterministic part: x_t = √ᾱ_t x0 when all noise is zero.
            let x0 = Tensor::vector(vec![rng.random_range(-2.0..2.0)]);
            let mut x = x0.clone();
            for t in 1..=t_max {
                x = x.scale((1.0 - s.beta(t)).sqrt());
            }
            let direct = forward_diffuse(&x0, t_max, &s, &Tensor::vector(vec![0.0])).unwrap();
            assert_abs_diff_eq!(x.data()[0], direct.data()[0], epsilon = 1e-9);
            // Variance part: Σ over steps of β_t·Πα accumulates to 1−ᾱ_t.
            let mut var = 0.0;
            let mut carry = 1.0;
            for t in (1..=t_max).rev() {
                var += carry * s.beta(t);
                carry *= s.alpha(t);
            }
            assert_abs_diff_eq!(var, 1.0 - s.alpha_bar(t_max), epsilon = 1e-9);
        }
    }

    #[test]
    fn forward_diffuse_monte_carlo_moments() {
        let s = DiffusionSchedule::linear(50, 1e-3, 0.05).unwrap();
        let t = 30;
        let x0 = Tensor::vector(vec![1.5]);
        let mut rng = stream_rng(13, 5);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let noise = Tensor::vector(normal_vec(&mut rng, 1));
            let xt = forward_diffuse(&x0, t, &s, &noise).unwrap().data()[0];
            sum += xt;
            sumsq += xt * xt;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let expect_mean = s.alpha_bar(t).sqrt() * 1.5;
        let expect_var = 1.0 - s.alpha_bar(t);
        // 3σ bands for the Monte-Carlo estimators.
        let mean_band = 3.0 * (expect_var / n as f64).sqrt();
        let var_band = 3.0 * expect_var * (2.0 / n as f64).sqrt();
        assert!((mean - expect_mean).abs() < mean_band, "{mean} vs {expect_mean}");
        assert!((var - expect_var).abs() < var_band, "{var} vs {expect_var}");
    }

    #[test]
    fn switches_route_conditioning_around_removed_levels() {
        let full = LevelSwitches::full();
        assert_eq!(full.lower_source(Level::Atom), None);
        assert_eq!(full.lower_source(Level::Backbone), Some(Level::Atom));
        assert_eq!(full.lower_source(Level::AminoAcid), Some(Level::Backbone));

        let no_backbone = LevelSwitches { atom: true, backbone: false };
        assert_eq!(no_backbone.lower_source(Level::AminoAcid), Some(Level::Atom));

        let none = LevelSwitches { atom: false, backbone: false };
        assert_eq!(none.lower_source(Level::AminoAcid), None);
        assert_eq!(none.active(), vec![Level::AminoAcid]);

        assert!(matches!(
            LevelSwitches::from_removals(false, false, true),
            Err(DiffusionError::CannotRemoveSequenceLevel)
        ));
    }
}
