//! End-to-end orchestration: featurize a dataset, train the per-level VAEs,
//! encode ground-truth latents, train the hierarchical diffusion model,
//! generate conditioned proteins and score them. Used by both the CLI and
//! the acceptance suite.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::data::{
    read_checkpoint, write_checkpoint, ConditionLabel, DataError, ProteinRecord,
};
use crate::diffusion::{
    Denoiser, DenoiserConfig, DiffusionError, DiffusionSchedule, HierDiffusion, LatentStats,
    LevelSwitches, TrainItem,
};
use crate::featurize::{backbone_steps_to_trace, featurize, FeaturizeError, LevelFeatures};
use crate::meta_eval::{class_distance, ClassReference, ConsistencyMetric, EvalError};
use crate::metrics::{embed_sequences, EmbeddingSet, MetricError};
use crate::nn::{AdamConfig, ParamStore, Tensor};
use crate::rng::stream_rng;
use crate::vae::{LatentSeq, Level, LevelVae, VaeError, VaeLossParts, VaeTrainItem};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Featurize(#[from] FeaturizeError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("checkpoint {path} is not a {expected} checkpoint")]
    WrongCheckpoint { path: String, expected: &'static str },
    #[error("{0}")]
    Invalid(String),
}

/// The three trained VAEs.
pub type LevelVaes = BTreeMap<Level, LevelVae>;

/// Featurizes every record (in parallel; order preserved).
pub fn featurize_dataset(
    records: &[ProteinRecord],
    cfg: &RunConfig,
) -> Result<Vec<LevelFeatures>, PipelineError> {
    records
        .par_iter()
        .map(|r| featurize(r, cfg.contact_threshold, cfg.canon_fallback).map_err(Into::into))
        .collect()
}

/// Trains one VAE per level (levels run in parallel; each level's stream is
/// independent, so results match sequential training).
pub fn train_vaes(
    features: &[LevelFeatures],
    cfg: &RunConfig,
    seed: u64,
) -> Result<(LevelVaes, BTreeMap<Level, Vec<VaeLossParts>>), PipelineError> {
    let vae_cfg = cfg.vae_config();
    let adam = AdamConfig { lr: cfg.vae_lr, ..AdamConfig::default() };
    let results: Vec<Result<(Level, LevelVae, Vec<VaeLossParts>), PipelineError>> =
        Level::all()
            .into_par_iter()
            .map(|level| {
                let items: Vec<VaeTrainItem> = features
                    .iter()
                    .map(|f| crate::vae::train_item(level, f))
                    .collect::<Result<_, _>>()?;
                let mut vae = LevelVae::init(level, vae_cfg, seed);
                let history = vae.train(&items, cfg.vae_epochs, cfg.vae_batch, adam, seed)?;
                Ok((level, vae, history))
            })
            .collect();
    let mut vaes = BTreeMap::new();
    let mut histories = BTreeMap::new();
    for r in results {
        let (level, vae, history) = r?;
        vaes.insert(level, vae);
        histories.insert(level, history);
    }
    Ok((vaes, histories))
}

/// Encodes ground-truth latents (posterior means) for diffusion training.
pub fn encode_latents(
    vaes: &LevelVaes,
    records: &[ProteinRecord],
    features: &[LevelFeatures],
) -> Result<Vec<TrainItem>, PipelineError> {
    records
        .par_iter()
        .zip(features.par_iter())
        .map(|(record, feats)| {
            let mut latents = BTreeMap::new();
            for (level, vae) in vaes {
                let input = vae.encoder_input(feats)?;
                let out = vae.encode(&input, None)?;
                latents.insert(*level, out.mean);
            }
            Ok(TrainItem { latents, class_ids: record.labels.ids() })
        })
        .collect()
}

/// Trains the hierarchical diffusion model over encoded latents.
pub fn train_diffusion(
    items: &[TrainItem],
    cfg: &RunConfig,
    switches: LevelSwitches,
    seed: u64,
) -> Result<(HierDiffusion, Vec<BTreeMap<Level, f64>>), PipelineError> {
    let schedule = DiffusionSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end)?;
    let mut model = HierDiffusion::init(cfg.denoiser_config(), schedule, switches, seed);
    let adam = AdamConfig { lr: cfg.diff_lr, ..AdamConfig::default() };
    let history = model.train(items, cfg.diff_epochs, cfg.diff_batch, adam, seed, None)?;
    Ok((model, history))
}

/// One decoded generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratedProtein {
    pub id: String,
    pub condition: ConditionLabel,
    pub length: usize,
    pub sequence: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub backbone_steps: Option<Vec<[f64; 4]>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub chi: Option<Vec<[f64; 4]>>,
    /// Per-level latent tokens (row-major `[L][d]`).
    pub latents: BTreeMap<String, Vec<Vec<f64>>>,
    pub seed: u64,
}

impl GeneratedProtein {
    /// Converts to a record: Cα trace from the decoded backbone steps (an
    /// idealized extended trace when the backbone level is ablated), χ
    /// torsions masked by residue type.
    pub fn to_record(&self) -> ProteinRecord {
        let ca_coords = match &self.backbone_steps {
            Some(steps) => backbone_steps_to_trace(steps),
            // Ablated backbone: evenly spaced extended trace.
            None => (0..self.length).map(|i| [3.8 * i as f64, 0.0, 0.0]).collect(),
        };
        let torsions = self.chi.as_ref().map(|chi| {
            let indices = crate::residues::validate_sequence(&self.sequence)
                .expect("decoded sequences are canonical");
            let mask: Vec<[bool; 4]> = indices
                .iter()
                .map(|&r| {
                    let n = crate::residues::chi_count(r);
                    std::array::from_fn(|k| k < n)
                })
                .collect();
            let angles = chi
                .iter()
                .zip(&mask)
                .map(|(a, m)| std::array::from_fn(|k| if m[k] { a[k] } else { 0.0 }))
                .collect();
            crate::geom::TorsionSet { angles, mask }
        });
        ProteinRecord {
            id: self.id.clone(),
            sequence: self.sequence.clone(),
            ca_coords,
            backbone_coords: None,
            torsions,
            labels: self.condition.clone(),
        }
    }
}

fn tensor_to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Samples and decodes `count` proteins for one condition.
pub fn generate(
    vaes: &LevelVaes,
    model: &HierDiffusion,
    condition: &ConditionLabel,
    count: usize,
    length_range: (usize, usize),
    seed: u64,
) -> Result<Vec<GeneratedProtein>, PipelineError> {
    use rand::Rng;
    let mut len_rng = stream_rng(seed, 0x4C45);
    let lengths: Vec<usize> =
        (0..count).map(|_| len_rng.random_range(length_range.0..=length_range.1)).collect();
    let class_ids = condition.ids();
    let samples = model.sample(&class_ids, &lengths, seed)?;

    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut latents = BTreeMap::new();
            for (level, tokens) in &s.latents {
                latents.insert(level.name().to_string(), tensor_to_rows(tokens));
            }
            let aa_latent = LatentSeq::full(
                Level::AminoAcid,
                s.latents
                    .get(&Level::AminoAcid)
                    .expect("amino-acid level is always active")
                    .clone(),
            );
            let sequence = vaes
                .get(&Level::AminoAcid)
                .ok_or(PipelineError::Invalid("missing amino-acid VAE".into()))?
                .greedy_decode_sequence(&aa_latent)?;
            let backbone_steps = match s.latents.get(&Level::Backbone) {
                Some(z) => Some(
                    vaes.get(&Level::Backbone)
                        .ok_or(PipelineError::Invalid("missing backbone VAE".into()))?
                        .decode_geometry(&LatentSeq::full(Level::Backbone, z.clone()))?,
                ),
                None => None,
            };
            let chi = match s.latents.get(&Level::Atom) {
                Some(z) => Some(
                    vaes.get(&Level::Atom)
                        .ok_or(PipelineError::Invalid("missing atom VAE".into()))?
                        .decode_geometry(&LatentSeq::full(Level::Atom, z.clone()))?,
                ),
                None => None,
            };
            Ok(GeneratedProtein {
                id: format!("gen-c{}-{i:03}", class_ids.first().copied().unwrap_or(0)),
                condition: condition.clone(),
                length: s.length,
                sequence,
                backbone_steps,
                chi,
                latents,
                seed,
            })
        })
        .collect()
}

/// Writes the generation manifest as JSON lines.
pub fn write_generation_manifest(
    path: &Path,
    generated: &[GeneratedProtein],
) -> Result<(), PipelineError> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(DataError::Io)?);
    for g in generated {
        writeln!(f, "{}", serde_json::to_string(g).expect("serializable"))
            .map_err(DataError::Io)?;
    }
    Ok(())
}

/// Reads a generation manifest.
pub fn read_generation_manifest(path: &Path) -> Result<Vec<GeneratedProtein>, PipelineError> {
    use std::io::BufRead;
    let f = std::io::BufReader::new(std::fs::File::open(path).map_err(DataError::Io)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line.map_err(DataError::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let g: GeneratedProtein = serde_json::from_str(&line).map_err(|e| {
            PipelineError::Data(DataError::BadRecord { line: i + 1, reason: e.to_string() })
        })?;
        out.push(g);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Saves a VAE checkpoint.
pub fn save_vae(path: &Path, vae: &LevelVae) -> Result<(), PipelineError> {
    let meta = serde_json::json!({
        "kind": "vae",
        "level": vae.level,
        "cfg": vae.cfg,
    });
    let tensors: BTreeMap<String, Tensor> =
        vae.params.iter().map(|(n, t)| (n.clone(), t.clone())).collect();
    write_checkpoint(path, &meta, &tensors)?;
    Ok(())
}

/// Loads a VAE checkpoint.
pub fn load_vae(path: &Path) -> Result<LevelVae, PipelineError> {
    let ck = read_checkpoint(path)?;
    if ck.meta["kind"] != "vae" {
        return Err(PipelineError::WrongCheckpoint {
            path: path.display().to_string(),
            expected: "vae",
        });
    }
    let level: Level = serde_json::from_value(ck.meta["level"].clone())
        .map_err(|e| PipelineError::Invalid(format!("bad level in checkpoint: {e}")))?;
    let cfg: crate::vae::VaeConfig = serde_json::from_value(ck.meta["cfg"].clone())
        .map_err(|e| PipelineError::Invalid(format!("bad cfg in checkpoint: {e}")))?;
    Ok(LevelVae { level, cfg, params: ParamStore::from_map(ck.tensors) })
}

/// Saves the diffusion model (denoisers, schedule, switches, latent stats).
pub fn save_diffusion(path: &Path, model: &HierDiffusion) -> Result<(), PipelineError> {
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    for (level, d) in &model.denoisers {
        for (name, t) in d.params.iter() {
            tensors.insert(format!("level{}.{name}", level.index()), t.clone());
        }
        let stats = &model.stats[level];
        tensors.insert(
            format!("stats.level{}.mean", level.index()),
            Tensor::vector(stats.mean.clone()),
        );
        tensors.insert(
            format!("stats.level{}.std", level.index()),
            Tensor::vector(stats.std.clone()),
        );
    }
    let cfg = model.denoisers.values().next().map(|d| d.cfg);
    let meta = serde_json::json!({
        "kind": "diffusion",
        "switches": model.switches,
        "schedule": model.schedule,
        "cfg": cfg,
    });
    write_checkpoint(path, &meta, &tensors)?;
    Ok(())
}

/// Loads a diffusion checkpoint.
pub fn load_diffusion(path: &Path) -> Result<HierDiffusion, PipelineError> {
    let ck = read_checkpoint(path)?;
    if ck.meta["kind"] != "diffusion" {
        return Err(PipelineError::WrongCheckpoint {
            path: path.display().to_string(),
            expected: "diffusion",
        });
    }
    let switches: LevelSwitches = serde_json::from_value(ck.meta["switches"].clone())
        .map_err(|e| PipelineError::Invalid(format!("bad switches: {e}")))?;
    let schedule: DiffusionSchedule = serde_json::from_value(ck.meta["schedule"].clone())
        .map_err(|e| PipelineError::Invalid(format!("bad schedule: {e}")))?;
    let cfg: DenoiserConfig = serde_json::from_value(ck.meta["cfg"].clone())
        .map_err(|e| PipelineError::Invalid(format!("bad cfg: {e}")))?;

    let mut denoisers = BTreeMap::new();
    let mut stats = BTreeMap::new();
    for level in switches.active() {
        let prefix = format!("level{}.", level.index());
        let mut params = ParamStore::new();
        for (name, t) in &ck.tensors {
            if let Some(stripped) = name.strip_prefix(&prefix) {
                params.insert(stripped, t.clone());
            }
        }
        if params.is_empty() {
            return Err(PipelineError::Diffusion(DiffusionError::MissingCheckpoint(format!(
                "no tensors for level {}",
                level.name()
            ))));
        }
        let mean = ck
            .tensors
            .get(&format!("stats.level{}.mean", level.index()))
            .ok_or_else(|| {
                PipelineError::Diffusion(DiffusionError::MissingCheckpoint("stats".into()))
            })?
            .data()
            .to_vec();
        let std = ck
            .tensors
            .get(&format!("stats.level{}.std", level.index()))
            .ok_or_else(|| {
                PipelineError::Diffusion(DiffusionError::MissingCheckpoint("stats".into()))
            })?
            .data()
            .to_vec();
        denoisers.insert(level, Denoiser { level, cfg, params });
        stats.insert(level, LatentStats { mean, std });
    }
    Ok(HierDiffusion { schedule, switches, denoisers, stats })
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Class references (full embedding sets) from real records, keyed by the
/// primary class id.
pub fn class_references(records: &[ProteinRecord]) -> Result<Vec<ClassReference>, PipelineError> {
    let mut by_class: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for r in records {
        if let Some(k) = r.labels.primary() {
            by_class.entry(k).or_default().push(&r.sequence);
        }
    }
    by_class
        .into_iter()
        .map(|(class_id, seqs)| {
            Ok(ClassReference { class_id, embeddings: embed_sequences(&seqs)? })
        })
        .collect()
}

/// Outcome of conditioned generation for one class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassOutcome {
    pub class: usize,
    /// `(class_id, Protein-MMD)` of the generated set against each reference.
    pub distances: Vec<(usize, f64)>,
    pub argmin: usize,
    pub correct_distance: f64,
}

/// Per-seed end-to-end report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndToEndReport {
    pub seed: u64,
    pub switches: LevelSwitches,
    pub outcomes: Vec<ClassOutcome>,
    /// Classes whose generated set is closest to their own reference.
    pub argmin_hits: usize,
    pub mean_correct_distance: f64,
}

/// Scores generated sets against real class references with Protein-MMD.
pub fn evaluate_generation(
    refs: &[ClassReference],
    generated_by_class: &BTreeMap<usize, Vec<GeneratedProtein>>,
    metric: ConsistencyMetric,
    seed: u64,
    switches: LevelSwitches,
) -> Result<EndToEndReport, PipelineError> {
    let mut outcomes = Vec::new();
    for (&class, generated) in generated_by_class {
        let seqs: Vec<&str> = generated.iter().map(|g| g.sequence.as_str()).collect();
        let set = embed_sequences(&seqs)?;
        let mut distances = Vec::new();
        for r in refs {
            distances.push((r.class_id, class_distance(&set, r, metric)?));
        }
        let argmin = distances
            .iter()
            .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite").then(a.0.cmp(&b.0)))
            .expect("non-empty refs")
            .0;
        let correct_distance = distances
            .iter()
            .find(|(c, _)| *c == class)
            .map(|(_, d)| *d)
            .ok_or_else(|| PipelineError::Invalid(format!("no reference for class {class}")))?;
        outcomes.push(ClassOutcome { class, distances, argmin, correct_distance });
    }
    let argmin_hits = outcomes.iter().filter(|o| o.argmin == o.class).count();
    let mean_correct_distance =
        outcomes.iter().map(|o| o.correct_distance).sum::<f64>() / outcomes.len().max(1) as f64;
    Ok(EndToEndReport { seed, switches, outcomes, argmin_hits, mean_correct_distance })
}

// ---------------------------------------------------------------------------
// End-to-end driver
// ---------------------------------------------------------------------------

/// Reusable per-seed artifacts: dataset, features, trained VAEs and encoded
/// latents. Training different diffusion wirings (full vs ablated) reuses
/// them.
pub struct PipelineArtifacts {
    pub records: Vec<ProteinRecord>,
    pub features: Vec<LevelFeatures>,
    pub vaes: LevelVaes,
    pub latents: Vec<TrainItem>,
    pub refs: Vec<ClassReference>,
}

/// Builds dataset + VAEs + latents for one seed.
pub fn build_artifacts(cfg: &RunConfig, seed: u64) -> Result<PipelineArtifacts, PipelineError> {
    let records = crate::data::generate_synthetic(&cfg.synth_config(), seed);
    let features = featurize_dataset(&records, cfg)?;
    let (vaes, _) = train_vaes(&features, cfg, seed)?;
    let latents = encode_latents(&vaes, &records, &features)?;
    let refs = class_references(&records)?;
    Ok(PipelineArtifacts { records, features, vaes, latents, refs })
}

/// Trains a diffusion wiring on prebuilt artifacts, generates per class and
/// scores conditional consistency.
pub fn train_and_evaluate(
    artifacts: &PipelineArtifacts,
    cfg: &RunConfig,
    switches: LevelSwitches,
    seed: u64,
) -> Result<EndToEndReport, PipelineError> {
    let (model, _) = train_diffusion(&artifacts.latents, cfg, switches, seed)?;
    let mut generated_by_class = BTreeMap::new();
    for class in 1..=cfg.classes {
        let generated = generate(
            &artifacts.vaes,
            &model,
            &ConditionLabel::Class(class),
            cfg.gen_per_class,
            (cfg.min_len, cfg.max_len_data),
            crate::rng::derive_seed(seed, 0x47_0000 + class as u64),
        )?;
        generated_by_class.insert(class, generated);
    }
    evaluate_generation(&artifacts.refs, &generated_by_class, cfg.metric, seed, switches)
}
