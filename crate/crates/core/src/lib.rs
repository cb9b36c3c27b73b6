//! Three-level conditional latent diffusion for protein generation.
//!
//! The crate is organized around the stages of the pipeline:
//!
//! - [`geom`] — SE(3) canonicalization, residue contact graphs, backbone
//!   Euler angles and side-chain torsions.
//! - [`nn`] — a minimal f64 tensor/autograd kernel with the transformer
//!   blocks and Adam optimizer everything else is built from.
//! - [`featurize`] — turns a [`data::ProteinRecord`] into the three level
//!   representations (amino acid, backbone, all-atom).
//! - [`vae`] — per-level graph encoders and autoregressive decoders.
//! - [`diffusion`] — schedules, the per-level denoisers with conditional
//!   flow between levels, teacher-forced training and hierarchical sampling.
//! - [`metrics`] — Protein-MMD, Protein-FID, Kabsch RMSD, TM-score, Seq.ID.
//! - [`meta_eval`] — ranking-based evaluation of the metrics themselves
//!   (accuracy/MRR/NMR, monotone-consistency probe, IoU).
//! - [`data`] — record files, PDB subset parsing, synthetic datasets,
//!   checkpoints and manifests.
//! - [`pipeline`] — end-to-end orchestration used by the CLI and tests.


pub mod config;
pub mod data;
pub mod diffusion;


pub mod featurize;
pub mod geom;
pub mod meta_eval;
pub mod metrics;
pub mod nn;
pub mod pipeline;

pub mod residues;
pub mod vae;
pub mod rng;

