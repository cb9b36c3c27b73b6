//! Ingestion, synthesis and persistence: protein records, the PDB backbone
//! subset, synthetic datasets, checkpoints and manifests.

mod checkpoint;
mod pdb;
mod records;
mod synth;

pub use checkpoint::{
    read_checkpoint, write_checkpoint, write_checkpoint_versioned, Checkpoint,
    CHECKPOINT_VERSION,
};
pub use pdb::{export_pdb, parse_pdb_backbone, PdbParse};
pub use records::{
    read_manifest, read_records, write_manifest, write_records, DatasetManifest, RECORD_VERSION,
};
pub use synth::{generate_synthetic, train_test_split, SynthConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{CoordSeq, GeomError, TorsionSet};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed ATOM line {line}: {reason}")]
    MalformedAtomLine { line: usize, reason: String },
    #[error("unsupported format version {found} (this reader supports 1..={supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("bad record on line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error("record {id}: coordinate list length {coords} != sequence length {seq}")]
    LengthMismatch { id: String, coords: usize, seq: usize },
    #[error("record {id}: invalid residue '{symbol}' at {position}")]
    InvalidResidue { id: String, position: usize, symbol: char },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Class conditioning: a single class id for EC-style tasks or a label set
/// for GO-style tasks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionLabel {
    Class(usize),
    LabelSet(Vec<usize>),
}

impl ConditionLabel {
    /// All class ids carried by the label.
    pub fn ids(&self) -> Vec<usize> {
        match self {
            ConditionLabel::Class(c) => vec![*c],
            ConditionLabel::LabelSet(s) => s.clone(),
        }
    }

    /// The primary id (single class, or the first of a label set).
    pub fn primary(&self) -> Option<usize> {
        self.ids().first().copied()
    }
}

/// Per-residue backbone atom positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneAtoms {
    pub n: [f64; 3],
    pub ca: [f64; 3],
    pub c: [f64; 3],
}

/// The unit of ingestion and generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProteinRecord {
    pub id: String,
    pub sequence: String,
    pub ca_coords: Vec<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub backbone_coords: Option<Vec<BackboneAtoms>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub torsions: Option<TorsionSet>,
    pub labels: ConditionLabel,
}

impl ProteinRecord {
    /// Checks the record invariants: canonical residues and consistent
    /// coordinate list lengths.
    pub fn validate(&self) -> Result<(), DataError> {
        if let Err((position, symbol)) = crate::residues::validate_sequence(&self.sequence) {
            return Err(DataError::InvalidResidue { id: self.id.clone(), position, symbol });
        }
        let len = self.sequence.len();
        if self.ca_coords.len() != len {
            return Err(DataError::LengthMismatch {
                id: self.id.clone(),
                coords: self.ca_coords.len(),
                seq: len,
            });
        }
        if let Some(bb) = &self.backbone_coords {
            if bb.len() != len {
                return Err(DataError::LengthMismatch {
                    id: self.id.clone(),
                    coords: bb.len(),
                    seq: len,
                });
            }
        }
        if let Some(t) = &self.torsions {
            if t.len() != len {
                return Err(DataError::LengthMismatch {
                    id: self.id.clone(),
                    coords: t.len(),
                    seq: len,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    /// Residue indices into the canonical alphabet.
    pub fn residue_indices(&self) -> Vec<usize> {
        crate::residues::validate_sequence(&self.sequence).expect("validated sequence")
    }

    pub fn ca_seq(&self) -> Result<CoordSeq, GeomError> {
        CoordSeq::from_triples(&self.ca_coords)
    }
}
