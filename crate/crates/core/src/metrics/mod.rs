//! Conditional-consistency metrics (Protein-MMD, Protein-FID) over pluggable
//! embeddings, plus the diversity metrics (Kabsch RMSD, index-correspondence
//! TM-score, Needleman–Wunsch Seq.ID).

mod align;
mod embed;
mod fid;
mod mmd;
mod superpose;

pub use align::seq_id;
pub use embed::{
    embed_sequences, read_embedding_csv, read_embedding_file, write_embedding_file, EmbeddingSet,
    EmbeddingSource, EMBED_DIM,
};
pub use fid::{protein_fid, GaussianFit};
pub use mmd::{protein_mmd, protein_mmd_rbf};
pub use superpose::{kabsch_rmsd, kabsch_superpose, tm_score};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("sequence {id} has invalid residue symbol '{symbol}' at position {position}")]
    InvalidResidueSymbol { id: String, position: usize, symbol: char },
    #[error("sequence {0} is empty")]
    EmptySequence(String),
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding set is empty")]
    EmptySet,
    #[error("embedding row {0} has wrong dimension or non-finite entries")]
    BadRow(usize),
    #[error("need at least {needed} samples per set, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("coordinate sequences have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("bad embedding file: {0}")]
    BadImport(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Writes metric rows in the fixed report column order.
pub fn write_metric_report_csv(
    path: &std::path::Path,
    rows: &[(String, String, String, f64)],
) -> Result<(), MetricError> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "metric,set_a,set_b,value")?;
    for (metric, a, b, value) in rows {
        writeln!(f, "{metric},{a},{b},{value}")?;
    }
    Ok(())
}
