//! Sequence embeddings: the built-in compositional featurizer and the import
//! path for externally computed embedding matrices (e.g. language-model
//! vectors produced elsewhere).

use std::io::{BufRead, Read, Write};
use std::path::Path;

use super::MetricError;
use crate::residues;

/// Built-in featurizer dimension: 20 monomer frequencies, 400 bigram
/// frequencies, 5 pooled physicochemical means.
pub const EMBED_DIM: usize = 425;

const EMBED_MAGIC: &[u8; 4] = b"PEMB";
const EMBED_VERSION: u32 = 1;

/// Where an embedding set came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbeddingSource {
    /// The built-in compositional featurizer.
    BuiltIn,
    /// Imported from a file (binary or CSV).
    Imported(String),
    /// Constructed in memory.
    Raw,
}

/// A set of fixed-dimension embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    rows: Vec<Vec<f64>>,
    dim: usize,
    pub source: EmbeddingSource,
}

impl EmbeddingSet {
    pub fn new(rows: Vec<Vec<f64>>, source: EmbeddingSource) -> Result<Self, MetricError> {
        if rows.is_empty() {
            return Err(MetricError::EmptySet);
        }
        let dim = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim || r.iter().any(|v| !v.is_finite()) {
                return Err(MetricError::BadRow(i));
            }
        }
        Ok(Self { rows, dim, source })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    /// Mean embedding vector.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in &self.rows {
            for (acc, &v) in m.iter_mut().zip(r) {
                *acc += v;
            }
        }
        let n = self.rows.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// A new set with the listed row indices.
    pub fn subset(&self, indices: &[usize]) -> Result<EmbeddingSet, MetricError> {
        Self::new(indices.iter().map(|&i| self.rows[i].clone()).collect(), self.source.clone())
    }

    /// Single-row set (a singleton query).
    pub fn singleton(row: Vec<f64>) -> Result<EmbeddingSet, MetricError> {
        Self::new(vec![row], EmbeddingSource::Raw)
    }

    /// Project onto the leading `k` dimensions.
    pub fn truncated(&self, k: usize) -> Result<EmbeddingSet, MetricError> {
        if k > self.dim {
            return Err(MetricError::DimensionMismatch(k, self.dim));
        }
        Self::new(self.rows.iter().map(|r| r[..k].to_vec()).collect(), self.source.clone())
    }
}

/// Embeds one sequence with the built-in featurizer.
pub fn embed_sequence(id: &str, seq: &str) -> Result<Vec<f64>, MetricError> {
    if seq.is_empty() {
        return Err(MetricError::EmptySequence(id.to_string()));
    }
    let idx = residues::validate_sequence(seq).map_err(|(position, symbol)| {
        MetricError::InvalidResidueSymbol { id: id.to_string(), position, symbol }
    })?;
    let mut v = vec![0.0; EMBED_DIM];
    let n = idx.len() as f64;
    for &i in &idx {
        v[i] += 1.0 / n;
    }
    if idx.len() >= 2 {
        let pairs = (idx.len() - 1) as f64;
        for w in idx.windows(2) {
            v[20 + w[0] * 20 + w[1]] += 1.0 / pairs;
        }
    }
    for &i in &idx {
        let p = residues::physchem(i);
        for k in 0..5 {
            v[420 + k] += p[k] / n;
        }
    }
    Ok(v)
}

/// Embeds a batch of sequences; row order follows input order.
pub fn embed_sequences<S: AsRef<str>>(sequences: &[S]) -> Result<EmbeddingSet, MetricError> {
    let rows = sequences
        .iter()
        .enumerate()
        .map(|(i, s)| embed_sequence(&i.to_string(), s.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    EmbeddingSet::new(rows, EmbeddingSource::BuiltIn)
}

/// Writes the binary embedding format: magic, version, n, D as little-endian
/// u32/u64 followed by row-major little-endian f32 values.
pub fn write_embedding_file(path: &Path, set: &EmbeddingSet) -> Result<(), MetricError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(EMBED_MAGIC)?;
    f.write_all(&EMBED_VERSION.to_le_bytes())?;
    f.write_all(&(set.len() as u64).to_le_bytes())?;
    f.write_all(&(set.dim() as u64).to_le_bytes())?;
    for row in set.rows() {
        for &v in row {
            f.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads the binary embedding format written by [`write_embedding_file`].
pub fn read_embedding_file(path: &Path) -> Result<EmbeddingSet, MetricError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic).map_err(|_| MetricError::BadImport("truncated header".into()))?;
    if &magic != EMBED_MAGIC {
        return Err(MetricError::BadImport(format!("bad magic {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    f.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != EMBED_VERSION {
        return Err(MetricError::BadImport(format!("unsupported version {version}")));
    }
    let mut u64buf = [0u8; 8];
    f.read_exact(&mut u64buf)?;
    let n = u64::from_le_bytes(u64buf) as usize;
    f.read_exact(&mut u64buf)?;
    let dim = u64::from_le_bytes(u64buf) as usize;
    let mut rows = Vec::with_capacity(n);
    let mut buf = [0u8; 4];
    for _ in 0..n {
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            f.read_exact(&mut buf)
                .map_err(|_| MetricError::BadImport("truncated data".into()))?;
            row.push(f32::from_le_bytes(buf) as f64);
        }
        rows.push(row);
    }
    EmbeddingSet::new(rows, EmbeddingSource::Imported(path.display().to_string()))
}

/// CSV fallback import: one row per line, comma-separated floats.
pub fn read_embedding_csv(path: &Path) -> Result<EmbeddingSet, MetricError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    for (lineno, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| tok.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| MetricError::BadImport(format!("line {}: {e}", lineno + 1)))?;
        rows.push(row);
    }
    EmbeddingSet::new(rows, EmbeddingSource::Imported(path.display().to_string()))
}
