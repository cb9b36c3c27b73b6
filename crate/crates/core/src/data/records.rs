//! Record files (JSON lines with a version header) and dataset manifests.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, ProteinRecord};

/// Current record-file format version.
pub const RECORD_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct RecordHeader {
    format: String,
    version: u32,
}

/// Writes records as JSON lines behind a one-line format header.
/// Coordinates are f64 and round-trip exactly.
pub fn write_records(path: &Path, records: &[ProteinRecord]) -> Result<(), DataError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = RecordHeader { format: "protdiff-records".into(), version: RECORD_VERSION };
    writeln!(f, "{}", serde_json::to_string(&header).expect("serializable header"))?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r).expect("serializable record"))?;
    }
    Ok(())
}

/// Reads a record file, validating the header and every record invariant.
pub fn read_records(path: &Path) -> Result<Vec<ProteinRecord>, DataError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = f.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| DataError::CorruptFile("empty record file".into()))?;
    let header: RecordHeader = serde_json::from_str(&header_line?)
        .map_err(|e| DataError::BadRecord { line: 1, reason: format!("bad header: {e}") })?;
    if header.format != "protdiff-records" {
        return Err(DataError::CorruptFile(format!("unknown format '{}'", header.format)));
    }
    if header.version == 0 || header.version > RECORD_VERSION {
        return Err(DataError::VersionMismatch {
            found: header.version,
            supported: RECORD_VERSION,
        });
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ProteinRecord = serde_json::from_str(&line)
            .map_err(|e| DataError::BadRecord { line: idx + 1, reason: e.to_string() })?;
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

/// Split bookkeeping for one generated dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub generator_version: String,
}

impl DatasetManifest {
    /// Splits must be disjoint.
    pub fn validate(&self) -> Result<(), DataError> {
        let train: std::collections::BTreeSet<&String> = self.train.iter().collect();
        if let Some(dup) = self.test.iter().find(|id| train.contains(id)) {
            return Err(DataError::CorruptFile(format!("id '{dup}' in both splits")));
        }
        Ok(())
    }
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<(), DataError> {
    manifest.validate()?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(serde_json::to_string_pretty(manifest).expect("serializable").as_bytes())?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let text = std::fs::read_to_string(path)?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| DataError::CorruptFile(format!("bad manifest: {e}")))?;
    manifest.validate()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BackboneAtoms, ConditionLabel};
    use crate::geom::TorsionSet;

    fn sample_records() -> Vec<ProteinRecord> {
        vec![
            ProteinRecord {
                id: "r1".into(),
                sequence: "ACD".into(),
                ca_coords: vec![[0.0, 0.0, 0.0], [3.8, 0.0, 0.0], [5.0, 2.7, -0.125]],
                backbone_coords: Some(vec![
                    BackboneAtoms { n: [-1.0, 0.0, 0.0], ca: [0.0, 0.0, 0.0], c: [1.0, 1.0, 0.0] },
                    BackboneAtoms { n: [2.8, 0.0, 0.0], ca: [3.8, 0.0, 0.0], c: [4.4, 1.0, 0.0] },
                    BackboneAtoms { n: [4.6, 2.0, 0.0], ca: [5.0, 2.7, -0.125], c: [6.0, 3.0, 0.0] },
                ]),
                torsions: Some(TorsionSet {
                    angles: vec![[0.0; 4], [1.25, -2.5, 0.0, 0.0], [0.5, 0.0, 0.0, 0.0]],
                    mask: vec![
                        [false; 4],
                        [true, true, false, false],
                        [true, true, false, false],
                    ],
                }),
                labels: ConditionLabel::Class(2),
            },
            ProteinRecord {
                id: "r2".into(),
                sequence: "WY".into(),
                ca_coords: vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]],
                backbone_coords: None,
                torsions: None,
                labels: ConditionLabel::LabelSet(vec![1, 3]),
            },
        ]
    }

    #[test]
    fn round_trip_is_field_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let records = sample_records();
        write_records(&path, &records).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn invalid_records_are_rejected_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            "{\"format\":\"protdiff-records\",\"version\":1}\n{\"id\":\"x\",\"sequence\":\"AZ\",\"ca_coords\":[[0,0,0],[1,0,0]],\"labels\":{\"class\":1}}\n",
        )
        .unwrap();
        assert!(matches!(read_records(&path), Err(DataError::InvalidResidue { .. })));
    }

    #[test]
    fn future_version_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "{\"format\":\"protdiff-records\",\"version\":9}\n").unwrap();
        assert!(matches!(read_records(&path), Err(DataError::VersionMismatch { found: 9, .. })));
    }

    #[test]
    fn manifest_round_trip_and_disjointness() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = DatasetManifest {
            train: vec!["a".into(), "b".into()],
            test: vec!["c".into()],
            seed: 7,
            generator_version: "1".into(),
        };
        write_manifest(&path, &m).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), m);

        let overlapping = DatasetManifest { test: vec!["a".into()], ..m };
        assert!(write_manifest(&path, &overlapping).is_err());
    }
}
