//! Versioned binary checkpoint: a name → tensor map with explicit shapes,
//! little-endian f64 data and a SHA-256 trailer.
//!
//! Layout: magic `PCKP` | version u32 | meta length u32 | meta JSON bytes |
//! entry count u32 | entries (name length u32, name bytes, ndim u32, dims as
//! u64s, values as f64s) | SHA-256 of everything before the trailer.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::DataError;
use crate::nn::Tensor;

const MAGIC: &[u8; 4] = b"PCKP";
/// Current writer version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

/// Writes a checkpoint at an explicit format version (1..=current). Exists so
/// older-version files can be produced for compatibility checks; normal code
/// uses [`write_checkpoint`].
pub fn write_checkpoint_versioned(
    path: &Path,
    version: u32,
    meta: &serde_json::Value,
    tensors: &BTreeMap<String, Tensor>,
) -> Result<(), DataError> {
    if version == 0 || version > CHECKPOINT_VERSION {
        return Err(DataError::VersionMismatch { found: version, supported: CHECKPOINT_VERSION });
    }
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&version.to_le_bytes());
    let meta_bytes = serde_json::to_vec(meta).expect("serializable meta");
    buf.extend_from_slice(&(meta_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_bytes);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Writes a checkpoint at the current format version.
pub fn write_checkpoint(
    path: &Path,
    meta: &serde_json::Value,
    tensors: &BTreeMap<String, Tensor>,
) -> Result<(), DataError> {
    write_checkpoint_versioned(path, CHECKPOINT_VERSION, meta, tensors)
}

fn read_u32(buf: &[u8], pos: &mut usize) -> Result<u32, DataError> {
    let end = *pos + 4;
    if end > buf.len() {
        return Err(DataError::CorruptFile("truncated".into()));
    }
    let v = u32::from_le_bytes(buf[*pos..end].try_into().unwrap());
    *pos = end;
    Ok(v)
}

fn read_u64(buf: &[u8], pos: &mut usize) -> Result<u64, DataError> {
    let end = *pos + 8;
    if end > buf.len() {
        return Err(DataError::CorruptFile("truncated".into()));
    }
    let v = u64::from_le_bytes(buf[*pos..end].try_into().unwrap());
    *pos = end;
    Ok(v)
}

/// Reads and verifies a checkpoint (any supported version).
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < MAGIC.len() + 4 + 32 {
        return Err(DataError::CorruptFile("file too short".into()));
    }
    let (body, trailer) = buf.split_at(buf.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(DataError::CorruptFile("checksum mismatch".into()));
    }
    if &body[..4] != MAGIC {
        return Err(DataError::CorruptFile("bad magic".into()));
    }
    let mut pos = 4;
    let version = read_u32(body, &mut pos)?;
    if version == 0 || version > CHECKPOINT_VERSION {
        return Err(DataError::VersionMismatch { found: version, supported: CHECKPOINT_VERSION });
    }
    let meta_len = read_u32(body, &mut pos)? as usize;
    if pos + meta_len > body.len() {
        return Err(DataError::CorruptFile("truncated meta".into()));
    }
    let meta: serde_json::Value = serde_json::from_slice(&body[pos..pos + meta_len])
        .map_err(|e| DataError::CorruptFile(format!("bad meta JSON: {e}")))?;
    pos += meta_len;
    let count = read_u32(body, &mut pos)? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u32(body, &mut pos)? as usize;
        if pos + name_len > body.len() {
            return Err(DataError::CorruptFile("truncated name".into()));
        }
        let name = String::from_utf8(body[pos..pos + name_len].to_vec())
            .map_err(|_| DataError::CorruptFile("non-utf8 tensor name".into()))?;
        pos += name_len;
        let ndim = read_u32(body, &mut pos)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(body, &mut pos)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let end = pos + 8;
            if end > body.len() {
                return Err(DataError::CorruptFile("truncated tensor data".into()));
            }
            data.push(f64::from_le_bytes(body[pos..end].try_into().unwrap()));
            pos = end;
        }
        let t = Tensor::new(shape, data)
            .map_err(|e| DataError::CorruptFile(format!("bad tensor {name}: {e}")))?;
        tensors.insert(name, t);
    }
    Ok(Checkpoint { version, meta, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample_tensors() -> BTreeMap<String, Tensor> {
        let mut m = BTreeMap::new();
        m.insert("a.w".to_string(), Tensor::from_rows(&[vec![1.5, -2.25], vec![0.0, 1e-17]]));
        m.insert("b".to_string(), Tensor::vector(vec![std::f64::consts::PI]));
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let tensors = sample_tensors();
        write_checkpoint(&path, &json!({"kind": "test", "level": 3}), &tensors).unwrap();
        let ck = read_checkpoint(&path).unwrap();
        assert_eq!(ck.version, CHECKPOINT_VERSION);
        assert_eq!(ck.meta["kind"], "test");
        assert_eq!(ck.tensors, tensors);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&path, &json!({}), &sample_tensors()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(DataError::CorruptFile(_))));
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&path, &json!({}), &sample_tensors()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(DataError::CorruptFile(_))));
    }

    #[test]
    fn version_one_still_parses() {
        // Backward-compat contract: files written at version 1 must keep
        // parsing whatever the current writer version is.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v1.ckpt");
        write_checkpoint_versioned(&path, 1, &json!({}), &sample_tensors()).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap().version, 1);
    }

    #[test]
    fn future_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        assert!(matches!(
            write_checkpoint_versioned(&path, 99, &json!({}), &sample_tensors()),
            Err(DataError::VersionMismatch { found: 99, .. })
        ));
        // Hand-craft a future-version file with a valid checksum.
        write_checkpoint(&path, &json!({}), &sample_tensors()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 2; // bump version field
        let body_len = bytes.len() - 32;
        let digest = sha2::Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(DataError::VersionMismatch { found: 2, .. })
        ));
    }
}
