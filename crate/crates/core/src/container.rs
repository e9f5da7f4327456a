//! A small binary container: a JSON manifest followed by little-endian f32
//! arrays, used for graph archives and model checkpoints.
//!
//! Layout: 4-byte magic `TSC1`, u32 (LE) manifest length, manifest JSON bytes,
//! then the raw f32 data of every entry back to back in manifest order.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TSC1";

/// Shape and name of one stored array.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EntrySpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl EntrySpec {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Container manifest: typed payload kind, entry table and free-form metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: String,
    pub entries: Vec<EntrySpec>,
    #[serde(default)]
    pub meta: Value,
}

/// Writes a container file; `arrays` must match `manifest.entries` in order
/// and element count.
pub fn write_container(path: &Path, manifest: &Manifest, arrays: &[Vec<f32>]) -> Result<()> {
    if manifest.entries.len() != arrays.len() {
        return Err(Error::MalformedContainer(format!(
            "{} entries but {} arrays",
            manifest.entries.len(),
            arrays.len()
        )));
    }
    for (spec, arr) in manifest.entries.iter().zip(arrays) {
        if spec.element_count() != arr.len() {
            return Err(Error::MalformedContainer(format!(
                "entry `{}` declares {} elements, got {}",
                spec.name,
                spec.element_count(),
                arr.len()
            )));
        }
    }
    let manifest_bytes = serde_json::to_vec(manifest)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(manifest_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&manifest_bytes)?;
    for arr in arrays {
        for v in arr {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a container file back into its manifest and arrays.
pub fn read_container(path: &Path) -> Result<(Manifest, Vec<Vec<f32>>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::MalformedContainer("bad magic".into()));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)?;
    let manifest_len = u32::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_bytes)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)?;
    let mut arrays = Vec::with_capacity(manifest.entries.len());
    for spec in &manifest.entries {
        let n = spec.element_count();
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf).map_err(|_| {
            Error::MalformedContainer(format!("truncated data for entry `{}`", spec.name))
        })?;
        let arr: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        arrays.push(arr);
    }
    Ok((manifest, arrays))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.bin");
        let manifest = Manifest {
            version: 1,
            kind: "test".into(),
            entries: vec![
                EntrySpec { name: "a".into(), shape: vec![2, 3] },
                EntrySpec { name: "b".into(), shape: vec![4] },
            ],
            meta: serde_json::json!({"note": 7}),
        };
        let arrays = vec![
            vec![1.0f32, -2.5, 3.25, 0.0, f32::MIN_POSITIVE, 1e-20],
            vec![0.1, 0.2, 0.3, 0.4],
        ];
        write_container(&path, &manifest, &arrays).unwrap();
        let (m2, a2) = read_container(&path).unwrap();
        assert_eq!(m2.entries, manifest.entries);
        assert_eq!(m2.meta["note"], 7);
        for (x, y) in arrays.iter().flatten().zip(a2.iter().flatten()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn entry_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        let manifest = Manifest {
            version: 1,
            kind: "test".into(),
            entries: vec![EntrySpec { name: "a".into(), shape: vec![3] }],
            meta: Value::Null,
        };
        assert!(write_container(&path, &manifest, &[vec![1.0, 2.0]]).is_err());
    }
}
