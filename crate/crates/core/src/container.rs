//! LRRW tensor container.
//!
//! Layout: magic `LRRW`, one version byte, a little-endian u32 manifest
//! length, a UTF-8 JSON manifest listing tensor name, shape, dtype (`f32`)
//! and byte offset, then the raw little-endian payloads packed in manifest
//! order. Used for model parameters, checkpoints, and backbone weights.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"LRRW";
pub const VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

/// An ordered set of named tensors plus a small string metadata map.
#[derive(Clone, Debug, Default)]
pub struct Container {
    tensors: Vec<(String, Tensor)>,
    meta: BTreeMap<String, String>,
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(|s| s.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn take(&mut self, name: &str) -> Option<Tensor> {
        let idx = self.tensors.iter().position(|(n, _)| n == name)?;
        Some(self.tensors.remove(idx).1)
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            entries.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset,
            });
            offset += t.numel() * 4;
        }
        let manifest = Manifest {
            tensors: entries,
            meta: self.meta.clone(),
        };
        let manifest_bytes =
            serde_json::to_vec(&manifest).map_err(|e| Error::Manifest(e.to_string()))?;
        if manifest_bytes.len() > u32::MAX as usize {
            return Err(Error::Manifest("manifest too large".into()));
        }

        w.write_all(MAGIC)?;
        w.write_all(&[VERSION])?;
        w.write_all(&(manifest_bytes.len() as u32).to_le_bytes())?;
        w.write_all(&manifest_bytes)?;
        for (_, t) in &self.tensors {
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::Truncated { expected: 4, actual: 0 })?;
        if &magic != MAGIC {
            return Err(Error::BadMagic);
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version)
            .map_err(|_| Error::Truncated { expected: 5, actual: 4 })?;
        if version[0] != VERSION {
            return Err(Error::BadVersion(version[0]));
        }
        let mut len_bytes = [0u8; 4];
        r.read_exact(&mut len_bytes)
            .map_err(|_| Error::Truncated { expected: 9, actual: 5 })?;
        let manifest_len = u32::from_le_bytes(len_bytes) as usize;

        let mut manifest_bytes = vec![0u8; manifest_len];
        r.read_exact(&mut manifest_bytes).map_err(|_| Error::Truncated {
            expected: manifest_len,
            actual: 0,
        })?;
        let manifest: Manifest =
            serde_json::from_slice(&manifest_bytes).map_err(|e| Error::Manifest(e.to_string()))?;

        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;

        let mut expected_offset = 0usize;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in &manifest.tensors {
            if entry.dtype != "f32" {
                return Err(Error::Manifest(format!(
                    "tensor '{}' has unsupported dtype '{}'",
                    entry.name, entry.dtype
                )));
            }
            if entry.offset != expected_offset {
                return Err(Error::Manifest(format!(
                    "tensor '{}' declares offset {} but payload cursor is {}",
                    entry.name, entry.offset, expected_offset
                )));
            }
            let numel: usize = entry.shape.iter().product();
            let nbytes = numel * 4;
            let end = expected_offset + nbytes;
            if end > payload.len() {
                return Err(Error::Truncated {
                    expected: end,
                    actual: payload.len(),
                });
            }
            let mut data = Vec::with_capacity(numel);
            for chunk in payload[expected_offset..end].chunks_exact(4) {
                data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
            }
            tensors.push((
                entry.name.clone(),
                Tensor::new(entry.shape.clone(), data)
                    .map_err(|e| Error::Manifest(e.to_string()))?,
            ));
            expected_offset = end;
        }
        if payload.len() != expected_offset {
            return Err(Error::Manifest(format!(
                "payload has {} bytes but manifest accounts for {}",
                payload.len(),
                expected_offset
            )));
        }
        Ok(Container {
            tensors,
            meta: manifest.meta,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Container::read_from(bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.push("a", Tensor::new(vec![2, 2], vec![1.0, 2.5, -3.0, 0.125]).unwrap());
        c.push("b.theta", Tensor::new(vec![3], vec![0.01, 0.02, 0.03]).unwrap());
        c.set_meta("model", "test");
        c
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let c = sample();
        let mut bytes = Vec::new();
        c.write_to(&mut bytes).unwrap();
        let loaded = Container::read_from(bytes.as_slice()).unwrap();
        let mut again = Vec::new();
        loaded.write_to(&mut again).unwrap();
        assert_eq!(bytes, again);
        assert_eq!(loaded.meta("model"), Some("test"));
        assert_eq!(loaded.get("b.theta").unwrap().shape(), [3]);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = Vec::new();
        sample().write_to(&mut bytes).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            Container::read_from(bytes.as_slice()),
            Err(Error::BadMagic)
        ));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = Vec::new();
        sample().write_to(&mut bytes).unwrap();
        bytes[4] = 99;
        assert!(matches!(
            Container::read_from(bytes.as_slice()),
            Err(Error::BadVersion(99))
        ));
    }

    #[test]
    fn shape_payload_mismatch_is_a_manifest_error() {
        let mut bytes = Vec::new();
        sample().write_to(&mut bytes).unwrap();
        // Grow the declared shape of "a" in place; [2,3] matches the byte
        // length of [2,2] so the length prefix stays valid.
        let needle = b"\"shape\":[2,2]";
        let pos = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .expect("shape field present");
        bytes[pos..pos + needle.len()].copy_from_slice(b"\"shape\":[2,3]");
        let r = Container::read_from(bytes.as_slice());
        assert!(
            matches!(r, Err(Error::Manifest(_)) | Err(Error::Truncated { .. })),
            "got {r:?}"
        );
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            Container::read_from(bytes.as_slice()),
            Err(Error::Manifest(_)) | Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn truncated_payload_is_detected() {
        let mut bytes = Vec::new();
        sample().write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            Container::read_from(bytes.as_slice()),
            Err(Error::Truncated { .. })
        ));
    }
}
