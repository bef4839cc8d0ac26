//! Manifest + blob container shared by weights, feature caches and
//! pipeline bundles.
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"RBFFCTR\0"
//! 8       4     manifest length M (u32, little endian)
//! 12      M     manifest, UTF-8 JSON
//! 12+M    ..    blob: packed little-endian f32 values
//! ```
//!
//! Tensor offsets in the manifest are relative to the start of the blob.
//! See `docs/weights-format.md` for the manifest schema.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{format_err, Error, Result};

pub const MAGIC: &[u8; 8] = b"RBFFCTR\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = MAGIC.len() + 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    kind: String,
    metadata: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

/// A decoded container. Tensor values are held as `f32`; the byte layout is
/// recomputed (packed, in insertion order) on serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    kind: String,
    metadata: BTreeMap<String, String>,
    entries: Vec<TensorEntry>,
    blob: Vec<f32>,
}

impl Container {
    pub fn new(kind: impl Into<String>) -> Self {
        Container {
            kind: kind.into(),
            metadata: BTreeMap::new(),
            entries: Vec::new(),
            blob: Vec::new(),
        }
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    /// Appends a tensor. Names must be unique.
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f32>) -> Result<()> {
        let name = name.into();
        let count: usize = shape.iter().product();
        if count != values.len() {
            return Err(format_err!(
                "tensor `{name}` shape {shape:?} holds {count} values, got {}",
                values.len()
            ));
        }
        if self.contains(&name) {
            return Err(format_err!("duplicate tensor `{name}`"));
        }
        self.entries.push(TensorEntry {
            name,
            shape,
            offset: self.blob.len() * 4,
            length: values.len() * 4,
        });
        self.blob.extend(values);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| (e.shape.as_slice(), self.values(e)))
    }

    fn values(&self, e: &TensorEntry) -> &[f32] {
        &self.blob[e.offset / 4..(e.offset + e.length) / 4]
    }

    /// Fetches a tensor and checks its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&[f32]> {
        let (s, v) = self
            .get(name)
            .ok_or_else(|| format_err!("missing tensor `{name}`"))?;
        if s != shape {
            return Err(format_err!("tensor `{name}` has shape {s:?}, expected {shape:?}"));
        }
        Ok(v)
    }

    /// Number of scalar parameters across all tensors.
    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|e| e.shape.iter().product::<usize>()).sum()
    }

    /// Keeps only the tensors accepted by `keep`, preserving order.
    pub fn retain(&self, mut keep: impl FnMut(&str) -> bool) -> Container {
        let mut out = Container::new(self.kind.clone());
        out.metadata = self.metadata.clone();
        for e in &self.entries {
            if keep(&e.name) {
                out.push(e.name.clone(), e.shape.clone(), self.values(e).to_vec())
                    .expect("entries of a valid container are consistent");
            }
        }
        out
    }

    fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            metadata: self.metadata.clone(),
            tensors: self.entries.clone(),
        }
    }

    /// Serialized length of a single manifest entry, used for per-component
    /// size accounting.
    pub fn entry_manifest_len(entry: &TensorEntry) -> usize {
        serde_json::to_vec(entry).map(|v| v.len()).unwrap_or(0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest()).expect("manifest serializes");
        let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + self.blob.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        for v in &self.blob {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn serialized_len(&self) -> usize {
        let manifest = serde_json::to_vec(&self.manifest()).expect("manifest serializes");
        HEADER_LEN + manifest.len() + self.blob.len() * 4
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Container> {
        if bytes.is_empty() {
            return Err(format_err!("empty file"));
        }
        if bytes.len() < HEADER_LEN || &bytes[..MAGIC.len()] != MAGIC {
            return Err(format_err!("not an rbff container (bad magic)"));
        }
        let mlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let rest = &bytes[HEADER_LEN..];
        if mlen > rest.len() {
            return Err(format_err!(
                "manifest length {mlen} exceeds remaining {} bytes",
                rest.len()
            ));
        }
        let text = std::str::from_utf8(&rest[..mlen])
            .map_err(|e| format_err!("manifest is not UTF-8: {e}"))?;
        let manifest: Manifest =
            serde_json::from_str(text).map_err(|e| format_err!("corrupt manifest: {e}"))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(format_err!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                manifest.format_version
            ));
        }
        let blob = &rest[mlen..];
        validate_entries(&manifest.tensors, blob.len())?;

        // Repack in manifest order so offsets are canonical in memory.
        let mut out = Container::new(manifest.kind);
        out.metadata = manifest.metadata;
        for e in manifest.tensors {
            let values = blob[e.offset..e.offset + e.length]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            out.push(e.name, e.shape, values)?;
        }
        Ok(out)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Container> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Container::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the serialized form, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

fn validate_entries(entries: &[TensorEntry], blob_len: usize) -> Result<()> {
    let mut names = HashSet::new();
    let mut spans = Vec::with_capacity(entries.len());
    for e in entries {
        if !names.insert(e.name.as_str()) {
            return Err(format_err!("duplicate tensor `{}`", e.name));
        }
        let count = e
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| format_err!("tensor `{}` shape overflows", e.name))?;
        if count != e.length {
            return Err(format_err!(
                "tensor `{}` shape {:?} needs {count} bytes, manifest says {}",
                e.name,
                e.shape,
                e.length
            ));
        }
        if e.offset % 4 != 0 {
            return Err(format_err!("tensor `{}` offset {} is not 4-aligned", e.name, e.offset));
        }
        let end = e
            .offset
            .checked_add(e.length)
            .filter(|&end| end <= blob_len)
            .ok_or_else(|| {
                format_err!(
                    "tensor `{}` spans {}+{} past the {blob_len}-byte blob (truncated?)",
                    e.name,
                    e.offset,
                    e.length
                )
            })?;
        spans.push((e.offset, end, e.name.as_str()));
    }
    spans.sort_unstable();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(format_err!("tensors `{}` and `{}` overlap", w[0].2, w[1].2));
        }
    }
    Ok(())
}
