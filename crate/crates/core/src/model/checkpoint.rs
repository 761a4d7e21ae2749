//! `NHTCKPT1` checkpoint container.
//!
//! ```text
//! [8]  magic "NHTCKPT1"
//! [8]  u64 LE manifest length M
//! [M]  UTF-8 JSON manifest
//! [..] blob: little-endian f32 tensors at the manifest's byte offsets
//! ```
//!
//! The manifest carries the format version, a kind tag (`model` or
//! `encoder`), the model config and one `{name, shape, offset}` entry per
//! tensor. Loading validates everything before returning any tensor.

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"NHTCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: String,
    pub config: ModelConfig,
    pub blob_len: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: Vec<Tensor<f32>>,
}

impl Checkpoint {
    /// Snapshot of the named subset of `store` (all of it when `filter`
    /// accepts everything). Values are stored as f32.
    pub fn from_store<F: Real>(
        store: &ParamStore<F>,
        config: &ModelConfig,
        kind: &str,
        filter: impl Fn(&str) -> bool,
    ) -> Self {
        let mut entries = Vec::new();
        let mut tensors = Vec::new();
        let mut offset = 0u64;
        for (name, t) in store.iter().filter(|(n, _)| filter(n)) {
            entries.push(TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += 4 * t.numel() as u64;
            tensors.push(t.cast::<f32>());
        }
        Checkpoint {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                kind: kind.to_string(),
                config: config.clone(),
                blob_len: offset,
                tensors: entries,
            },
            tensors,
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.manifest.tensors.iter().map(|e| e.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.manifest
            .tensors
            .iter()
            .position(|e| e.name == name)
            .map(|i| &self.tensors[i])
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::with_capacity(16 + manifest.len() + self.manifest.blob_len as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: String| Error::CorruptCheckpoint(msg);
        if bytes.len() < 16 {
            return Err(corrupt(format!(
                "file is {} bytes, shorter than the header",
                bytes.len()
            )));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic".into()));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if mlen > body.len() {
            return Err(corrupt(format!("manifest of {} bytes truncated", mlen)));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..mlen])
            .map_err(|e| corrupt(format!("unreadable manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(corrupt(format!(
                "format version {} (expected {})",
                manifest.format_version, FORMAT_VERSION
            )));
        }
        let blob = &body[mlen..];
        if blob.len() as u64 != manifest.blob_len {
            return Err(corrupt(format!(
                "blob is {} bytes, manifest declares {}",
                blob.len(),
                manifest.blob_len
            )));
        }
        let mut spans: Vec<(u64, u64)> = Vec::with_capacity(manifest.tensors.len());
        let mut seen = HashSet::new();
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            if !seen.insert(e.name.as_str()) {
                return Err(corrupt(format!("tensor {} listed twice", e.name)));
            }
            let numel: u64 = e.shape.iter().map(|&d| d as u64).product();
            if numel == 0 {
                return Err(corrupt(format!("tensor {} has an empty shape", e.name)));
            }
            let end = e
                .offset
                .checked_add(4 * numel)
                .filter(|&end| end <= manifest.blob_len);
            let Some(end) = end else {
                return Err(corrupt(format!("tensor {} extends past the blob", e.name)));
            };
            spans.push((e.offset, end));
            let data = blob[e.offset as usize..end as usize]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            tensors.push(Tensor::new(&e.shape, data).map_err(|e| corrupt(e.to_string()))?);
        }
        spans.sort_unstable();
        if spans.windows(2).any(|w| w[1].0 < w[0].1) {
            return Err(corrupt("tensor byte ranges overlap".into()));
        }
        Ok(Checkpoint { manifest, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Copies every tensor whose name and shape match into `store`.
    pub fn load_into<F: Real>(&self, store: &mut ParamStore<F>) -> LoadReport {
        let mut report = LoadReport::default();
        for (entry, t) in self.manifest.tensors.iter().zip(&self.tensors) {
            match store.id(&entry.name) {
                Some(id) if store.get(id).shape() == t.shape() => {
                    store.set(id, t.cast()).expect("shape checked");
                    report.loaded.push(entry.name.clone());
                }
                Some(_) => report.shape_mismatch.push(entry.name.clone()),
                None => report.unexpected.push(entry.name.clone()),
            }
        }
        let present: HashSet<&str> = self.names().collect();
        report.missing = store
            .iter()
            .map(|(n, _)| n)
            .filter(|n| !present.contains(n))
            .map(str::to_string)
            .collect();
        report
    }

    /// Strict variant of [`load_into`](Self::load_into): every store tensor
    /// must be present with the same shape and nothing may be left over.
    pub fn restore<F: Real>(&self, store: &mut ParamStore<F>) -> Result<()> {
        let mut staged = store.clone();
        let report = self.load_into(&mut staged);
        if !report.is_exact() {
            return Err(Error::CorruptCheckpoint(format!(
                "checkpoint does not match model: missing {:?}, unexpected {:?}, shape mismatch {:?}",
                report.missing, report.unexpected, report.shape_mismatch
            )));
        }
        *store = staged;
        Ok(())
    }
}

/// Outcome of a name-matched partial load.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// In the store, absent from the checkpoint (left as initialised).
    pub missing: Vec<String>,
    /// In the checkpoint, absent from the store.
    pub unexpected: Vec<String>,
    pub shape_mismatch: Vec<String>,
}

impl LoadReport {
    pub fn is_exact(&self) -> bool {
        self.missing.is_empty() && self.unexpected.is_empty() && self.shape_mismatch.is_empty()
    }
}

pub fn save_checkpoint<F: Real>(
    store: &ParamStore<F>,
    config: &ModelConfig,
    path: &Path,
) -> Result<()> {
    Checkpoint::from_store(store, config, "model", |_| true).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
