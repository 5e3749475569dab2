//! Checkpoints: ordered tensor maps backed by the single-file or sharded
//! tensor container, plus the architecture-alignment check used before
//! differencing two checkpoints.

mod align;
pub mod container;
mod shard;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::NamedTensor;

pub use align::{validate_pair, AlignmentReport, ShapeMismatch};
pub use shard::{plan_shards, read_index, IndexMetadata, ShardIndex};

/// An ordered (lexicographic by name) set of tensors plus string metadata.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    tensors: BTreeMap<String, NamedTensor>,
    metadata: BTreeMap<String, String>,
    digest: OnceLock<String>,
}

impl PartialEq for Checkpoint {
    fn eq(&self, other: &Self) -> bool {
        self.tensors == other.tensors && self.metadata == other.metadata
    }
}

impl Checkpoint {
    pub fn new(
        tensors: impl IntoIterator<Item = NamedTensor>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for t in tensors {
            let name = t.name().to_string();
            if map.insert(name.clone(), t).is_some() {
                return Err(Error::format(format!("duplicate tensor name `{name}`")));
            }
        }
        Ok(Self {
            tensors: map,
            metadata,
            digest: OnceLock::new(),
        })
    }

    pub fn from_tensors(tensors: impl IntoIterator<Item = NamedTensor>) -> Result<Self> {
        Self::new(tensors, BTreeMap::new())
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn tensors(&self) -> impl ExactSizeIterator<Item = &NamedTensor> {
        self.tensors.values()
    }

    pub fn names(&self) -> impl ExactSizeIterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count over all tensors.
    pub fn total_elements(&self) -> usize {
        self.tensors.values().map(NamedTensor::len).sum()
    }

    pub fn total_bytes(&self) -> usize {
        self.tensors.values().map(NamedTensor::byte_len).sum()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, String>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn into_parts(self) -> (BTreeMap<String, NamedTensor>, BTreeMap<String, String>) {
        (self.tensors, self.metadata)
    }

    /// Hex SHA-256 over every tensor in name order. Each tensor contributes its
    /// name, dtype, shape and raw little-endian bytes, so the digest survives a
    /// save/load round trip and is independent of sharding and metadata.
    pub fn digest(&self) -> &str {
        self.digest.get_or_init(|| {
            let mut hasher = Sha256::new();
            let mut buf = Vec::new();
            for t in self.tensors.values() {
                hasher.update((t.name().len() as u64).to_le_bytes());
                hasher.update(t.name().as_bytes());
                hasher.update(t.dtype().as_str().as_bytes());
                hasher.update((t.ndim() as u64).to_le_bytes());
                for &d in t.shape() {
                    hasher.update((d as u64).to_le_bytes());
                }
                buf.clear();
                t.data().write_le_bytes(&mut buf);
                hasher.update(&buf);
            }
            hex::encode(hasher.finalize())
        })
    }

    pub(crate) fn tensor_refs(&self) -> Vec<&NamedTensor> {
        self.tensors.values().collect()
    }
}

fn is_index_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

/// Finds the checkpoint file inside a model directory: a shard index if
/// present, otherwise the only container file.
fn resolve_dir(dir: &Path) -> Result<PathBuf> {
    let mut indexes = Vec::new();
    let mut singles = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.ends_with(".safetensors.index.json") {
            indexes.push(path);
        } else if name.ends_with(".safetensors") {
            singles.push(path);
        }
    }
    match (indexes.as_slice(), singles.as_slice()) {
        ([index], _) => Ok(index.clone()),
        ([], [single]) => Ok(single.clone()),
        _ => Err(Error::format(format!(
            "{} does not contain exactly one shard index or container file",
            dir.display()
        ))),
    }
}

/// Loads a container file, a shard-index manifest, or a directory holding one of those.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    if path.is_dir() {
        return load_checkpoint(resolve_dir(path)?);
    }
    if is_index_path(path) {
        return shard::load_sharded(path);
    }
    load_single(path)
}

pub(crate) fn load_single(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (tensors, metadata) = container::decode(&bytes)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    Checkpoint::new(tensors, metadata)
}

pub(crate) fn write_single(
    path: &Path,
    tensors: &[&NamedTensor],
    metadata: &BTreeMap<String, String>,
) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    container::write(&mut out, tensors, metadata).map_err(|e| Error::io(path, e))?;
    std::io::Write::flush(&mut out).map_err(|e| Error::io(path, e))
}

/// Saves `ckpt` to `path`. With `max_shard_bytes`, `path` names the shard-index
/// manifest and the shards are written next to it.
pub fn save_checkpoint(
    ckpt: &Checkpoint,
    path: impl AsRef<Path>,
    max_shard_bytes: Option<usize>,
) -> Result<()> {
    let path = path.as_ref();
    match max_shard_bytes {
        None => write_single(path, &ckpt.tensor_refs(), ckpt.metadata()),
        Some(max) => shard::save_sharded(ckpt, path, max).map(|_| ()),
    }
}
