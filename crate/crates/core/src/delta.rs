//! Dense weight-difference adapters.
//!
//! A [`DeltaAdapter`] holds `instruct - base` per tensor (the instruction
//! adapter), or any other dense additive adapter such as a densified LoRA.
//! Applying it adds `scale * delta` to every covered tensor of a base.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rayon::prelude::*;

use crate::checkpoint::{load_checkpoint, save_checkpoint, validate_pair, Checkpoint};
use crate::error::{Error, Result};
use crate::tensor::{add_scaled, cast, subtract, DType, NamedTensor};

pub const KIND_KEY: &str = "kind";
pub const KIND_RE_ADAPTER: &str = "re-adapter";
pub const KIND_KNOWLEDGE_ADAPTER: &str = "knowledge-adapter";
pub const BASE_DIGEST_KEY: &str = "base_digest";
pub const INSTRUCT_DIGEST_KEY: &str = "instruct_digest";
pub const TOOL_VERSION_KEY: &str = "tool_version";

pub(crate) fn tool_version() -> String {
    concat!("readapt ", env!("CARGO_PKG_VERSION")).to_string()
}

/// Dense per-tensor adapter with provenance digests.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaAdapter {
    deltas: BTreeMap<String, NamedTensor>,
    base_digest: String,
    instruct_digest: String,
    metadata: BTreeMap<String, String>,
}

impl DeltaAdapter {
    pub fn new(
        deltas: impl IntoIterator<Item = NamedTensor>,
        base_digest: impl Into<String>,
        instruct_digest: impl Into<String>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for t in deltas {
            let name = t.name().to_string();
            if map.insert(name.clone(), t).is_some() {
                return Err(Error::format(format!("duplicate adapter tensor `{name}`")));
            }
        }
        Ok(Self {
            deltas: map,
            base_digest: base_digest.into(),
            instruct_digest: instruct_digest.into(),
            metadata,
        })
    }

    pub fn deltas(&self) -> impl ExactSizeIterator<Item = &NamedTensor> {
        self.deltas.values()
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.deltas.get(name)
    }

    pub fn names(&self) -> impl ExactSizeIterator<Item = &str> {
        self.deltas.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.deltas.values().map(NamedTensor::len).sum()
    }

    pub fn base_digest(&self) -> &str {
        &self.base_digest
    }

    pub fn instruct_digest(&self) -> &str {
        &self.instruct_digest
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn kind(&self) -> &str {
        self.metadata.get(KIND_KEY).map_or(KIND_RE_ADAPTER, String::as_str)
    }

    pub fn into_deltas(self) -> BTreeMap<String, NamedTensor> {
        self.deltas
    }

    /// Container view: tensors verbatim, provenance in `__metadata__`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta = self.metadata.clone();
        meta.entry(KIND_KEY.into()).or_insert_with(|| KIND_RE_ADAPTER.into());
        meta.insert(BASE_DIGEST_KEY.into(), self.base_digest.clone());
        meta.insert(INSTRUCT_DIGEST_KEY.into(), self.instruct_digest.clone());
        meta.entry(TOOL_VERSION_KEY.into()).or_insert_with(tool_version);
        Checkpoint::new(self.deltas.values().cloned(), meta).expect("names are unique")
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let (tensors, mut meta) = ckpt.into_parts();
        match meta.get(KIND_KEY).map(String::as_str) {
            Some(KIND_RE_ADAPTER) | Some(KIND_KNOWLEDGE_ADAPTER) => {}
            Some(other) => {
                return Err(Error::format(format!(
                    "expected a dense adapter, found kind `{other}`"
                )))
            }
            None => return Err(Error::format("adapter file has no `kind` metadata")),
        }
        let base = meta.remove(BASE_DIGEST_KEY).unwrap_or_default();
        let instruct = meta.remove(INSTRUCT_DIGEST_KEY).unwrap_or_default();
        Self::new(tensors.into_values(), base, instruct, meta)
    }

    pub fn save(&self, path: impl AsRef<Path>, max_shard_bytes: Option<usize>) -> Result<()> {
        save_checkpoint(&self.to_checkpoint(), path, max_shard_bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(load_checkpoint(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct ExtractOptions {
    /// Diff the intersection of both name sets instead of failing.
    pub skip_unmatched: bool,
    /// Storage dtype of the stored differences.
    pub storage_dtype: DType,
    /// Free-form identifiers recorded as `base_model` / `instruct_model`.
    pub base_id: Option<String>,
    pub instruct_id: Option<String>,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            skip_unmatched: false,
            storage_dtype: DType::F32,
            base_id: None,
            instruct_id: None,
        }
    }
}

/// `instruct - base` for every matched tensor.
pub fn extract_delta(
    base: &Checkpoint,
    instruct: &Checkpoint,
    opts: &ExtractOptions,
) -> Result<DeltaAdapter> {
    let report = validate_pair(base, instruct);
    if !report.is_diffable() {
        if !opts.skip_unmatched {
            return Err(Error::NotDiffable(Box::new(report)));
        }
        warn!("diffing matched tensors only: {}", report.summary());
    }

    let deltas: Vec<NamedTensor> = report
        .matched
        .par_iter()
        .map(|name| {
            let theta = instruct.get(name).expect("matched name exists in instruct");
            let phi = base.get(name).expect("matched name exists in base");
            let d = subtract(theta, phi)?;
            Ok(match opts.storage_dtype {
                DType::F32 => d,
                other => cast(&d, other),
            })
        })
        .collect::<Result<_>>()?;

    let mut meta = BTreeMap::new();
    meta.insert(KIND_KEY.into(), KIND_RE_ADAPTER.into());
    meta.insert(TOOL_VERSION_KEY.into(), tool_version());
    if let Some(id) = &opts.base_id {
        meta.insert("base_model".into(), id.clone());
    }
    if let Some(id) = &opts.instruct_id {
        meta.insert("instruct_model".into(), id.clone());
    }
    DeltaAdapter::new(deltas, base.digest(), instruct.digest(), meta)
}

/// Checks every adapter tensor exists in `base` with the same shape.
pub(crate) fn check_covers(base: &Checkpoint, delta: &DeltaAdapter) -> Result<()> {
    for d in delta.deltas() {
        let b = base
            .get(d.name())
            .ok_or_else(|| Error::MissingTensor(d.name().to_string()))?;
        if b.shape() != d.shape() {
            return Err(Error::ShapeMismatch {
                name: d.name().to_string(),
                left: b.shape().to_vec(),
                right: d.shape().to_vec(),
            });
        }
    }
    Ok(())
}

pub(crate) fn check_digest(base: &Checkpoint, expected: &str) -> Result<()> {
    if base.digest() != expected {
        return Err(Error::DigestMismatch {
            expected: expected.to_string(),
            actual: base.digest().to_string(),
        });
    }
    Ok(())
}

/// `base + scale * delta` on covered tensors; everything else passes through.
/// Output tensors keep the base dtype.
pub fn apply_delta(
    base: &Checkpoint,
    delta: &DeltaAdapter,
    scale: f64,
    verify_digest: bool,
) -> Result<Checkpoint> {
    if verify_digest {
        check_digest(base, delta.base_digest())?;
    }
    check_covers(base, delta)?;
    let tensors: Vec<NamedTensor> = base
        .tensors()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|t| match delta.get(t.name()) {
            Some(d) => add_scaled(t, d, scale),
            None => Ok(t.clone()),
        })
        .collect::<Result<_>>()?;
    Checkpoint::new(tensors, base.metadata().clone())
}
