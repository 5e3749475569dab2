use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_single, write_single, Checkpoint};
use crate::error::{Error, Result};

/// Shard-index manifest: `{"metadata": {"total_size": N}, "weight_map": {...}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardIndex {
    pub metadata: IndexMetadata,
    pub weight_map: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMetadata {
    pub total_size: u64,
}

impl ShardIndex {
    pub fn total_size_bytes(&self) -> u64 {
        self.metadata.total_size
    }

    /// Shard file names in first-appearance order of the sorted weight map.
    pub fn shard_files(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.weight_map
            .values()
            .filter(|f| seen.insert(f.as_str()))
            .map(String::as_str)
            .collect()
    }
}

/// Greedy first-fit packing in the given order: each item goes into the first
/// shard with enough room left, otherwise a new shard is opened. Returns the
/// item indices per shard.
pub fn plan_shards(sizes: &[(String, usize)], max_shard_bytes: usize) -> Result<Vec<Vec<usize>>> {
    let mut shards: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, (name, size)) in sizes.iter().enumerate() {
        if *size > max_shard_bytes {
            return Err(Error::ShardTooSmall {
                name: name.clone(),
                needed: *size,
                max_shard_bytes,
            });
        }
        match shards.iter_mut().find(|(used, _)| used + size <= max_shard_bytes) {
            Some((used, items)) => {
                *used += size;
                items.push(i);
            }
            None => shards.push((*size, vec![i])),
        }
    }
    Ok(shards.into_iter().map(|(_, items)| items).collect())
}

/// `model.safetensors.index.json` -> `model`.
fn shard_stem(index_path: &Path) -> String {
    let name = index_path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("model");
    let name = name.strip_suffix(".json").unwrap_or(name);
    let name = name.strip_suffix(".index").unwrap_or(name);
    let name = name.strip_suffix(".safetensors").unwrap_or(name);
    if name.is_empty() { "model" } else { name }.to_string()
}

pub(super) fn save_sharded(
    ckpt: &Checkpoint,
    index_path: &Path,
    max_shard_bytes: usize,
) -> Result<ShardIndex> {
    let tensors = ckpt.tensor_refs();
    let sizes: Vec<(String, usize)> = tensors
        .iter()
        .map(|t| (t.name().to_string(), t.byte_len()))
        .collect();
    let plan = plan_shards(&sizes, max_shard_bytes)?;

    let dir = index_path.parent().unwrap_or(Path::new(""));
    let stem = shard_stem(index_path);
    let total = plan.len();
    let mut weight_map = BTreeMap::new();
    for (i, items) in plan.iter().enumerate() {
        let file = format!("{stem}-{:05}-of-{total:05}.safetensors", i + 1);
        let members: Vec<_> = items.iter().map(|&j| tensors[j]).collect();
        for t in &members {
            weight_map.insert(t.name().to_string(), file.clone());
        }
        write_single(&dir.join(&file), &members, ckpt.metadata())?;
    }

    let index = ShardIndex {
        metadata: IndexMetadata {
            total_size: ckpt.total_bytes() as u64,
        },
        weight_map,
    };
    let json = serde_json::to_vec_pretty(&index).expect("index serializes");
    fs::write(index_path, json).map_err(|e| Error::io(index_path, e))?;
    Ok(index)
}

pub fn read_index(index_path: &Path) -> Result<ShardIndex> {
    let bytes = fs::read(index_path).map_err(|e| Error::io(index_path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::format(format!("{}: malformed shard index: {e}", index_path.display())))
}

pub(super) fn load_sharded(index_path: &Path) -> Result<Checkpoint> {
    let index = read_index(index_path)?;
    let dir = index_path.parent().unwrap_or(Path::new(""));
    let files: Vec<PathBuf> = index.shard_files().iter().map(|f| dir.join(f)).collect();
    if let Some(missing) = files.iter().find(|p| !p.is_file()) {
        return Err(Error::ShardMissing(missing.clone()));
    }

    let shards: Vec<Checkpoint> = files
        .par_iter()
        .map(|p| load_single(p))
        .collect::<Result<_>>()?;

    let mut tensors = Vec::new();
    let mut metadata = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (file, shard) in index.shard_files().into_iter().zip(shards) {
        let (shard_tensors, shard_meta) = shard.into_parts();
        metadata.extend(shard_meta);
        for (name, t) in shard_tensors {
            match index.weight_map.get(&name) {
                Some(f) if f == file => {}
                Some(f) => {
                    return Err(Error::format(format!(
                        "tensor `{name}` found in {file} but indexed under {f}"
                    )))
                }
                None => {
                    return Err(Error::format(format!(
                        "tensor `{name}` in {file} is missing from the weight map"
                    )))
                }
            }
            seen.insert(name);
            tensors.push(t);
        }
    }
    if let Some(name) = index.weight_map.keys().find(|n| !seen.contains(*n)) {
        return Err(Error::format(format!(
            "tensor `{name}` is indexed under {} but absent from that shard",
            index.weight_map[name]
        )));
    }
    Checkpoint::new(tensors, metadata)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::{load_checkpoint, save_checkpoint};
    use crate::tensor::NamedTensor;

    fn sizes(xs: &[usize]) -> Vec<(String, usize)> {
        xs.iter().enumerate().map(|(i, &s)| (format!("t{i}"), s)).collect()
    }

    #[test]
    fn greedy_first_fit_hand_simulation() {
        // 100 + 100 > 150, so every tensor opens a new shard.
        assert_eq!(plan_shards(&sizes(&[100, 100, 100]), 150).unwrap(), vec![vec![0], vec![1], vec![2]]);
        // First fit back-fills earlier shards: 60 | 100 | then 40 joins the first.
        assert_eq!(plan_shards(&sizes(&[60, 100, 40]), 100).unwrap(), vec![vec![0, 2], vec![1]]);
        assert_eq!(plan_shards(&sizes(&[50, 50, 50]), 100).unwrap(), vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn oversized_tensor_is_shard_too_small() {
        assert!(matches!(
            plan_shards(&sizes(&[10, 200]), 150),
            Err(Error::ShardTooSmall { needed: 200, .. })
        ));
    }

    #[test]
    fn stems() {
        assert_eq!(shard_stem(Path::new("x/model.safetensors.index.json")), "model");
        assert_eq!(shard_stem(Path::new("delta.index.json")), "delta");
        assert_eq!(shard_stem(Path::new("w.json")), "w");
    }

    fn three_tensors() -> Checkpoint {
        Checkpoint::from_tensors((0..3).map(|i| {
            NamedTensor::from_f32(format!("t{i}"), vec![25], vec![i as f32; 25]).unwrap()
        }))
        .unwrap()
    }

    #[test]
    fn sharded_matches_single_file() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = three_tensors();
        let index_path = dir.path().join("model.safetensors.index.json");
        save_checkpoint(&ckpt, &index_path, Some(150)).unwrap();
        let index = read_index(&index_path).unwrap();
        assert_eq!(index.shard_files().len(), 3);
        assert_eq!(index.total_size_bytes(), 300);
        assert!(dir.path().join("model-00001-of-00003.safetensors").is_file());

        let single = dir.path().join("single.safetensors");
        save_checkpoint(&ckpt, &single, None).unwrap();
        let a = load_checkpoint(&index_path).unwrap();
        let b = load_checkpoint(&single).unwrap();
        for (x, y) in a.tensors().zip(b.tensors()) {
            assert!(x.bitwise_eq(y));
        }
        assert_eq!(load_checkpoint(dir.path().join("model.safetensors.index.json")).unwrap(), b);
    }

    #[test]
    fn missing_shard_reported() {
        let dir = tempfile::tempdir().unwrap();
        let index_path = dir.path().join("model.safetensors.index.json");
        save_checkpoint(&three_tensors(), &index_path, Some(150)).unwrap();
        fs::remove_file(dir.path().join("model-00002-of-00003.safetensors")).unwrap();
        assert!(matches!(load_checkpoint(&index_path), Err(Error::ShardMissing(_))));
    }

    #[test]
    fn weight_map_must_agree_with_shards() {
        let dir = tempfile::tempdir().unwrap();
        let index_path = dir.path().join("model.safetensors.index.json");
        save_checkpoint(&three_tensors(), &index_path, Some(150)).unwrap();
        let mut index = read_index(&index_path).unwrap();
        index.weight_map.insert("t0".into(), "model-00002-of-00003.safetensors".into());
        fs::write(&index_path, serde_json::to_vec(&index).unwrap()).unwrap();
        assert!(matches!(load_checkpoint(&index_path), Err(Error::Format(_))));
    }
}
