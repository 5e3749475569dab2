//! Partial adaptation: `Ω = Φ + Σ sᵢ Δᵢ`, typically `Φ + α Ψ + β Δ` with a
//! knowledge adapter `Ψ` and an instruction adapter `Δ`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::delta::{check_covers, check_digest, tool_version, DeltaAdapter, TOOL_VERSION_KEY};
use crate::error::{Error, Result};
use crate::peft::load_peft_dir;
use crate::spectra::{materialize, LoreAdapter};
use crate::tensor::{cast, DType, NamedTensor, TensorData};

/// Default strength for both adapters.
pub const DEFAULT_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermKind {
    /// A dense adapter file written by `extract_delta` or a PEFT densify.
    DenseDelta,
    /// A low-rank adapter, materialized on load.
    Lore,
    /// A PEFT adapter directory, densified against the recipe base.
    Peft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeTerm {
    pub path: PathBuf,
    pub scale: f64,
    #[serde(default = "default_kind")]
    pub kind: TermKind,
}

fn default_kind() -> TermKind {
    TermKind::DenseDelta
}

/// JSON recipe: `{"base": path, "terms": [{"path", "scale", "kind"}], "dtype"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecipe {
    pub base: PathBuf,
    #[serde(default)]
    pub terms: Vec<MergeTerm>,
    /// Output dtype for every tensor; each tensor keeps its base dtype when unset.
    #[serde(default)]
    pub dtype: Option<DType>,
    #[serde(default)]
    pub verify_digests: bool,
    /// Permit scales outside `[0, 1]`.
    #[serde(default)]
    pub allow_extrapolation: bool,
}

impl MergeRecipe {
    /// Parses a recipe file; relative paths resolve against its directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut recipe: Self = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        let root = path.parent().unwrap_or(Path::new(""));
        recipe.base = root.join(&recipe.base);
        for t in &mut recipe.terms {
            t.path = root.join(&t.path);
        }
        Ok(recipe)
    }
}

pub fn check_scale(scale: f64, allow_extrapolation: bool) -> Result<()> {
    if !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("scale must be finite, got {scale}")));
    }
    if !allow_extrapolation && !(0.0..=1.0).contains(&scale) {
        return Err(Error::InvalidArgument(format!(
            "scale {scale} is outside [0, 1]; enable extrapolation to allow it"
        )));
    }
    Ok(())
}

/// Loads one recipe term as a dense adapter.
pub fn load_term(term: &MergeTerm, base: &Checkpoint) -> Result<DeltaAdapter> {
    match term.kind {
        TermKind::DenseDelta => DeltaAdapter::load(&term.path),
        TermKind::Lore => Ok(materialize(&LoreAdapter::load(&term.path)?)),
        TermKind::Peft => load_peft_dir(&term.path)?.densify(base),
    }
}

/// Runs a recipe from disk.
pub fn compose(recipe: &MergeRecipe) -> Result<Checkpoint> {
    for t in &recipe.terms {
        check_scale(t.scale, recipe.allow_extrapolation)?;
    }
    let base = load_checkpoint(&recipe.base)?;
    let adapters: Vec<DeltaAdapter> = recipe
        .terms
        .iter()
        .map(|t| load_term(t, &base))
        .collect::<Result<_>>()?;
    let terms: Vec<(&DeltaAdapter, f64)> = adapters.iter().zip(recipe.terms.iter().map(|t| t.scale)).collect();
    compose_with(&base, &terms, recipe.dtype, recipe.verify_digests)
}

/// `base + Σ scale · adapter` per tensor. Contributions accumulate in `f64`
/// and are rounded once to the output dtype. Tensors that no term touches
/// with a nonzero scale are copied bitwise (then cast when `dtype` differs).
pub fn compose_with(
    base: &Checkpoint,
    terms: &[(&DeltaAdapter, f64)],
    dtype: Option<DType>,
    verify_digests: bool,
) -> Result<Checkpoint> {
    for &(adapter, scale) in terms {
        if !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("scale must be finite, got {scale}")));
        }
        if verify_digests {
            check_digest(base, adapter.base_digest())?;
        }
        check_covers(base, adapter)?;
    }
    let tensors: Vec<NamedTensor> = base
        .tensors()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|t| compose_tensor(t, terms, dtype.unwrap_or(t.dtype())))
        .collect::<Result<_>>()?;
    let mut meta = base.metadata().clone();
    meta.insert(TOOL_VERSION_KEY.into(), tool_version());
    meta.insert("merge_base_digest".into(), base.digest().to_string());
    let scales: Vec<String> = terms.iter().map(|(_, s)| s.to_string()).collect();
    meta.insert("merge_scales".into(), scales.join(","));
    Checkpoint::new(tensors, meta)
}

fn compose_tensor(t: &NamedTensor, terms: &[(&DeltaAdapter, f64)], dtype: DType) -> Result<NamedTensor> {
    let active: Vec<(&NamedTensor, f64)> = terms
        .iter()
        .filter(|(_, s)| *s != 0.0)
        .filter_map(|(a, s)| a.get(t.name()).map(|d| (d, *s)))
        .collect();
    if active.is_empty() {
        return Ok(cast(t, dtype));
    }
    let mut acc: Vec<f64> = t.to_f32().iter().map(|&x| f64::from(x)).collect();
    for (d, s) in active {
        for (a, &x) in acc.iter_mut().zip(d.to_f32().iter()) {
            *a += s * f64::from(x);
        }
    }
    let values = acc.into_iter().map(|x| x as f32).collect();
    NamedTensor::new(t.name(), t.shape().to_vec(), TensorData::from_f32(values, dtype))
}

/// One row of the sweep manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub alpha: f64,
    pub beta: f64,
    pub path: PathBuf,
    pub tensors: usize,
    pub digest: String,
}

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub dtype: Option<DType>,
    pub verify_digests: bool,
    pub allow_extrapolation: bool,
    pub max_shard_bytes: Option<usize>,
}

pub fn sweep_file_name(alpha: f64, beta: f64) -> String {
    format!("omega_a{alpha}_b{beta}.safetensors")
}

/// Writes `Φ + α Ψ + β Δ` for every `(α, β)` in the grid product and a
/// `manifest.csv` next to the outputs. Without `knowledge` the α grid must be
/// all zeros, and likewise for `re_adapter` and β.
pub fn sweep(
    base: &Checkpoint,
    knowledge: Option<&DeltaAdapter>,
    re_adapter: Option<&DeltaAdapter>,
    alpha_grid: &[f64],
    beta_grid: &[f64],
    out_dir: impl AsRef<Path>,
    opts: &SweepOptions,
) -> Result<Vec<SweepEntry>> {
    let out_dir = out_dir.as_ref();
    for (grid, adapter, label) in [(alpha_grid, knowledge, "alpha"), (beta_grid, re_adapter, "beta")] {
        if grid.is_empty() {
            return Err(Error::InvalidArgument(format!("the {label} grid is empty")));
        }
        for &s in grid {
            check_scale(s, opts.allow_extrapolation)?;
            if adapter.is_none() && s != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{label} = {s} needs an adapter to scale"
                )));
            }
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(alpha_grid.len() * beta_grid.len());
    for &alpha in alpha_grid {
        for &beta in beta_grid {
            let mut terms = Vec::new();
            if let Some(k) = knowledge {
                terms.push((k, alpha));
            }
            if let Some(r) = re_adapter {
                terms.push((r, beta));
            }
            let omega = compose_with(base, &terms, opts.dtype, opts.verify_digests)?;
            let mut file = sweep_file_name(alpha, beta);
            if opts.max_shard_bytes.is_some() {
                file = file.replace(".safetensors", ".safetensors.index.json");
            }
            let path = out_dir.join(&file);
            let mut meta: BTreeMap<String, String> = omega.metadata().clone();
            meta.insert("alpha".into(), alpha.to_string());
            meta.insert("beta".into(), beta.to_string());
            let omega = omega.with_metadata(meta);
            save_checkpoint(&omega, &path, opts.max_shard_bytes)?;
            log::info!("wrote {} (alpha {alpha}, beta {beta})", path.display());
            entries.push(SweepEntry {
                alpha,
                beta,
                path: PathBuf::from(file),
                tensors: omega.len(),
                digest: omega.digest().to_string(),
            });
        }
    }
    write_manifest(&out_dir.join(MANIFEST_FILE), &entries)?;
    Ok(entries)
}

fn write_manifest(path: &Path, entries: &[SweepEntry]) -> Result<()> {
    let to_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(format!("{}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for e in entries {
        w.serialize(e).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<SweepEntry>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(format!("{}: {e}", path.display()))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(name: &str, v: f32) -> NamedTensor {
        NamedTensor::from_f32(name, vec![1], vec![v]).unwrap()
    }

    fn adapter(v: f32) -> DeltaAdapter {
        DeltaAdapter::new([scalar("w", v)], "", "", BTreeMap::new()).unwrap()
    }

    fn base() -> Checkpoint {
        Checkpoint::from_tensors([scalar("w", 1.0), scalar("untouched", 7.0)]).unwrap()
    }

    #[test]
    fn half_and_half_on_scalars() {
        let (psi, delta) = (adapter(2.0), adapter(4.0));
        let out = compose_with(&base(), &[(&psi, 0.5), (&delta, 0.5)], None, false).unwrap();
        assert_eq!(out.get("w").unwrap().to_f32()[0], 4.0);
        assert!(out.get("untouched").unwrap().bitwise_eq(base().get("untouched").unwrap()));
    }

    #[test]
    fn zero_scales_are_identity() {
        let b = base();
        let out = compose_with(&b, &[(&adapter(3.0), 0.0)], None, false).unwrap();
        assert_eq!(out.digest(), b.digest());
        assert_eq!(compose_with(&b, &[], None, false).unwrap().digest(), b.digest());
    }

    #[test]
    fn scale_bounds() {
        assert!(check_scale(0.0, false).is_ok() && check_scale(1.0, false).is_ok());
        assert!(check_scale(1.5, false).is_err());
        assert!(check_scale(1.5, true).is_ok());
        assert!(check_scale(f64::NAN, true).is_err());
    }

    #[test]
    fn digest_verification() {
        let b = base();
        let d = DeltaAdapter::new([scalar("w", 1.0)], "not-it", "", BTreeMap::new()).unwrap();
        assert!(matches!(
            compose_with(&b, &[(&d, 1.0)], None, true),
            Err(Error::DigestMismatch { .. })
        ));
        assert!(compose_with(&b, &[(&d, 1.0)], None, false).is_ok());
    }

    #[test]
    fn output_dtype_override() {
        let out = compose_with(&base(), &[(&adapter(2.0), 1.0)], Some(DType::BF16), false).unwrap();
        assert!(out.tensors().all(|t| t.dtype() == DType::BF16));
    }

    #[test]
    fn recipe_parses_with_defaults() {
        let r: MergeRecipe = serde_json::from_str(
            r#"{"base": "b", "terms": [{"path": "d", "scale": 0.5, "kind": "lore"}, {"path": "e", "scale": 1}]}"#,
        )
        .unwrap();
        assert_eq!(r.terms[0].kind, TermKind::Lore);
        assert_eq!(r.terms[1].kind, TermKind::DenseDelta);
        assert_eq!(r.dtype, None);
        assert!(!r.verify_digests && !r.allow_extrapolation);
    }

    #[test]
    fn sweep_writes_grid_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let (k, d) = (adapter(2.0), adapter(4.0));
        let grid = [0.0, 0.5, 1.0];
        let entries = sweep(&base(), Some(&k), Some(&d), &grid, &grid, dir.path(), &SweepOptions::default()).unwrap();
        assert_eq!(entries.len(), 9);
        assert_eq!(read_manifest(dir.path().join(MANIFEST_FILE)).unwrap(), entries);
        let last = load_checkpoint(dir.path().join(sweep_file_name(1.0, 1.0))).unwrap();
        assert_eq!(last.get("w").unwrap().to_f32()[0], 7.0);
        assert!(dir.path().join("omega_a0.5_b0.5.safetensors").is_file());
    }

    #[test]
    fn sweep_without_knowledge_needs_zero_alpha() {
        let dir = tempfile::tempdir().unwrap();
        let d = adapter(4.0);
        let opts = SweepOptions::default();
        assert!(sweep(&base(), None, Some(&d), &[0.5], &[1.0], dir.path(), &opts).is_err());
        assert_eq!(sweep(&base(), None, Some(&d), &[0.0], &[0.0, 1.0], dir.path(), &opts).unwrap().len(), 2);
    }
}
