//! LoRA and DoRA knowledge adapters in the PEFT on-disk layout.
//!
//! A directory holds `adapter_config.json` and `adapter_model.safetensors`
//! with keys `base_model.model.<module>.lora_A.weight`, `.lora_B.weight` and,
//! for DoRA, `.lora_magnitude_vector`. Each module adapts the base tensor
//! `<module>.weight`. Densifying an adapter yields a plain [`DeltaAdapter`];
//! any strength scaling is left to [`crate::merge`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, Checkpoint};
use crate::delta::{tool_version, DeltaAdapter, KIND_KEY, KIND_KNOWLEDGE_ADAPTER, TOOL_VERSION_KEY};
use crate::error::{Error, Result};
use crate::spectra::svd::{to_matrix, to_row_major_f32};
use crate::tensor::NamedTensor;

pub const CONFIG_FILE: &str = "adapter_config.json";
pub const WEIGHTS_FILE: &str = "adapter_model.safetensors";
const KEY_PREFIX: &str = "base_model.model.";
const LORA_A: &str = ".lora_A.weight";
const LORA_B: &str = ".lora_B.weight";
const MAGNITUDE: &str = ".lora_magnitude_vector";
const NORM_FLOOR: f64 = 1e-12;

/// `ΔW = scaling · B A` for one adapted weight, `B` is `m x r`, `A` is `r x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraModule {
    pub target_name: String,
    pub a: NamedTensor,
    pub b: NamedTensor,
    pub rank: usize,
    pub alpha: f64,
    /// Training-time only, kept for provenance.
    pub dropout: f64,
    /// rsLoRA scaling `alpha / sqrt(r)` instead of `alpha / r`.
    pub use_rslora: bool,
}

impl LoraModule {
    pub fn new(target_name: impl Into<String>, a: NamedTensor, b: NamedTensor, alpha: f64) -> Result<Self> {
        let target_name = target_name.into();
        let (Some((ra, _)), Some((_, rb))) = (a.matrix_dims(), b.matrix_dims()) else {
            return Err(Error::InvalidTensor {
                name: target_name,
                reason: "lora_A and lora_B must be 2-D".into(),
            });
        };
        if ra != rb {
            return Err(Error::ShapeMismatch {
                name: target_name,
                left: b.shape().to_vec(),
                right: a.shape().to_vec(),
            });
        }
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lora_alpha must be positive for `{target_name}`, got {alpha}"
            )));
        }
        Ok(Self {
            target_name,
            a,
            b,
            rank: ra,
            alpha,
            dropout: 0.0,
            use_rslora: false,
        })
    }

    pub fn with_dropout(mut self, dropout: f64) -> Self {
        self.dropout = dropout;
        self
    }

    pub fn with_rslora(mut self, use_rslora: bool) -> Self {
        self.use_rslora = use_rslora;
        self
    }

    pub fn scaling(&self) -> f64 {
        if self.use_rslora {
            self.alpha / (self.rank as f64).sqrt()
        } else {
            self.alpha / self.rank as f64
        }
    }

    /// Shape of `B A`.
    pub fn output_shape(&self) -> [usize; 2] {
        [self.b.shape()[0], self.a.shape()[1]]
    }

    fn scaled_product(&self) -> Result<DMatrix<f64>> {
        if self.b.shape()[1] != self.a.shape()[0] || self.rank != self.a.shape()[0] {
            return Err(Error::ShapeMismatch {
                name: self.target_name.clone(),
                left: self.b.shape().to_vec(),
                right: self.a.shape().to_vec(),
            });
        }
        Ok((to_matrix(&self.b)? * to_matrix(&self.a)?) * self.scaling())
    }
}

/// LoRA update plus a per-output magnitude vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DoraModule {
    pub lora: LoraModule,
    pub magnitude: Vec<f32>,
}

impl DoraModule {
    pub fn new(lora: LoraModule, magnitude: Vec<f32>) -> Result<Self> {
        if let Some(bad) = magnitude.iter().find(|m| !(**m >= 0.0)) {
            return Err(Error::InvalidTensor {
                name: lora.target_name.clone(),
                reason: format!("magnitude entries must be non-negative, found {bad}"),
            });
        }
        Ok(Self { lora, magnitude })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdapterModule {
    Lora(LoraModule),
    Dora(DoraModule),
}

impl AdapterModule {
    pub fn lora(&self) -> &LoraModule {
        match self {
            AdapterModule::Lora(l) => l,
            AdapterModule::Dora(d) => &d.lora,
        }
    }

    pub fn target_name(&self) -> &str {
        &self.lora().target_name
    }

    pub fn densify(&self, base: &Checkpoint) -> Result<NamedTensor> {
        let w = base
            .get(self.target_name())
            .ok_or_else(|| Error::UnresolvedTarget(vec![self.target_name().to_string()]))?;
        let out = match self {
            AdapterModule::Lora(l) => densify_lora(l)?,
            AdapterModule::Dora(d) => densify_dora(d, w)?,
        };
        if out.shape() != w.shape() {
            return Err(Error::ShapeMismatch {
                name: self.target_name().to_string(),
                left: w.shape().to_vec(),
                right: out.shape().to_vec(),
            });
        }
        Ok(out)
    }
}

/// `(alpha / r) · B A` as `f32`.
pub fn densify_lora(module: &LoraModule) -> Result<NamedTensor> {
    let p = module.scaled_product()?;
    NamedTensor::from_f32(
        module.target_name.clone(),
        module.output_shape().to_vec(),
        to_row_major_f32(&p),
    )
}

/// Axis along which DoRA normalizes a weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormAxis {
    /// One norm per output row, taken over the input dimension.
    Rows,
    /// One norm per column.
    Cols,
}

/// The axis whose count matches the magnitude length. Square weights use
/// [`NormAxis::Rows`], the convention of PEFT-trained adapters.
pub fn norm_axis(name: &str, shape: [usize; 2], magnitude_len: usize) -> Result<NormAxis> {
    let [m, n] = shape;
    if magnitude_len == m {
        Ok(NormAxis::Rows)
    } else if magnitude_len == n {
        Ok(NormAxis::Cols)
    } else {
        Err(Error::ShapeMismatch {
            name: name.to_string(),
            left: shape.to_vec(),
            right: vec![magnitude_len],
        })
    }
}

/// `W' − W` with `V' = W + scaling · B A` and `W' = m ⊙ V' / ‖V'‖`.
pub fn densify_dora(module: &DoraModule, base: &NamedTensor) -> Result<NamedTensor> {
    let lora = &module.lora;
    let name = lora.target_name.as_str();
    let shape = lora.output_shape();
    if base.shape() != shape {
        return Err(Error::ShapeMismatch {
            name: name.to_string(),
            left: base.shape().to_vec(),
            right: shape.to_vec(),
        });
    }
    let axis = norm_axis(name, shape, module.magnitude.len())?;
    let w = to_matrix(base)?;
    let mut v = &w + lora.scaled_product()?;
    let count = match axis {
        NormAxis::Rows => shape[0],
        NormAxis::Cols => shape[1],
    };
    for i in 0..count {
        let norm = match axis {
            NormAxis::Rows => v.row(i).norm(),
            NormAxis::Cols => v.column(i).norm(),
        };
        if norm < NORM_FLOOR {
            return Err(Error::DegenerateColumn {
                name: name.to_string(),
                column: i,
                norm,
            });
        }
        let factor = module.magnitude[i] as f64 / norm;
        match axis {
            NormAxis::Rows => v.row_mut(i).scale_mut(factor),
            NormAxis::Cols => v.column_mut(i).scale_mut(factor),
        }
    }
    NamedTensor::from_f32(name, shape.to_vec(), to_row_major_f32(&(v - w)))
}

/// `target_modules`: a list of module-name suffixes, or a single regex
/// matched against the full module name (`"all-linear"` matches every
/// adapted module).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetModules {
    List(Vec<String>),
    Pattern(String),
}

impl Default for TargetModules {
    fn default() -> Self {
        TargetModules::Pattern(ALL_LINEAR.into())
    }
}

const ALL_LINEAR: &str = "all-linear";

impl TargetModules {
    pub fn matches(&self, module: &str) -> bool {
        match self {
            TargetModules::List(list) => list.iter().any(|t| suffix_match(module, t)),
            TargetModules::Pattern(p) if p == ALL_LINEAR => true,
            TargetModules::Pattern(p) => full_regex(p).is_some_and(|re| re.is_match(module)),
        }
    }
}

fn suffix_match(module: &str, target: &str) -> bool {
    module == target
        || module
            .strip_suffix(target)
            .is_some_and(|head| head.ends_with('.'))
}

fn full_regex(pattern: &str) -> Option<Regex> {
    Regex::new(&format!("^(?:{pattern})$")).ok()
}

/// Fields of `adapter_config.json` this crate reads. Missing fields take the
/// defaults of the reference training recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    #[serde(default = "default_r")]
    pub r: usize,
    #[serde(default = "default_alpha")]
    pub lora_alpha: f64,
    #[serde(default = "default_dropout")]
    pub lora_dropout: f64,
    #[serde(default = "default_true")]
    pub use_dora: bool,
    #[serde(default)]
    pub use_rslora: bool,
    #[serde(default)]
    pub target_modules: TargetModules,
    #[serde(default)]
    pub fan_in_fan_out: bool,
    #[serde(default = "default_bias")]
    pub bias: String,
    #[serde(default)]
    pub rank_pattern: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub alpha_pattern: BTreeMap<String, serde_json::Value>,
}

fn default_r() -> usize {
    64
}
fn default_alpha() -> f64 {
    128.0
}
fn default_dropout() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}
fn default_bias() -> String {
    "none".into()
}

impl Default for AdapterConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl AdapterConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::format(format!("{CONFIG_FILE}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let unsupported = |what: &str| Err(Error::format(format!("{CONFIG_FILE}: {what} is not supported")));
        if self.r == 0 {
            return Err(Error::format(format!("{CONFIG_FILE}: r must be at least 1")));
        }
        if !(self.lora_alpha > 0.0) {
            return Err(Error::format(format!("{CONFIG_FILE}: lora_alpha must be positive")));
        }
        if !self.rank_pattern.is_empty() || !self.alpha_pattern.is_empty() {
            return unsupported("per-module rank_pattern/alpha_pattern");
        }
        if self.fan_in_fan_out {
            return unsupported("fan_in_fan_out");
        }
        if self.bias != "none" {
            return unsupported("training biases (bias != \"none\")");
        }
        if let TargetModules::Pattern(p) = &self.target_modules {
            if p != ALL_LINEAR && full_regex(p).is_none() {
                return Err(Error::format(format!("{CONFIG_FILE}: invalid target_modules regex `{p}`")));
            }
        }
        Ok(())
    }
}

/// Adapter read from disk, with module names relative to the base model.
#[derive(Debug, Clone, PartialEq)]
pub struct PeftAdapter {
    pub config: AdapterConfig,
    pub modules: Vec<AdapterModule>,
    pub source: PathBuf,
}

/// Reads a PEFT adapter directory.
pub fn load_peft_dir(path: impl AsRef<Path>) -> Result<PeftAdapter> {
    let dir = path.as_ref();
    if !dir.is_dir() {
        return Err(Error::format(format!("{} is not an adapter directory", dir.display())));
    }
    let cfg_path = dir.join(CONFIG_FILE);
    if !cfg_path.is_file() {
        return Err(Error::format(format!("{} has no {CONFIG_FILE}", dir.display())));
    }
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let config = AdapterConfig::from_json(&text)?;
    let weights_path = dir.join(WEIGHTS_FILE);
    if !weights_path.is_file() {
        return Err(Error::format(format!("{} has no {WEIGHTS_FILE}", dir.display())));
    }
    let weights = load_checkpoint(&weights_path)?;
    let modules = parse_modules(&config, weights)?;
    Ok(PeftAdapter {
        config,
        modules,
        source: dir.to_path_buf(),
    })
}

#[derive(Default)]
struct Parts {
    a: Option<NamedTensor>,
    b: Option<NamedTensor>,
    magnitude: Option<NamedTensor>,
}

fn parse_modules(config: &AdapterConfig, weights: Checkpoint) -> Result<Vec<AdapterModule>> {
    let (tensors, _) = weights.into_parts();
    let mut parts: BTreeMap<String, Parts> = BTreeMap::new();
    for (key, t) in tensors {
        let rel = key.strip_prefix(KEY_PREFIX).unwrap_or(&key);
        let (module, slot) = if let Some(m) = rel.strip_suffix(LORA_A) {
            (m, 0)
        } else if let Some(m) = rel.strip_suffix(LORA_B) {
            (m, 1)
        } else if let Some(m) = rel
            .strip_suffix(MAGNITUDE)
            .or_else(|| rel.strip_suffix(".lora_magnitude_vector.weight"))
        {
            (m, 2)
        } else {
            return Err(Error::format(format!("unrecognized adapter tensor `{key}`")));
        };
        let entry = parts.entry(module.to_string()).or_default();
        let slot = match slot {
            0 => &mut entry.a,
            1 => &mut entry.b,
            _ => &mut entry.magnitude,
        };
        if slot.replace(t).is_some() {
            return Err(Error::format(format!("duplicate adapter tensor for `{module}`")));
        }
    }
    if parts.is_empty() {
        return Err(Error::format("adapter weights contain no LoRA tensors"));
    }

    parts
        .into_iter()
        .map(|(module, p)| {
            let missing = |what: &str| Error::format(format!("module `{module}` has no {what}"));
            let a = p.a.ok_or_else(|| missing("lora_A"))?;
            let b = p.b.ok_or_else(|| missing("lora_B"))?;
            let lora = LoraModule::new(format!("{module}.weight"), a, b, config.lora_alpha)?
                .with_dropout(config.lora_dropout)
                .with_rslora(config.use_rslora);
            if lora.rank != config.r {
                return Err(Error::format(format!(
                    "module `{module}` has rank {} but the config says r = {}",
                    lora.rank, config.r
                )));
            }
            match (config.use_dora, p.magnitude) {
                (true, Some(m)) => Ok(AdapterModule::Dora(DoraModule::new(lora, m.to_f32().into_owned())?)),
                (true, None) => Err(missing("lora_magnitude_vector")),
                (false, None) => Ok(AdapterModule::Lora(lora)),
                (false, Some(_)) => Err(Error::format(format!(
                    "module `{module}` carries a magnitude vector but use_dora is false"
                ))),
            }
        })
        .collect()
}

impl PeftAdapter {
    /// Checks every module and every listed target pattern against `base`.
    pub fn resolve(&self, base: &Checkpoint) -> Result<()> {
        let mut unresolved: BTreeSet<String> = self
            .modules
            .iter()
            .filter(|m| base.get(m.target_name()).is_none_or(|t| t.ndim() != 2))
            .map(|m| m.target_name().to_string())
            .collect();
        let base_modules: Vec<&str> = base
            .tensors()
            .filter(|t| t.ndim() == 2)
            .filter_map(|t| t.name().strip_suffix(".weight"))
            .collect();
        match &self.config.target_modules {
            TargetModules::List(list) => {
                for target in list {
                    if !base_modules.iter().any(|m| suffix_match(m, target)) {
                        unresolved.insert(target.clone());
                    }
                }
            }
            TargetModules::Pattern(p) if p == ALL_LINEAR => {}
            pattern @ TargetModules::Pattern(p) => {
                if !base_modules.iter().any(|m| pattern.matches(m)) {
                    unresolved.insert(p.clone());
                }
            }
        }
        for m in &self.modules {
            let module = m.target_name().trim_end_matches(".weight");
            if !self.config.target_modules.matches(module) {
                log::warn!("adapter module `{module}` is not covered by target_modules");
            }
        }
        if unresolved.is_empty() {
            Ok(())
        } else {
            Err(Error::UnresolvedTarget(unresolved.into_iter().collect()))
        }
    }

    /// Dense knowledge adapter over `base`.
    pub fn densify(&self, base: &Checkpoint) -> Result<DeltaAdapter> {
        self.resolve(base)?;
        let deltas: Vec<NamedTensor> = self
            .modules
            .par_iter()
            .map(|m| m.densify(base))
            .collect::<Result<_>>()?;
        let cfg = &self.config;
        let meta = BTreeMap::from([
            (KIND_KEY.to_string(), KIND_KNOWLEDGE_ADAPTER.to_string()),
            (TOOL_VERSION_KEY.to_string(), tool_version()),
            ("peft_r".to_string(), cfg.r.to_string()),
            ("peft_alpha".to_string(), cfg.lora_alpha.to_string()),
            ("peft_use_dora".to_string(), cfg.use_dora.to_string()),
            ("peft_use_rslora".to_string(), cfg.use_rslora.to_string()),
            ("peft_source".to_string(), self.source.display().to_string()),
        ]);
        DeltaAdapter::new(deltas, base.digest(), "", meta)
    }
}
