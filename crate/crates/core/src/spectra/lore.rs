use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::svd::{dense_svd, randomized_svd, to_matrix, to_row_major_f32, Svd, SvdConfig};
use super::{check_tau, explained_variance, explained_variance_partial, select_rank};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::delta::{
    tool_version, DeltaAdapter, BASE_DIGEST_KEY, INSTRUCT_DIGEST_KEY, KIND_KEY, KIND_RE_ADAPTER,
    TOOL_VERSION_KEY,
};
use crate::error::{Error, Result};
use crate::tensor::{frobenius_norm, NamedTensor};

pub const KIND_LORE_ADAPTER: &str = "lore-adapter";
const TAU_KEY: &str = "tau";
const RETAINED_KEY: &str = "retained_variance";
const A_SUFFIX: &str = ".lore_a";
const B_SUFFIX: &str = ".lore_b";

/// Rank-`k` factor pair with `factor_b · factor_a ≈ delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactor {
    name: String,
    factor_b: NamedTensor,
    factor_a: NamedTensor,
    retained_variance: f64,
}

impl LowRankFactor {
    /// `factor_b` is `m x k`, `factor_a` is `k x n`, both stored as `f32`.
    pub fn new(
        name: impl Into<String>,
        factor_b: NamedTensor,
        factor_a: NamedTensor,
        retained_variance: f64,
    ) -> Result<Self> {
        let name = name.into();
        let (Some((_, kb)), Some((ka, _))) = (factor_b.matrix_dims(), factor_a.matrix_dims()) else {
            return Err(Error::InvalidTensor {
                name,
                reason: "low-rank factors must be 2-D".into(),
            });
        };
        if kb != ka {
            return Err(Error::ShapeMismatch {
                name,
                left: factor_b.shape().to_vec(),
                right: factor_a.shape().to_vec(),
            });
        }
        Ok(Self {
            factor_b: factor_b.with_name(format!("{name}{B_SUFFIX}")),
            factor_a: factor_a.with_name(format!("{name}{A_SUFFIX}")),
            name,
            retained_variance,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rank(&self) -> usize {
        self.factor_a.shape()[0]
    }

    pub fn rows(&self) -> usize {
        self.factor_b.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.factor_a.shape()[1]
    }

    pub fn factor_b(&self) -> &NamedTensor {
        &self.factor_b
    }

    pub fn factor_a(&self) -> &NamedTensor {
        &self.factor_a
    }

    pub fn retained_variance(&self) -> f64 {
        self.retained_variance
    }

    /// `k (m + n)`.
    pub fn param_count(&self) -> usize {
        self.rank() * (self.rows() + self.cols())
    }

    /// Dense `factor_b · factor_a`, multiplied in `f64`.
    pub fn to_dense(&self) -> NamedTensor {
        let b = to_matrix(&self.factor_b).expect("2-D");
        let a = to_matrix(&self.factor_a).expect("2-D");
        let product = b * a;
        NamedTensor::from_f32(
            self.name.clone(),
            vec![self.rows(), self.cols()],
            to_row_major_f32(&product),
        )
        .expect("shape matches product")
    }

    fn from_svd(name: &str, svd: &Svd, k: usize, retained: f64) -> Self {
        let (m, n) = (svd.u.nrows(), svd.vt.ncols());
        let roots: Vec<f64> = svd.s[..k].iter().map(|s| s.sqrt()).collect();
        let b = DMatrix::from_fn(m, k, |i, j| svd.u[(i, j)] * roots[j]);
        let a = DMatrix::from_fn(k, n, |i, j| roots[i] * svd.vt[(i, j)]);
        Self {
            name: name.to_string(),
            factor_b: NamedTensor::from_f32(format!("{name}{B_SUFFIX}"), vec![m, k], to_row_major_f32(&b))
                .expect("shape"),
            factor_a: NamedTensor::from_f32(format!("{name}{A_SUFFIX}"), vec![k, n], to_row_major_f32(&a))
                .expect("shape"),
            retained_variance: retained,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressOptions {
    pub tau: f64,
    /// Only matrices with `min(m, n) >= min_dim` are factored.
    pub min_dim: usize,
    /// Keep a tensor dense when `k (m + n) >= m n`.
    pub storage_guard: bool,
    pub svd: SvdConfig,
}

impl CompressOptions {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            ..Default::default()
        }
    }
}

impl Default for CompressOptions {
    fn default() -> Self {
        Self {
            tau: 0.5,
            min_dim: 2,
            storage_guard: true,
            svd: SvdConfig::default(),
        }
    }
}

/// Low-rank adapter: factored matrices plus tensors kept dense.
#[derive(Debug, Clone, PartialEq)]
pub struct LoreAdapter {
    factors: BTreeMap<String, LowRankFactor>,
    dense: BTreeMap<String, NamedTensor>,
    tau: f64,
    base_digest: String,
    instruct_digest: String,
    metadata: BTreeMap<String, String>,
}

impl LoreAdapter {
    pub fn new(
        factors: impl IntoIterator<Item = LowRankFactor>,
        dense: impl IntoIterator<Item = NamedTensor>,
        tau: f64,
        base_digest: impl Into<String>,
        instruct_digest: impl Into<String>,
    ) -> Result<Self> {
        let factors: BTreeMap<_, _> = factors.into_iter().map(|f| (f.name.clone(), f)).collect();
        let mut dense_map = BTreeMap::new();
        for t in dense {
            let name = t.name().to_string();
            if factors.contains_key(&name) || dense_map.insert(name.clone(), t).is_some() {
                return Err(Error::format(format!("tensor `{name}` appears twice in the adapter")));
            }
        }
        Ok(Self {
            factors,
            dense: dense_map,
            tau,
            base_digest: base_digest.into(),
            instruct_digest: instruct_digest.into(),
            metadata: BTreeMap::new(),
        })
    }

    pub fn factors(&self) -> impl ExactSizeIterator<Item = &LowRankFactor> {
        self.factors.values()
    }

    pub fn factor(&self, name: &str) -> Option<&LowRankFactor> {
        self.factors.get(name)
    }

    pub fn dense(&self) -> impl ExactSizeIterator<Item = &NamedTensor> {
        self.dense.values()
    }

    pub fn dense_tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.dense.get(name)
    }

    pub fn tau(&self) -> f64 {
        self.tau
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

    pub fn len(&self) -> usize {
        self.factors.len() + self.dense.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn factor_params(&self) -> usize {
        self.factors.values().map(LowRankFactor::param_count).sum()
    }

    pub fn dense_params(&self) -> usize {
        self.dense.values().map(NamedTensor::len).sum()
    }

    /// `Σ k (m + n)` over factors plus every dense element.
    pub fn param_count(&self) -> usize {
        self.factor_params() + self.dense_params()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors: Vec<NamedTensor> = self.dense.values().cloned().collect();
        for f in self.factors.values() {
            tensors.push(f.factor_a.clone());
            tensors.push(f.factor_b.clone());
        }
        let retained: BTreeMap<&str, f64> = self
            .factors
            .values()
            .map(|f| (f.name.as_str(), f.retained_variance))
            .collect();
        let mut meta = self.metadata.clone();
        meta.insert(KIND_KEY.into(), KIND_LORE_ADAPTER.into());
        meta.insert(TAU_KEY.into(), self.tau.to_string());
        meta.insert(
            RETAINED_KEY.into(),
            serde_json::to_string(&retained).expect("map serializes"),
        );
        meta.insert(BASE_DIGEST_KEY.into(), self.base_digest.clone());
        meta.insert(INSTRUCT_DIGEST_KEY.into(), self.instruct_digest.clone());
        meta.entry(TOOL_VERSION_KEY.into()).or_insert_with(tool_version);
        Checkpoint::new(tensors, meta)
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let (mut tensors, mut meta) = ckpt.into_parts();
        if meta.get(KIND_KEY).map(String::as_str) != Some(KIND_LORE_ADAPTER) {
            return Err(Error::format("file is not a lore-adapter"));
        }
        let tau: f64 = meta
            .remove(TAU_KEY)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("lore-adapter is missing a numeric `tau`"))?;
        let retained: BTreeMap<String, f64> = serde_json::from_str(
            meta.get(RETAINED_KEY)
                .ok_or_else(|| Error::format("lore-adapter is missing `retained_variance`"))?,
        )
        .map_err(|e| Error::format(format!("bad retained_variance: {e}")))?;
        meta.remove(RETAINED_KEY);
        meta.remove(KIND_KEY);

        let mut factors = Vec::with_capacity(retained.len());
        for (name, v) in retained {
            let take = |suffix: &str, tensors: &mut BTreeMap<String, NamedTensor>| {
                tensors
                    .remove(&format!("{name}{suffix}"))
                    .ok_or_else(|| Error::format(format!("missing `{name}{suffix}`")))
            };
            let a = take(A_SUFFIX, &mut tensors)?;
            let b = take(B_SUFFIX, &mut tensors)?;
            factors.push(LowRankFactor::new(name, b, a, v)?);
        }
        let base = meta.remove(BASE_DIGEST_KEY).unwrap_or_default();
        let instruct = meta.remove(INSTRUCT_DIGEST_KEY).unwrap_or_default();
        let mut out = Self::new(factors, tensors.into_values(), tau, base, instruct)?;
        out.metadata = meta;
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>, max_shard_bytes: Option<usize>) -> Result<()> {
        save_checkpoint(&self.to_checkpoint()?, path, max_shard_bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(load_checkpoint(path)?)
    }
}

/// Largest rank whose factors are strictly smaller than the dense matrix.
pub(crate) fn storage_cap(m: usize, n: usize) -> usize {
    (m * n - 1) / (m + n)
}

pub(crate) enum Decision {
    Dense,
    Factor(Svd, usize, f64),
}

/// Rank decision for one tensor, computing as little of the spectrum as the
/// solver strategy allows.
pub(crate) fn decide(t: &NamedTensor, opts: &CompressOptions) -> Result<Decision> {
    let Some((m, n)) = t.matrix_dims() else {
        return Ok(Decision::Dense);
    };
    if m.min(n) < opts.min_dim.max(1) {
        return Ok(Decision::Dense);
    }
    let energy = frobenius_norm(t).powi(2);
    if energy == 0.0 {
        return Ok(Decision::Dense);
    }
    let full = m.min(n);
    let cap = if opts.storage_guard { storage_cap(m, n) } else { full };
    if cap == 0 {
        return Ok(Decision::Dense);
    }

    let matrix = to_matrix(t)?;
    if !opts.svd.use_dense(m, n) {
        let mut rank = opts.svd.initial_rank.clamp(1, cap);
        loop {
            let svd = randomized_svd(&matrix, rank, &opts.svd, t.name())?;
            let v = explained_variance_partial(&svd.s, energy)?;
            if v.last().is_some_and(|&last| last >= opts.tau) {
                let k = select_rank(&v, opts.tau);
                return Ok(Decision::Factor(svd, k, v[k - 1]));
            }
            if rank >= cap {
                if cap < full {
                    return Ok(Decision::Dense);
                }
                break;
            }
            rank = (rank * 2).min(cap);
        }
    }

    let svd = dense_svd(&matrix, t.name())?;
    let v = explained_variance(&svd.s)?;
    let k = select_rank(&v, opts.tau);
    if k > cap {
        return Ok(Decision::Dense);
    }
    Ok(Decision::Factor(svd, k, v[k - 1]))
}

/// Replaces eligible 2-D tensors by rank-`k` truncated-SVD factors
/// `B = U_k √S_k`, `A = √S_k Vt_k`, with `k` chosen per tensor by `tau`.
pub fn compress(delta: &DeltaAdapter, opts: &CompressOptions) -> Result<LoreAdapter> {
    check_tau(opts.tau)?;
    let tensors: Vec<&NamedTensor> = delta.deltas().collect();
    let outcomes: Vec<std::result::Result<LowRankFactor, NamedTensor>> = tensors
        .par_iter()
        .map(|t| {
            Ok(match decide(t, opts)? {
                Decision::Dense => Err((*t).clone()),
                Decision::Factor(svd, k, retained) => Ok(LowRankFactor::from_svd(t.name(), &svd, k, retained)),
            })
        })
        .collect::<Result<_>>()?;

    let mut factors = Vec::new();
    let mut dense = Vec::new();
    for o in outcomes {
        match o {
            Ok(f) => factors.push(f),
            Err(t) => dense.push(t),
        }
    }
    let mut out = LoreAdapter::new(factors, dense, opts.tau, delta.base_digest(), delta.instruct_digest())?;
    out.metadata = delta
        .metadata()
        .iter()
        .filter(|(k, _)| k.as_str() != KIND_KEY && k.as_str() != TOOL_VERSION_KEY)
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    Ok(out)
}

/// Expands every factor pair back to a dense tensor.
pub fn materialize(lore: &LoreAdapter) -> DeltaAdapter {
    let mut tensors: Vec<NamedTensor> = lore
        .factors
        .values()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|f| f.to_dense())
        .collect();
    tensors.extend(lore.dense.values().cloned());
    let mut meta = lore.metadata.clone();
    meta.insert(KIND_KEY.into(), KIND_RE_ADAPTER.into());
    meta.insert("materialized_from_tau".into(), lore.tau.to_string());
    DeltaAdapter::new(tensors, lore.base_digest.clone(), lore.instruct_digest.clone(), meta)
        .expect("names are disjoint by construction")
}
