//! Thin SVD in `f64`: a deterministic dense solver for moderate sizes and a
//! seeded randomized range finder with power iterations for large layers.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::NamedTensor;

const MAX_SWEEPS: usize = 10_000;

/// `u` is `m x r`, `s` holds `r` descending singular values and `vt` is `r x n`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub vt: DMatrix<f64>,
}

impl Svd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `U_k diag(S_k) Vt_k`.
    pub fn reconstruct(&self, k: usize) -> DMatrix<f64> {
        let k = k.min(self.rank());
        let mut us = self.u.columns(0, k).into_owned();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= self.s[j];
        }
        us * self.vt.rows(0, k)
    }

    fn truncate(mut self, k: usize) -> Self {
        let k = k.min(self.rank());
        self.u = self.u.columns(0, k).into_owned();
        self.vt = self.vt.rows(0, k).into_owned();
        self.s.truncate(k);
        self
    }
}

/// Dense view of a rank-2 tensor.
pub fn to_matrix(t: &NamedTensor) -> Result<DMatrix<f64>> {
    let (m, n) = t.matrix_dims().ok_or_else(|| Error::InvalidTensor {
        name: t.name().to_string(),
        reason: format!("expected a 2-D tensor, got shape {:?}", t.shape()),
    })?;
    let data = t.to_f32();
    Ok(DMatrix::from_fn(m, n, |i, j| f64::from(data[i * n + j])))
}

/// Row-major `f32` copy.
pub fn to_row_major_f32(m: &DMatrix<f64>) -> Vec<f32> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)] as f32);
        }
    }
    out
}

/// Deterministic thin SVD of the whole matrix.
pub fn dense_svd(matrix: &DMatrix<f64>, name: &str) -> Result<Svd> {
    let svd = matrix
        .clone()
        .try_svd(true, true, f64::EPSILON, MAX_SWEEPS)
        .ok_or_else(|| Error::ConvergenceFailure(name.to_string()))?;
    let (Some(u), Some(vt)) = (svd.u, svd.v_t) else {
        return Err(Error::ConvergenceFailure(name.to_string()));
    };
    Ok(sorted(u, svd.singular_values.iter().copied().collect(), vt))
}

fn sorted(u: DMatrix<f64>, s: Vec<f64>, vt: DMatrix<f64>) -> Svd {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    if order.iter().enumerate().all(|(i, &j)| i == j) {
        return Svd { u, s, vt };
    }
    let u = DMatrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
    let vt = DMatrix::from_fn(order.len(), vt.ncols(), |i, j| vt[(order[i], j)]);
    let s = order.iter().map(|&j| s[j]).collect();
    Svd { u, s, vt }
}

/// Parameters of the randomized solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvdConfig {
    /// Matrices with `min(m, n)` at or below this use the dense solver.
    pub dense_max_dim: usize,
    pub oversample: usize,
    pub power_iters: usize,
    /// First rank tried by the adaptive randomized search.
    pub initial_rank: usize,
    pub seed: u64,
}

impl Default for SvdConfig {
    fn default() -> Self {
        Self {
            dense_max_dim: 1024,
            oversample: 10,
            power_iters: 2,
            initial_rank: 64,
            seed: 0,
        }
    }
}

impl SvdConfig {
    pub fn use_dense(&self, rows: usize, cols: usize) -> bool {
        rows.min(cols) <= self.dense_max_dim
    }
}

/// Per-tensor RNG seed: `sha256(seed || name)`, so results do not depend on
/// scheduling order.
pub fn tensor_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn orthonormal_basis(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Top-`rank` singular triples via a Gaussian sketch of width
/// `rank + oversample` refined by `power_iters` QR-stabilised power iterations.
pub fn randomized_svd(
    matrix: &DMatrix<f64>,
    rank: usize,
    cfg: &SvdConfig,
    name: &str,
) -> Result<Svd> {
    let (m, n) = matrix.shape();
    let full = m.min(n);
    let rank = rank.clamp(1, full);
    let width = (rank + cfg.oversample).min(full);

    let mut rng = ChaCha8Rng::seed_from_u64(tensor_seed(cfg.seed, name));
    let omega = DMatrix::from_fn(n, width, |_, _| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
    let mut q = orthonormal_basis(matrix * omega);
    for _ in 0..cfg.power_iters {
        let z = orthonormal_basis(matrix.tr_mul(&q));
        q = orthonormal_basis(matrix * z);
    }
    let b = q.tr_mul(matrix);
    let small = dense_svd(&b, name)?;
    let u = q * small.u;
    Ok(Svd {
        u,
        s: small.s,
        vt: small.vt,
    }
    .truncate(rank))
}

/// Thin SVD by the configured strategy: dense for small matrices, randomized
/// top-`max_rank` otherwise.
pub fn svd_with(t: &NamedTensor, cfg: &SvdConfig, max_rank: usize) -> Result<Svd> {
    let matrix = to_matrix(t)?;
    let (m, n) = matrix.shape();
    if cfg.use_dense(m, n) || max_rank >= m.min(n) {
        dense_svd(&matrix, t.name())
    } else {
        randomized_svd(&matrix, max_rank, cfg, t.name())
    }
}

/// Full thin SVD of a 2-D tensor with the dense solver.
pub fn svd(t: &NamedTensor) -> Result<Svd> {
    dense_svd(&to_matrix(t)?, t.name())
}
