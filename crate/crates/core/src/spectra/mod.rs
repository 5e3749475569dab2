//! Spectral analysis of adapter tensors and low-rank compression.
//!
//! For a delta matrix with singular values `σ_1 ≥ σ_2 ≥ ...`, the cumulative
//! explained variance at rank `k` is `v_k = Σ_{i≤k} σ_i² / Σ_j σ_j²` (ranks are
//! 1-indexed, `v_0 = 0`). Compression keeps, per tensor, the smallest rank whose
//! `v_k` reaches a threshold `τ`.

mod lore;
mod report;
pub mod svd;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{frobenius_norm, NamedTensor};

pub use lore::{compress, materialize, CompressOptions, LoreAdapter, LowRankFactor, KIND_LORE_ADAPTER};
pub use report::{
    param_report, param_report_with_total, param_sweep, write_spectrum_csv, write_sweep_csv, ParamReport, SweepPoint,
};
pub use svd::{Svd, SvdConfig};

/// Singular values of one tensor with their cumulative explained variance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    pub tensor_name: String,
    pub singular_values: Vec<f64>,
    pub cumulative_variance: Vec<f64>,
    /// `false` when only the leading singular values were computed, in which
    /// case `cumulative_variance` is relative to the full Frobenius energy and
    /// ends below 1.
    pub complete: bool,
}

/// Cumulative explained variance of a descending, non-negative spectrum.
pub fn explained_variance(singular_values: &[f64]) -> Result<Vec<f64>> {
    validate_spectrum(singular_values)?;
    let mut cumulative: Vec<f64> = singular_values
        .iter()
        .scan(0.0, |acc, s| {
            *acc += s * s;
            Some(*acc)
        })
        .collect();
    let total = *cumulative.last().ok_or(Error::AllZero)?;
    if total == 0.0 {
        return Err(Error::AllZero);
    }
    cumulative.iter_mut().for_each(|c| *c /= total);
    Ok(cumulative)
}

/// Explained variance of a leading part of a spectrum against a known total
/// energy `Σ σ_j² = ‖Δ‖_F²`.
pub fn explained_variance_partial(leading: &[f64], total_energy: f64) -> Result<Vec<f64>> {
    validate_spectrum(leading)?;
    if total_energy <= 0.0 {
        return Err(Error::AllZero);
    }
    let mut acc = 0.0;
    Ok(leading
        .iter()
        .map(|s| {
            acc += s * s;
            (acc / total_energy).min(1.0)
        })
        .collect())
}

fn validate_spectrum(s: &[f64]) -> Result<()> {
    if s.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::InvalidArgument(
            "singular values must be non-negative".into(),
        ));
    }
    if s.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument(
            "singular values must be sorted descending".into(),
        ));
    }
    Ok(())
}

/// Smallest `k ≥ 1` with `v_k ≥ tau`; the full length when no entry reaches it.
pub fn select_rank(cumulative: &[f64], tau: f64) -> usize {
    debug_assert!(tau > 0.0 && tau <= 1.0);
    cumulative
        .iter()
        .position(|&v| v >= tau)
        .map_or(cumulative.len(), |i| i + 1)
}

pub fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tau must lie in (0, 1], got {tau}")))
    }
}

/// Spectrum of a 2-D tensor. Large matrices (per `cfg`) get the leading
/// `max_rank` values from the randomized solver.
pub fn spectrum(t: &NamedTensor, cfg: &SvdConfig, max_rank: usize) -> Result<Spectrum> {
    let out = svd::svd_with(t, cfg, max_rank)?;
    let (m, n) = t.matrix_dims().expect("svd_with checked the rank");
    let complete = out.rank() == m.min(n);
    let cumulative = if complete {
        explained_variance(&out.s)?
    } else {
        explained_variance_partial(&out.s, frobenius_norm(t).powi(2))?
    };
    Ok(Spectrum {
        tensor_name: t.name().to_string(),
        singular_values: out.s,
        cumulative_variance: cumulative,
        complete,
    })
}
