use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::lore::{storage_cap, CompressOptions, LoreAdapter};
use super::svd::{dense_svd, randomized_svd, to_matrix};
use super::{check_tau, explained_variance, explained_variance_partial, select_rank, Spectrum};
use crate::checkpoint::Checkpoint;
use crate::delta::DeltaAdapter;
use crate::error::{Error, Result};
use crate::tensor::{frobenius_norm, NamedTensor};

/// Parameter accounting of a LoRE adapter against a reference checkpoint size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamReport {
    pub tau: f64,
    pub factored_tensors: usize,
    pub dense_tensors: usize,
    pub factor_params: usize,
    pub dense_params: usize,
    pub lore_params: usize,
    pub reference_params: usize,
    pub percent: f64,
}

/// Counts `Σ k (m + n)` over factors plus all dense elements (1-D tensors
/// included) as a percentage of the base checkpoint's element count.
pub fn param_report(lore: &LoreAdapter, base: &Checkpoint) -> ParamReport {
    param_report_with_total(lore, base.total_elements())
}

pub fn param_report_with_total(lore: &LoreAdapter, reference_params: usize) -> ParamReport {
    let lore_params = lore.param_count();
    ParamReport {
        tau: lore.tau(),
        factored_tensors: lore.factors().len(),
        dense_tensors: lore.dense().len(),
        factor_params: lore.factor_params(),
        dense_params: lore.dense_params(),
        lore_params,
        reference_params,
        percent: percent(lore_params, reference_params),
    }
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub percent: f64,
    pub params: usize,
}

/// Cumulative-variance curve for one tensor, long enough to answer every
/// threshold up to `tau_max`. `None` marks tensors that are never factored.
struct Curve {
    rows: usize,
    cols: usize,
    cumulative: Vec<f64>,
}

fn curve(t: &NamedTensor, opts: &CompressOptions, tau_max: f64) -> Result<Option<Curve>> {
    let Some((m, n)) = t.matrix_dims() else {
        return Ok(None);
    };
    let energy = frobenius_norm(t).powi(2);
    if m.min(n) < opts.min_dim.max(1) || energy == 0.0 {
        return Ok(None);
    }
    let full = m.min(n);
    let cap = if opts.storage_guard { storage_cap(m, n) } else { full };
    if cap == 0 {
        return Ok(None);
    }
    let matrix = to_matrix(t)?;
    if !opts.svd.use_dense(m, n) {
        let mut rank = opts.svd.initial_rank.clamp(1, cap);
        loop {
            let svd = randomized_svd(&matrix, rank, &opts.svd, t.name())?;
            let cumulative = explained_variance_partial(&svd.s, energy)?;
            let reached = cumulative.last().is_some_and(|&v| v >= tau_max);
            if reached || (rank >= cap && cap < full) {
                return Ok(Some(Curve { rows: m, cols: n, cumulative }));
            }
            if rank >= cap {
                break;
            }
            rank = (rank * 2).min(cap);
        }
    }
    let svd = dense_svd(&matrix, t.name())?;
    Ok(Some(Curve {
        rows: m,
        cols: n,
        cumulative: explained_variance(&svd.s)?,
    }))
}

impl Curve {
    fn params(&self, tau: f64, storage_guard: bool) -> usize {
        let dense = self.rows * self.cols;
        if self.cumulative.last().is_none_or(|&v| v < tau) {
            return dense;
        }
        let k = select_rank(&self.cumulative, tau);
        let low_rank = k * (self.rows + self.cols);
        if storage_guard && low_rank >= dense {
            dense
        } else {
            low_rank
        }
    }
}

/// LoRE parameter percentage for each threshold, computing every tensor's
/// spectrum once.
pub fn param_sweep(
    delta: &DeltaAdapter,
    taus: &[f64],
    opts: &CompressOptions,
    reference_params: usize,
) -> Result<Vec<SweepPoint>> {
    for &tau in taus {
        check_tau(tau)?;
    }
    let tau_max = taus.iter().copied().fold(0.0, f64::max);
    let tensors: Vec<&NamedTensor> = delta.deltas().collect();
    let curves: Vec<(usize, Option<Curve>)> = tensors
        .par_iter()
        .map(|t| Ok((t.len(), curve(t, opts, tau_max)?)))
        .collect::<Result<_>>()?;
    Ok(taus
        .iter()
        .map(|&tau| {
            let params = curves
                .iter()
                .map(|(len, c)| c.as_ref().map_or(*len, |c| c.params(tau, opts.storage_guard)))
                .sum();
            SweepPoint {
                tau,
                percent: percent(params, reference_params),
                params,
            }
        })
        .collect())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(format!("{}: {other:?}", path.display())),
    }
}

/// `index,variance` rows with 1-based ranks.
pub fn write_spectrum_csv(path: impl AsRef<Path>, spectrum: &Spectrum) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(["index", "variance"]).map_err(|e| csv_error(path, e))?;
    for (i, v) in spectrum.cumulative_variance.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `tau,percent` rows.
pub fn write_sweep_csv(path: impl AsRef<Path>, points: &[SweepPoint]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(["tau", "percent"]).map_err(|e| csv_error(path, e))?;
    for p in points {
        w.write_record([p.tau.to_string(), p.percent.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
