//! Nonparametric percentile bootstrap over subject rows.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{AsmError, Result};
use crate::estimate::{fit_with, standardize, FitOptions};
use crate::moments::SampleMoments;
use crate::params::ParameterTable;
use crate::simulate::replicate_seed;

/// Intervals are withheld when more than this share of replicates fail.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    pub parallel_width: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 1000,
            level: 0.99,
            seed: 1,
            parallel_width: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub config: BootstrapConfig,
    /// Full-data estimates per slot.
    pub theta: Vec<f64>,
    /// Indices of replicates that did not converge.
    pub failed: Vec<usize>,
    /// Raw value of every entry, one row per successful replicate.
    pub raw_draws: Vec<Vec<f64>>,
    /// Standardised value of every entry (`NaN` for means).
    pub std_draws: Vec<Vec<f64>>,
}

impl BootstrapResult {
    pub fn withheld(&self) -> bool {
        self.failed.len() as f64 > MAX_FAILURE_SHARE * self.config.replicates as f64
    }

    /// Per-entry percentile intervals of the raw estimates at `level`.
    pub fn raw_intervals(&self, level: f64) -> Option<Vec<(f64, f64)>> {
        self.intervals(&self.raw_draws, level)
    }

    /// Per-entry percentile intervals of the standardised estimates.
    pub fn std_intervals(&self, level: f64) -> Option<Vec<(f64, f64)>> {
        self.intervals(&self.std_draws, level)
    }

    fn intervals(&self, draws: &[Vec<f64>], level: f64) -> Option<Vec<(f64, f64)>> {
        if self.withheld() || draws.is_empty() {
            return None;
        }
        let width = draws[0].len();
        Some(
            (0..width)
                .map(|j| {
                    let column: Vec<f64> = draws.iter().map(|d| d[j]).collect();
                    percentile_interval(&column, level)
                })
                .collect(),
        )
    }
}

/// Linear-interpolation sample quantile, `q` in `[0, 1]`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Central percentile interval at `level`; `NaN` values give `(NaN, NaN)`.
pub fn percentile_interval(values: &[f64], level: f64) -> (f64, f64) {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return (f64::NAN, f64::NAN);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tail = (1.0 - level) / 2.0;
    (quantile(&sorted, tail), quantile(&sorted, 1.0 - tail))
}

fn resample(data: &DMatrix<f64>, seed: u64) -> Option<SampleMoments> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.nrows();
    let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
    let sample = DMatrix::from_fn(n, data.ncols(), |r, c| data[(rows[r], c)]);
    SampleMoments::from_data(&sample).ok()
}

fn entry_values(table: &ParameterTable, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let raw = table.entries.iter().map(|e| table.value(e, theta)).collect();
    let std = standardize(table, theta)?
        .into_iter()
        .map(|v| v.unwrap_or(f64::NAN))
        .collect();
    Ok((raw, std))
}

/// Refit `cfg.replicates` row resamples, each warm-started from the
/// full-data estimate and retried once from default starts.
pub fn bootstrap_ci(data: &DMatrix<f64>, table: &ParameterTable, cfg: &BootstrapConfig) -> Result<BootstrapResult> {
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(AsmError::Invalid(format!("level {} outside (0, 1)", cfg.level)));
    }
    if cfg.replicates == 0 {
        return Err(AsmError::Invalid("no bootstrap replicates requested".into()));
    }
    let full = SampleMoments::from_data(data)?;
    let base = fit_with(
        table,
        &full,
        &FitOptions {
            standard_errors: false,
            ..FitOptions::default()
        },
    )?;
    base.ensure_converged()?;

    let warm = FitOptions {
        start: Some(base.theta.clone()),
        standard_errors: false,
        ..FitOptions::default()
    };
    let cold = FitOptions {
        standard_errors: false,
        ..FitOptions::default()
    };
    let run = |b: usize| -> Option<(Vec<f64>, Vec<f64>)> {
        let moments = resample(data, replicate_seed(cfg.seed, b))?;
        let fit = fit_with(table, &moments, &warm)
            .ok()
            .filter(|f| f.convergence.converged)
            .or_else(|| {
                fit_with(table, &moments, &cold)
                    .ok()
                    .filter(|f| f.convergence.converged)
            })?;
        entry_values(table, &fit.theta).ok()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallel_width.max(1))
        .build()
        .map_err(|e| AsmError::Invalid(e.to_string()))?;
    let outcomes: Vec<Option<(Vec<f64>, Vec<f64>)>> =
        pool.install(|| (0..cfg.replicates).into_par_iter().map(run).collect());

    let mut failed = Vec::new();
    let mut raw_draws = Vec::new();
    let mut std_draws = Vec::new();
    for (b, o) in outcomes.into_iter().enumerate() {
        match o {
            Some((raw, std)) => {
                raw_draws.push(raw);
                std_draws.push(std);
            }
            None => failed.push(b),
        }
    }
    Ok(BootstrapResult {
        config: cfg.clone(),
        theta: base.theta,
        failed,
        raw_draws,
        std_draws,
    })
}
