//! Multivariate-normal panel generator.
//!
//! Each row draws the latent disturbances first, then the measurement
//! residuals, from a ChaCha8 stream seeded with `seed`. Replicate `r` of an
//! experiment uses `seed ^ r`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{AsmError, Result};
use crate::estimate::{fit_with, standardize, FitOptions};
use crate::matrices::{solve_unit_lower, symmetrize, AssembledMatrices};
use crate::moments::SampleMoments;
use crate::params::{theta_to_matrices, ParameterTable};

const CHUNK: usize = 4096;
const PSD_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    /// True parameter matrices; `alpha` holds the latent means.
    pub matrices: AssembledMatrices,
    pub n: usize,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn from_theta(table: &ParameterTable, theta: &[f64], n: usize, seed: u64) -> Result<Self> {
        Ok(GeneratorConfig {
            matrices: theta_to_matrices(table, theta)?,
            n,
            seed,
        })
    }
}

/// Stream seed for replicate `r`.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    seed ^ r as u64
}

/// Square-root factor `F` with `F F' = m`, clipping eigenvalues within
/// tolerance of zero.
fn psd_factor(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == 0.0)) {
        let mut f = DMatrix::zeros(n, n);
        for i in 0..n {
            let d = m[(i, i)];
            if d < -PSD_TOLERANCE {
                return Err(AsmError::NotPositiveDefinite(what));
            }
            f[(i, i)] = d.max(0.0).sqrt();
        }
        return Ok(f);
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut f = eig.eigenvectors.clone();
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        if l < -PSD_TOLERANCE * scale {
            return Err(AsmError::NotPositiveDefinite(what));
        }
        f.column_mut(j).scale_mut(l.max(0.0).sqrt());
    }
    Ok(f)
}

/// Row generator: `y = c + B z` with `z` standard normal.
struct Generator {
    shift: DVector<f64>,
    load: DMatrix<f64>,
    rng: ChaCha8Rng,
}

impl Generator {
    fn new(cfg: &GeneratorConfig) -> Result<Self> {
        let m = &cfg.matrices;
        let k = m.latent_dim();
        let a = solve_unit_lower(&m.gamma, &DMatrix::identity(k, k))?;
        let reduced = &m.lambda * &a;
        let f_psi = psd_factor(&m.psi, "disturbance covariance")?;
        let f_theta = psd_factor(&m.theta, "residual covariance")?;
        let p = m.observed_dim();
        let mut load = DMatrix::zeros(p, k + p);
        load.columns_mut(0, k).copy_from(&(&reduced * f_psi));
        load.columns_mut(k, p).copy_from(&f_theta);
        Ok(Generator {
            shift: &m.mu + &reduced * &m.alpha,
            load,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    /// Next `rows` draws as columns of a `p x rows` matrix, centred on the
    /// implied mean.
    fn chunk(&mut self, rows: usize) -> DMatrix<f64> {
        let k = self.load.ncols();
        let mut z = DMatrix::<f64>::zeros(k, rows);
        for v in z.as_mut_slice() {
            *v = StandardNormal.sample(&mut self.rng);
        }
        &self.load * z
    }
}

/// `n` i.i.d. rows, one column per observed variable.
pub fn simulate_dataset(cfg: &GeneratorConfig) -> Result<DMatrix<f64>> {
    let mut gen = Generator::new(cfg)?;
    let p = cfg.matrices.observed_dim();
    let mut data = DMatrix::zeros(cfg.n, p);
    let mut start = 0;
    while start < cfg.n {
        let rows = CHUNK.min(cfg.n - start);
        let y = gen.chunk(rows);
        for r in 0..rows {
            for j in 0..p {
                data[(start + r, j)] = gen.shift[j] + y[(j, r)];
            }
        }
        start += rows;
    }
    Ok(data)
}

/// Sample moments of the dataset [`simulate_dataset`] would return, without
/// materialising it.
pub fn simulate_moments(cfg: &GeneratorConfig) -> Result<SampleMoments> {
    let mut gen = Generator::new(cfg)?;
    let p = cfg.matrices.observed_dim();
    let mut sum = DVector::<f64>::zeros(p);
    let mut cross = DMatrix::<f64>::zeros(p, p);
    let mut start = 0;
    while start < cfg.n {
        let rows = CHUNK.min(cfg.n - start);
        let y = gen.chunk(rows);
        for r in 0..rows {
            sum += y.column(r);
        }
        cross.gemm(1.0, &y, &y.transpose(), 1.0);
        start += rows;
    }
    let n = cfg.n as f64;
    let centred = &sum / n;
    let mut cov = (cross - &centred * centred.transpose() * n) / (n - 1.0);
    symmetrize(&mut cov);
    SampleMoments::new(cov, &gen.shift + centred, cfg.n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotRecovery {
    pub label: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub empirical_sd: f64,
    pub mean_se: f64,
    /// Share of Wald intervals at the report level covering the truth.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StandardizedRecovery {
    pub label: String,
    pub path: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub n: usize,
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    pub converged: usize,
    /// Replicates that failed to converge or withheld standard errors.
    pub failed: Vec<usize>,
    pub slots: Vec<SlotRecovery>,
    /// Regression-type coefficients on the standardised scale.
    pub structural: Vec<StandardizedRecovery>,
}

impl RecoveryReport {
    pub fn mean_abs_structural_bias(&self) -> f64 {
        if self.structural.is_empty() {
            return 0.0;
        }
        self.structural.iter().map(|s| s.bias.abs()).sum::<f64>() / self.structural.len() as f64
    }

    /// Coverage pooled over every free slot.
    pub fn pooled_coverage(&self) -> f64 {
        self.slots.iter().map(|s| s.coverage).sum::<f64>() / self.slots.len().max(1) as f64
    }
}

struct Replicate {
    theta: Vec<f64>,
    se: Vec<f64>,
    std: Vec<Option<f64>>,
}

/// Fit `replicates` datasets simulated at `truth` and summarise bias,
/// spread, standard errors and Wald coverage at `level`.
pub fn recovery_experiment(
    table: &ParameterTable,
    truth: &[f64],
    n: usize,
    replicates: usize,
    seed: u64,
    level: f64,
) -> Result<RecoveryReport> {
    let base = GeneratorConfig::from_theta(table, truth, n, seed)?;
    Generator::new(&base)?;
    let std_truth = standardize(table, truth)?;
    let opts = FitOptions {
        start: Some(truth.to_vec()),
        ..FitOptions::default()
    };
    let outcomes: Vec<Option<Replicate>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let cfg = GeneratorConfig {
                seed: replicate_seed(seed, r),
                ..base.clone()
            };
            let moments = simulate_moments(&cfg).ok()?;
            let fit = fit_with(table, &moments, &opts).ok()?;
            if !fit.convergence.converged {
                return None;
            }
            let se = fit.se.clone()?;
            let std = standardize(table, &fit.theta).ok()?;
            Some(Replicate {
                theta: fit.theta,
                se,
                std,
            })
        })
        .collect();

    let failed: Vec<usize> = outcomes
        .iter()
        .enumerate()
        .filter_map(|(r, o)| o.is_none().then_some(r))
        .collect();
    let ok: Vec<&Replicate> = outcomes.iter().flatten().collect();
    let k = ok.len().max(1) as f64;
    let z =
        statrs::distribution::ContinuousCDF::inverse_cdf(&statrs::distribution::Normal::standard(), 0.5 + level / 2.0);

    let mut slots = Vec::with_capacity(table.free_count);
    for s in 0..table.free_count {
        let mean = ok.iter().map(|r| r.theta[s]).sum::<f64>() / k;
        let var = ok.iter().map(|r| (r.theta[s] - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
        let covered = ok
            .iter()
            .filter(|r| (r.theta[s] - truth[s]).abs() <= z * r.se[s])
            .count();
        let e = &table.entries[table.slot_members(s)[0]];
        slots.push(SlotRecovery {
            label: table.label(e),
            truth: truth[s],
            mean_estimate: mean,
            bias: mean - truth[s],
            empirical_sd: var.sqrt(),
            mean_se: ok.iter().map(|r| r.se[s]).sum::<f64>() / k,
            coverage: covered as f64 / k,
        });
    }

    let structural = table
        .entries
        .iter()
        .filter(|e| e.target.is_structural() && e.slot.is_some())
        .map(|e| {
            let t = std_truth[e.id].expect("structural entries standardise");
            let mean = ok.iter().map(|r| r.std[e.id].unwrap()).sum::<f64>() / k;
            StandardizedRecovery {
                label: table.label(e),
                path: table.path(e),
                truth: t,
                mean_estimate: mean,
                bias: mean - t,
            }
        })
        .collect();

    Ok(RecoveryReport {
        n,
        replicates,
        level,
        seed,
        converged: ok.len(),
        failed,
        slots,
        structural,
    })
}
