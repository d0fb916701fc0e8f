//! Maximum-likelihood estimation over a parameter table.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::discrepancy::{log_det_from_cholesky, non_pd_penalty};
use crate::error::{AsmError, Result};
use crate::matrices::{solve_unit_lower, symmetrize};
use crate::moments::SampleMoments;
use crate::optim::{minimize, BfgsOptions};
use crate::params::{theta_to_matrices, Matrix, ParameterTable};
use crate::spec::ParamRef;

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub bfgs: BfgsOptions,
    /// Starting vector; data-driven starts when `None`.
    pub start: Option<Vec<f64>>,
    pub standard_errors: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            bfgs: BfgsOptions::default(),
            start: None,
            standard_errors: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub max_gradient: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub f_min: f64,
    /// `(n - 1) * f_min`.
    pub chi_square: f64,
    pub df: i64,
    pub n: usize,
    pub convergence: Convergence,
    /// Per-slot standard errors; `None` when the Hessian is not positive definite.
    pub se: Option<Vec<f64>>,
    pub vcov: Option<DMatrix<f64>>,
}

impl FitResult {
    pub fn ensure_converged(&self) -> Result<()> {
        if self.convergence.converged {
            Ok(())
        } else {
            Err(AsmError::NotConverged {
                iterations: self.convergence.iterations,
                gradient: self.convergence.max_gradient,
            })
        }
    }
}

/// Degrees of freedom: nonredundant moments (including means) minus free slots.
pub fn degrees_of_freedom(table: &ParameterTable) -> i64 {
    let p = table.layout.observed_dim();
    (p * (p + 1) / 2 + p) as i64 - table.free_count as i64
}

pub(crate) struct Objective<'a> {
    table: &'a ParameterTable,
    moments: &'a SampleMoments,
    log_det_s: f64,
    with_means: bool,
}

impl<'a> Objective<'a> {
    pub(crate) fn new(table: &'a ParameterTable, moments: &'a SampleMoments, with_means: bool) -> Self {
        Objective {
            table,
            moments,
            log_det_s: moments.log_det(),
            with_means,
        }
    }

    /// Discrepancy at `theta`, writing the gradient when asked.
    pub(crate) fn eval(&self, theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let m = theta_to_matrices(self.table, theta).expect("vector length matches the table");
        let k = m.latent_dim();
        let a =
            solve_unit_lower(&m.gamma, &DMatrix::identity(k, k)).expect("gamma is lower-triangular by construction");
        let l = &m.lambda * &a;
        let mut sigma = &l * &m.psi * l.transpose() + &m.theta;
        symmetrize(&mut sigma);
        let Some(chol) = sigma.clone().cholesky() else {
            if let Some(g) = grad {
                g.fill(0.0);
            }
            return non_pd_penalty(&sigma);
        };
        let s = &self.moments.cov;
        let sinv = chol.inverse();
        let sinv_s = &sinv * s;
        let p = s.nrows() as f64;
        let mut f = sinv_s.trace() + log_det_from_cholesky(chol.l_dirty()) - self.log_det_s - p;

        let a_alpha = &a * &m.alpha;
        let w = if self.with_means {
            let d = &self.moments.mean - (&m.mu + &m.lambda * &a_alpha);
            let w = &sinv * &d;
            f += d.dot(&w);
            w
        } else {
            DVector::zeros(s.nrows())
        };

        let Some(grad) = grad else { return f };
        let mut g_mat = &sinv - &sinv_s * &sinv - &w * w.transpose();
        symmetrize(&mut g_mat);
        let c_eta = &a * &m.psi * a.transpose();
        let g_lam_c = &g_mat * &m.lambda * &c_eta;
        let lt_g = l.transpose() * &g_mat;
        let d_lambda = 2.0 * &g_lam_c - 2.0 * &w * a_alpha.transpose();
        let lt_w = l.transpose() * &w;
        let d_gamma = 2.0 * l.transpose() * &g_lam_c - 2.0 * &lt_w * a_alpha.transpose();
        let d_psi = &lt_g * &l;

        grad.fill(0.0);
        for e in &self.table.entries {
            let Some(slot) = e.slot else { continue };
            let (r, c) = (e.row, e.col);
            let sym = if r == c { 1.0 } else { 2.0 };
            grad[slot] += match e.target {
                Matrix::Mu => -2.0 * w[r],
                Matrix::Alpha => -2.0 * lt_w[r],
                Matrix::Lambda => d_lambda[(r, c)],
                Matrix::Beta | Matrix::Pi | Matrix::C => d_gamma[(r, c)],
                Matrix::Psi => sym * d_psi[(r, c)],
                Matrix::Theta => sym * g_mat[(r, c)],
            };
        }
        f
    }
}

fn check_dims(table: &ParameterTable, moments: &SampleMoments) -> Result<()> {
    if moments.dim() != table.layout.observed_dim() {
        return Err(AsmError::Dimension {
            what: "observed variables",
            expected: table.layout.observed_dim(),
            found: moments.dim(),
        });
    }
    Ok(())
}

/// Discrepancy at `theta`. The mean term is included when the table
/// restricts the mean structure.
pub fn discrepancy(table: &ParameterTable, theta: &[f64], moments: &SampleMoments) -> Result<f64> {
    check_dims(table, moments)?;
    theta_to_matrices(table, theta)?;
    Ok(Objective::new(table, moments, table.mean_structure_active()).eval(theta, None))
}

/// Analytic gradient of [`discrepancy`] with respect to the free slots.
pub fn gradient(table: &ParameterTable, theta: &[f64], moments: &SampleMoments) -> Result<Vec<f64>> {
    check_dims(table, moments)?;
    theta_to_matrices(table, theta)?;
    let mut g = vec![0.0; theta.len()];
    Objective::new(table, moments, table.mean_structure_active()).eval(theta, Some(&mut g));
    Ok(g)
}

pub fn fit(table: &ParameterTable, moments: &SampleMoments) -> Result<FitResult> {
    fit_with(table, moments, &FitOptions::default())
}

/// Minimise the discrepancy from data-driven (or supplied) starts.
///
/// When intercepts are unconstrained they reproduce the sample means exactly;
/// they are then left out of the search and set afterwards.
pub fn fit_with(table: &ParameterTable, moments: &SampleMoments, opts: &FitOptions) -> Result<FitResult> {
    check_dims(table, moments)?;
    let df = degrees_of_freedom(table);
    if df < 0 {
        return Err(AsmError::Underidentified {
            free: table.free_count,
            moments: moments.moment_count(),
        });
    }
    let start = match &opts.start {
        Some(s) => {
            theta_to_matrices(table, s)?;
            s.clone()
        }
        None => {
            let mut t = table.clone();
            t.set_starts(moments);
            t.start_theta()
        }
    };

    let with_means = table.mean_structure_active();
    let objective = Objective::new(table, moments, with_means);
    let profiled = if with_means {
        Vec::new()
    } else {
        table.intercept_slots()
    };
    let active: Vec<usize> = (0..table.free_count).filter(|s| !profiled.contains(s)).collect();

    let mut full = start.clone();
    let mut buf = vec![0.0; table.free_count];
    let x0: Vec<f64> = active.iter().map(|&s| start[s]).collect();
    if objective.eval(&start, None) >= crate::discrepancy::PENALTY {
        return Err(AsmError::NotPositiveDefinite(
            "implied covariance at the starting values",
        ));
    }
    let min = minimize(
        |x, g| {
            for (&s, v) in active.iter().zip(x) {
                full[s] = *v;
            }
            let f = objective.eval(&full, Some(&mut buf));
            for (gi, &s) in g.iter_mut().zip(&active) {
                *gi = buf[s];
            }
            f
        },
        x0,
        &opts.bfgs,
    );

    let mut theta = start;
    for (&s, v) in active.iter().zip(&min.x) {
        theta[s] = *v;
    }
    if !profiled.is_empty() {
        let m = theta_to_matrices(table, &theta)?;
        let implied = crate::matrices::implied_means(&m, &m.alpha)?;
        for &slot in &profiled {
            let r = table.entries[table.slot_members(slot)[0]].row;
            theta[slot] = moments.mean[r] - (implied[r] - m.mu[r]);
        }
    }

    let f_min = objective.eval(&theta, None);
    let mut result = FitResult {
        chi_square: (moments.n as f64 - 1.0) * f_min,
        f_min,
        df,
        n: moments.n,
        convergence: Convergence {
            converged: min.converged,
            iterations: min.iterations,
            max_gradient: min.grad_max,
        },
        theta,
        se: None,
        vcov: None,
    };
    if opts.standard_errors && result.convergence.converged {
        if let Some(vcov) = covariance_matrix(table, &result.theta, moments) {
            result.se = Some((0..vcov.nrows()).map(|i| vcov[(i, i)].sqrt()).collect());
            result.vcov = Some(vcov);
        }
    }
    Ok(result)
}

/// `2 / (n - 1)` times the inverse Hessian of the mean-inclusive discrepancy,
/// the Hessian taken by central differences of the analytic gradient.
/// `None` when the Hessian is not positive definite.
pub fn covariance_matrix(table: &ParameterTable, theta: &[f64], moments: &SampleMoments) -> Option<DMatrix<f64>> {
    let objective = Objective::new(table, moments, true);
    let k = theta.len();
    let mut h = DMatrix::zeros(k, k);
    let (mut gp, mut gm) = (vec![0.0; k], vec![0.0; k]);
    let mut x = theta.to_vec();
    for j in 0..k {
        let step = 1e-5 * theta[j].abs().max(1.0);
        x[j] = theta[j] + step;
        objective.eval(&x, Some(&mut gp));
        x[j] = theta[j] - step;
        objective.eval(&x, Some(&mut gm));
        x[j] = theta[j];
        for i in 0..k {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    symmetrize(&mut h);
    let inv = h.cholesky()?.inverse();
    let vcov = inv * (2.0 / (moments.n as f64 - 1.0));
    (0..k).all(|i| vcov[(i, i)] > 0.0).then_some(vcov)
}

/// Two-sided Wald p-value for `estimate / se`.
pub fn wald_p(estimate: f64, se: f64) -> f64 {
    erfc((estimate / se).abs() / std::f64::consts::SQRT_2)
}

/// Fully standardised value of each entry, in table order; `None` for means.
pub fn standardize(table: &ParameterTable, theta: &[f64]) -> Result<Vec<Option<f64>>> {
    let m = theta_to_matrices(table, theta)?;
    let c_eta = crate::matrices::latent_covariance(&m.gamma, &m.psi)?;
    let sigma = crate::matrices::implied_covariance(&m)?;
    let sd_eta = |i: usize| c_eta[(i, i)].sqrt();
    let sd_y = |i: usize| sigma[(i, i)].sqrt();
    Ok(table
        .entries
        .iter()
        .map(|e| {
            let v = table.value(e, theta);
            let (r, c) = (e.row, e.col);
            match e.target {
                Matrix::Mu | Matrix::Alpha => None,
                Matrix::Lambda => Some(v * sd_eta(c) / sd_y(r)),
                Matrix::Beta | Matrix::Pi | Matrix::C => Some(v * sd_eta(c) / sd_eta(r)),
                Matrix::Psi => Some(v / (sd_eta(r) * sd_eta(c))),
                Matrix::Theta => Some(v / (sd_y(r) * sd_y(c))),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RSquared {
    pub latent: String,
    pub wave: usize,
    pub value: f64,
}

/// Explained variance of every template latent that has at least one
/// predictor at its wave.
pub fn r_squared(table: &ParameterTable, theta: &[f64]) -> Result<Vec<RSquared>> {
    let m = theta_to_matrices(table, theta)?;
    let c_eta = crate::matrices::latent_covariance(&m.gamma, &m.psi)?;
    let spec = &table.spec;
    let mut out = Vec::new();
    for t in 1..=spec.waves {
        for l in 0..spec.latent_count() {
            let has_predictor = table.entries.iter().any(|e| {
                e.target.is_structural()
                    && e.wave == Some(t)
                    && match e.param {
                        ParamRef::Path { target, .. } => target == l,
                        ParamRef::Autoregressive { latent, .. } => latent == l,
                        ParamRef::CovariateEffect { latent, .. } => latent == l,
                        _ => false,
                    }
            });
            if !has_predictor {
                continue;
            }
            let r = table.layout.lat(t, l);
            out.push(RSquared {
                latent: spec.latents[l].clone(),
                wave: t,
                value: 1.0 - m.psi[(r, r)] / c_eta[(r, r)],
            });
        }
    }
    Ok(out)
}
