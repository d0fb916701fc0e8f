//! Stacked model matrices and the moments they imply.
//!
//! Latents are ordered covariates first, then wave by wave with each wave's
//! latents in structural (topological) order. Under that ordering `gamma` is
//! strictly lower-triangular, so `I - gamma` is unit lower-triangular and
//! every solve against it is a forward substitution.

use nalgebra::{DMatrix, DVector};

use crate::error::{AsmError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledMatrices {
    /// Observed intercepts, length `p*T + covariates`.
    pub mu: DVector<f64>,
    /// Block-diagonal loadings, observed x latent.
    pub lambda: DMatrix<f64>,
    /// Latent coefficients: within-wave paths, autoregressive and covariate blocks.
    pub gamma: DMatrix<f64>,
    /// Disturbance covariance (covariance of the covariates in its leading block).
    pub psi: DMatrix<f64>,
    /// Measurement residual covariance.
    pub theta: DMatrix<f64>,
    /// Latent intercepts.
    pub alpha: DVector<f64>,
}

impl AssembledMatrices {
    pub fn zeros(observed: usize, latent: usize) -> Self {
        AssembledMatrices {
            mu: DVector::zeros(observed),
            lambda: DMatrix::zeros(observed, latent),
            gamma: DMatrix::zeros(latent, latent),
            psi: DMatrix::zeros(latent, latent),
            theta: DMatrix::zeros(observed, observed),
            alpha: DVector::zeros(latent),
        }
    }

    pub fn observed_dim(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.lambda.ncols()
    }

    /// `lambda * (I - gamma)^-1`, the reduced-form loadings.
    pub fn reduced_loadings(&self) -> Result<DMatrix<f64>> {
        let inv = solve_unit_lower(&self.gamma, &DMatrix::identity(self.latent_dim(), self.latent_dim()))?;
        Ok(&self.lambda * inv)
    }
}

/// Rejects a coefficient matrix with anything on or above the diagonal.
pub fn check_triangular(gamma: &DMatrix<f64>) -> Result<()> {
    let n = gamma.nrows();
    for i in 0..n {
        for j in i..n {
            if gamma[(i, j)] != 0.0 {
                return Err(AsmError::Triangularity { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// Solve `(I - gamma) X = rhs` by forward substitution.
pub fn solve_unit_lower(gamma: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_triangular(gamma)?;
    let n = gamma.nrows();
    if rhs.nrows() != n {
        return Err(AsmError::Dimension {
            what: "right-hand side rows",
            expected: n,
            found: rhs.nrows(),
        });
    }
    let mut x = rhs.clone();
    for i in 1..n {
        for j in 0..i {
            let g = gamma[(i, j)];
            if g != 0.0 {
                for c in 0..x.ncols() {
                    let v = x[(j, c)];
                    x[(i, c)] += g * v;
                }
            }
        }
    }
    Ok(x)
}

/// `(I - gamma)^-1 psi (I - gamma)^-T`, the latent covariance.
pub fn latent_covariance(gamma: &DMatrix<f64>, psi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let left = solve_unit_lower(gamma, psi)?;
    let mut cov = solve_unit_lower(gamma, &left.transpose())?;
    symmetrize(&mut cov);
    Ok(cov)
}

/// `Sigma = lambda (I - gamma)^-1 psi (I - gamma)^-T lambda^T + theta`.
pub fn implied_covariance(m: &AssembledMatrices) -> Result<DMatrix<f64>> {
    let eta = latent_covariance(&m.gamma, &m.psi)?;
    let mut sigma = &m.lambda * eta * m.lambda.transpose() + &m.theta;
    symmetrize(&mut sigma);
    Ok(sigma)
}

/// `mu + lambda (I - gamma)^-1 alpha`.
pub fn implied_means(m: &AssembledMatrices, alpha: &DVector<f64>) -> Result<DVector<f64>> {
    if alpha.len() != m.latent_dim() {
        return Err(AsmError::Dimension {
            what: "latent mean vector",
            expected: m.latent_dim(),
            found: alpha.len(),
        });
    }
    let a = DMatrix::from_column_slice(alpha.len(), 1, alpha.as_slice());
    let eta = solve_unit_lower(&m.gamma, &a)?;
    Ok(&m.mu + &m.lambda * eta.column(0))
}

pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}
