//! Maximum-likelihood discrepancy between sample and implied moments.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{AsmError, Result};

/// Value returned for an implied covariance that is not positive definite.
pub const PENALTY: f64 = 1e10;

/// `tr(S Sigma^-1) + log|Sigma| - log|S| - p`, plus `d' Sigma^-1 d` when a
/// mean residual `d` is supplied.
///
/// A `sigma` that is not positive definite yields [`PENALTY`] plus the summed
/// magnitude of its negative eigenvalues rather than an error.
pub fn fml_discrepancy(s: &DMatrix<f64>, sigma: &DMatrix<f64>, meandiff: Option<&DVector<f64>>) -> Result<f64> {
    let p = s.nrows();
    if !s.is_square() || sigma.shape() != s.shape() {
        return Err(AsmError::Dimension {
            what: "implied covariance",
            expected: p,
            found: sigma.nrows(),
        });
    }
    if let Some(d) = meandiff {
        if d.len() != p {
            return Err(AsmError::Dimension {
                what: "mean residual",
                expected: p,
                found: d.len(),
            });
        }
    }
    let log_det_s = match s.clone().cholesky() {
        Some(c) => log_det_from_cholesky(c.l_dirty()),
        None => return Err(AsmError::NotPositiveDefinite("sample covariance")),
    };
    Ok(fml_with_log_det(s, log_det_s, sigma, meandiff))
}

pub(crate) fn fml_with_log_det(
    s: &DMatrix<f64>,
    log_det_s: f64,
    sigma: &DMatrix<f64>,
    meandiff: Option<&DVector<f64>>,
) -> f64 {
    let p = s.nrows() as f64;
    let Some(chol) = sigma.clone().cholesky() else {
        return non_pd_penalty(sigma);
    };
    let log_det_sigma = log_det_from_cholesky(chol.l_dirty());
    let sinv_s = chol.solve(s);
    let mut f = sinv_s.trace() + log_det_sigma - log_det_s - p;
    if let Some(d) = meandiff {
        f += d.dot(&chol.solve(d));
    }
    f
}

pub(crate) fn log_det_from_cholesky(l: &DMatrix<f64>) -> f64 {
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

pub(crate) fn non_pd_penalty(sigma: &DMatrix<f64>) -> f64 {
    if sigma.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let eig = SymmetricEigen::new(sigma.clone());
    PENALTY
        + eig
            .eigenvalues
            .iter()
            .filter(|&&e| e <= 0.0)
            .map(|e| e.abs())
            .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_matrices_give_zero() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(fml_discrepancy(&i3, &i3, None).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_hand_value() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let f = fml_discrepancy(&s, &DMatrix::identity(2, 2), None).unwrap();
        assert!((f - (1.0 - 2f64.ln())).abs() < 1e-12);
        assert!((f - 0.3069).abs() < 1e-4);
    }

    #[test]
    fn mean_term_adds_mahalanobis() {
        let s = DMatrix::<f64>::identity(2, 2);
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let d = DVector::from_vec(vec![1.0, 2.0]);
        let base = fml_discrepancy(&s, &sigma, None).unwrap();
        let with = fml_discrepancy(&s, &sigma, Some(&d)).unwrap();
        assert!((with - base - (0.5 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn non_pd_sigma_is_penalised() {
        let s = DMatrix::<f64>::identity(2, 2);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let f = fml_discrepancy(&s, &sigma, None).unwrap();
        assert!((f - (PENALTY + 1.0)).abs() < 1e-3);
        assert!(fml_discrepancy(&s, &DMatrix::identity(3, 3), None).is_err());
    }

    /// -2/n (l(Sigma) - l(S)) with the normal log-likelihood evaluated at the
    /// sample covariance equals F_ML.
    #[test]
    fn matches_likelihood_ratio() {
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 1.5]);
        let sigma = DMatrix::from_row_slice(3, 3, &[1.5, 0.1, 0.0, 0.1, 1.2, 0.0, 0.0, 0.0, 1.0]);
        let loglik = |cov: &DMatrix<f64>| {
            let inv = cov.clone().try_inverse().unwrap();
            -0.5 * (cov.determinant().ln() + (&s * inv).trace())
        };
        let lr = -2.0 * (loglik(&sigma) - loglik(&s));
        let f = fml_discrepancy(&s, &sigma, None).unwrap();
        assert!(f > 0.0);
        assert!((f - lr).abs() < 1e-12);
    }
}
