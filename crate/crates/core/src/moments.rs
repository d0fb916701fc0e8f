use nalgebra::{DMatrix, DVector};

use crate::error::{AsmError, Result};

/// Sample covariance (divisor `n - 1`), mean vector and sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    pub cov: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub n: usize,
}

impl SampleMoments {
    /// Checks that `cov` is square, symmetric and positive definite.
    pub fn new(cov: DMatrix<f64>, mean: DVector<f64>, n: usize) -> Result<Self> {
        if !cov.is_square() || cov.nrows() != mean.len() {
            return Err(AsmError::Dimension {
                what: "sample covariance",
                expected: mean.len(),
                found: cov.nrows(),
            });
        }
        let scale = cov.abs().max().max(1.0);
        if (&cov - cov.transpose()).abs().max() > 1e-10 * scale {
            return Err(AsmError::Invalid("sample covariance is not symmetric".into()));
        }
        if cov.clone().cholesky().is_none() {
            return Err(AsmError::NotPositiveDefinite("sample covariance"));
        }
        if n < 2 {
            return Err(AsmError::Data(format!("need at least 2 observations, have {n}")));
        }
        Ok(SampleMoments { cov, mean, n })
    }

    /// Moments of a complete data matrix, one row per subject.
    pub fn from_data(data: &DMatrix<f64>) -> Result<Self> {
        let n = data.nrows();
        if n < 2 {
            return Err(AsmError::Data(format!("need at least 2 observations, have {n}")));
        }
        let mean = DVector::from_iterator(data.ncols(), data.column_iter().map(|c| c.mean()));
        let mut centered = data.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-mean[j]);
        }
        let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
        crate::matrices::symmetrize(&mut cov);
        SampleMoments::new(cov, mean, n)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Nonredundant moments: variances, covariances and means.
    pub fn moment_count(&self) -> usize {
        let p = self.dim();
        p * (p + 1) / 2 + p
    }

    pub(crate) fn log_det(&self) -> f64 {
        let chol = self.cov.clone().cholesky().expect("checked on construction");
        2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unbiased_covariance() {
        let data = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 1.0, 3.0, 5.0, 6.0, 4.0]);
        let m = SampleMoments::from_data(&data).unwrap();
        assert_eq!(m.mean, DVector::from_vec(vec![3.0, 3.0]));
        // deviations (-2,-1) (-1,-2) (0,2) (3,1)
        assert!((m.cov[(0, 0)] - 14.0 / 3.0).abs() < 1e-12);
        assert!((m.cov[(0, 1)] - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.moment_count(), 5);
    }

    #[test]
    fn singular_is_rejected() {
        let data = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(
            SampleMoments::from_data(&data),
            Err(AsmError::NotPositiveDefinite(_))
        ));
    }
}
