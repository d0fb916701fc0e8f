//! Goodness-of-fit indices and invariance-ladder comparison.

use nalgebra::DMatrix;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{AsmError, Result};
use crate::estimate::FitResult;
use crate::moments::SampleMoments;
use crate::params::{theta_to_matrices, ParameterTable};
use crate::spec::InvarianceLevel;

pub const CFI_CUTOFF: f64 = 0.90;
pub const SRMR_CUTOFF: f64 = 0.08;
pub const RMSEA_CUTOFF: f64 = 0.06;
/// A constrained model is retained when CFI drops by less than this.
pub const DELTA_CFI: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NullFit {
    pub chi_square: f64,
    pub df: usize,
}

/// Independence baseline `Sigma = diag(S)`, evaluated in closed form.
pub fn null_model_fit(moments: &SampleMoments) -> NullFit {
    let p = moments.dim();
    let f = (0..p).map(|i| moments.cov[(i, i)].ln()).sum::<f64>() - moments.log_det();
    NullFit {
        chi_square: (moments.n as f64 - 1.0) * f,
        df: p * (p - 1) / 2,
    }
}

/// `(d_null - d) / d_null` with `d = chi2 - df` clamped at 0.
pub fn cfi(chi2: f64, df: f64, chi2_null: f64, df_null: f64) -> f64 {
    let d = (chi2 - df).max(0.0);
    let d_null = (chi2_null - df_null).max(0.0);
    if d_null == 0.0 || d == 0.0 {
        return 1.0;
    }
    ((d_null - d) / d_null).clamp(0.0, 1.0)
}

/// Root mean square of correlation residuals over `j <= k`, divided by
/// `p (p + 1) / 2`.
pub fn srmr(s: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let p = s.nrows();
    if sigma.shape() != s.shape() || !s.is_square() {
        return Err(AsmError::Dimension {
            what: "implied covariance",
            expected: p,
            found: sigma.nrows(),
        });
    }
    for i in 0..p {
        if !(s[(i, i)] > 0.0) || !(sigma[(i, i)] > 0.0) {
            return Err(AsmError::ZeroVariance(format!("column {i}")));
        }
    }
    let mut sum = 0.0;
    for j in 0..p {
        for k in 0..=j {
            let obs = s[(j, k)] / (s[(j, j)] * s[(k, k)]).sqrt();
            let imp = sigma[(j, k)] / (sigma[(j, j)] * sigma[(k, k)]).sqrt();
            sum += (obs - imp).powi(2);
        }
    }
    Ok((sum / (p * (p + 1) / 2) as f64).sqrt())
}

/// CDF of the noncentral chi-square as a Poisson mixture of central ones.
pub fn noncentral_chi2_cdf(x: f64, df: f64, lambda: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if lambda <= 0.0 {
        return gamma_lr(df / 2.0, x / 2.0);
    }
    let half = lambda / 2.0;
    let sd = half.sqrt();
    let lo = (half - 40.0 * sd - 40.0).max(0.0).floor() as u64;
    let hi = (half + 40.0 * sd + 40.0).ceil() as u64;
    let mut total = 0.0;
    for j in lo..=hi {
        let jf = j as f64;
        let log_w = -half + jf * half.ln() - ln_gamma(jf + 1.0);
        let w = log_w.exp();
        if w > 0.0 {
            total += w * gamma_lr(df / 2.0 + jf, x / 2.0);
        }
    }
    total.clamp(0.0, 1.0)
}

/// Noncentrality at which the CDF at `x` equals `target`; 0 when even the
/// central distribution is already below it.
fn solve_noncentrality(x: f64, df: f64, target: f64) -> f64 {
    if noncentral_chi2_cdf(x, df, 0.0) <= target {
        return 0.0;
    }
    let mut hi = x.max(1.0);
    while noncentral_chi2_cdf(x, df, hi) > target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-8 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if noncentral_chi2_cdf(x, df, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rmsea {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

/// `sqrt(max(chi2/df - 1, 0) / n)` with a 90% interval from noncentral
/// chi-square inversion. A model with no degrees of freedom reports zeros.
pub fn rmsea(chi2: f64, df: usize, n: usize) -> Rmsea {
    if df == 0 {
        return Rmsea {
            point: 0.0,
            lower: 0.0,
            upper: 0.0,
        };
    }
    let (d, nf) = (df as f64, n as f64);
    let bound = |lambda: f64| (lambda / (d * nf)).sqrt();
    Rmsea {
        point: ((chi2 / d - 1.0).max(0.0) / nf).sqrt(),
        lower: bound(solve_noncentrality(chi2, d, 0.95)),
        upper: bound(solve_noncentrality(chi2, d, 0.05)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitIndices {
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
    pub cfi: f64,
    pub srmr: f64,
    pub rmsea: f64,
    pub rmsea_ci90: (f64, f64),
    pub n: usize,
    pub chi2_null: f64,
    pub df_null: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffCheck {
    pub cfi: bool,
    pub srmr: bool,
    pub rmsea: bool,
}

impl FitIndices {
    /// CFI above .90, SRMR below .08, RMSEA point below .06.
    pub fn cutoffs(&self) -> CutoffCheck {
        CutoffCheck {
            cfi: self.cfi > CFI_CUTOFF,
            srmr: self.srmr < SRMR_CUTOFF,
            rmsea: self.rmsea < RMSEA_CUTOFF,
        }
    }
}

pub fn fit_indices(table: &ParameterTable, fit: &FitResult, moments: &SampleMoments) -> Result<FitIndices> {
    if fit.df < 0 {
        return Err(AsmError::Underidentified {
            free: table.free_count,
            moments: moments.moment_count(),
        });
    }
    let df = fit.df as usize;
    let m = theta_to_matrices(table, &fit.theta)?;
    let sigma = crate::matrices::implied_covariance(&m)?;
    let null = null_model_fit(moments);
    let chi2 = fit.chi_square;
    let r = rmsea(chi2, df, moments.n);
    let p_value = if df == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(df as f64).expect("df > 0").cdf(chi2.max(0.0))
    };
    Ok(FitIndices {
        chi2,
        df,
        p_value,
        cfi: cfi(chi2, df as f64, null.chi_square, null.df as f64),
        srmr: srmr(&moments.cov, &sigma)?,
        rmsea: r.point,
        rmsea_ci90: (r.lower, r.upper),
        n: moments.n,
        chi2_null: null.chi_square,
        df_null: null.df,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderStep {
    pub from: InvarianceLevel,
    pub to: InvarianceLevel,
    pub delta_chi2: f64,
    pub delta_df: i64,
    pub delta_cfi: f64,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceComparison {
    pub steps: Vec<LadderStep>,
    /// Most constrained model reached through retained steps.
    pub selected: InvarianceLevel,
}

/// Adjacent-pair comparison along a ladder ordered from least to most
/// constrained. A step is retained when CFI drops by less than `.01`.
pub fn compare_invariance(ladder: &[(InvarianceLevel, FitIndices)]) -> Result<InvarianceComparison> {
    let Some(first) = ladder.first() else {
        return Err(AsmError::NonNested("empty ladder".into()));
    };
    let mut steps = Vec::new();
    let mut selected = first.0;
    let mut open = true;
    for pair in ladder.windows(2) {
        let ((la, a), (lb, b)) = (&pair[0], &pair[1]);
        if b.df < a.df || lb < la {
            return Err(AsmError::NonNested(format!(
                "{} (df {}) is not nested in {} (df {})",
                lb.name(),
                b.df,
                la.name(),
                a.df
            )));
        }
        let delta_cfi = a.cfi - b.cfi;
        let retained = delta_cfi < DELTA_CFI;
        if open && retained {
            selected = *lb;
        }
        open &= retained;
        steps.push(LadderStep {
            from: *la,
            to: *lb,
            delta_chi2: b.chi2 - a.chi2,
            delta_df: b.df as i64 - a.df as i64,
            delta_cfi,
            retained,
        });
    }
    Ok(InvarianceComparison { steps, selected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn indices(chi2: f64, df: usize, cfi: f64) -> FitIndices {
        FitIndices {
            chi2,
            df,
            p_value: 0.0,
            cfi,
            srmr: 0.0,
            rmsea: 0.0,
            rmsea_ci90: (0.0, 0.0),
            n: 100,
            chi2_null: 0.0,
            df_null: 0,
        }
    }

    #[test]
    fn null_model() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let m = SampleMoments::new(s, DVector::zeros(2), 101).unwrap();
        let null = null_model_fit(&m);
        assert!((null.chi_square - 100.0 * -(0.75f64.ln())).abs() < 1e-10);
        assert!((null.chi_square - 28.77).abs() < 0.01);
        assert_eq!(null.df, 1);

        let diag = SampleMoments::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])),
            DVector::zeros(2),
            50,
        )
        .unwrap();
        assert!(null_model_fit(&diag).chi_square.abs() < 1e-12);
    }

    #[test]
    fn null_chi_square_vanishes_with_correlation() {
        let mut prev = f64::INFINITY;
        for r in [0.5, 0.1, 0.01, 0.001] {
            let s = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { r });
            let c = null_model_fit(&SampleMoments::new(s, DVector::zeros(3), 100).unwrap()).chi_square;
            assert!(c < prev && c >= 0.0);
            prev = c;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn cfi_cases() {
        assert_eq!(cfi(40.0, 40.0, 1000.0, 45.0), 1.0);
        assert!((cfi(100.0, 40.0, 1000.0, 45.0) - 895.0 / 955.0).abs() < 1e-12);
        assert!((cfi(100.0, 40.0, 1000.0, 45.0) - 0.9372).abs() < 1e-4);
        assert_eq!(cfi(100.0, 40.0, 40.0, 45.0), 1.0);
        assert_eq!(cfi(1e6, 1.0, 100.0, 10.0), 0.0);
    }

    #[test]
    fn srmr_cases() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        assert_eq!(srmr(&a, &a).unwrap(), 0.0);
        assert!((srmr(&a, &b).unwrap() - (0.04f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((srmr(&a, &b).unwrap() - 0.1155).abs() < 1e-4);
        let zero = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!(srmr(&zero, &a).is_err());
    }

    #[test]
    fn rmsea_cases() {
        let r = rmsea(200.0, 100, 400);
        assert!((r.point - 0.05).abs() < 1e-12);
        assert!(r.lower <= r.point && r.point <= r.upper);
        assert_eq!(rmsea(90.0, 100, 400).point, 0.0);
        assert_eq!(rmsea(90.0, 100, 400).lower, 0.0);
        let t1 = rmsea(8748.500, 1044, 8959);
        assert_eq!(format!("{:.3}", t1.point), "0.029");
        assert!(t1.lower < t1.point && t1.point < t1.upper);
        assert!(t1.lower > 0.027 && t1.upper < 0.030, "{t1:?}");
    }

    #[test]
    fn noncentral_cdf_reduces_to_central() {
        let central = ChiSquared::new(7.0).unwrap();
        for x in [1.0, 5.0, 12.0] {
            assert!((noncentral_chi2_cdf(x, 7.0, 0.0) - central.cdf(x)).abs() < 1e-12);
        }
        // mean of a noncentral chi-square is df + lambda; the CDF decreases in lambda
        assert!(noncentral_chi2_cdf(20.0, 5.0, 10.0) > noncentral_chi2_cdf(20.0, 5.0, 15.0));
    }

    #[test]
    fn ladder_comparison() {
        let ladder = [
            (InvarianceLevel::Configural, indices(8748.500, 1044, 0.943)),
            (InvarianceLevel::Weak, indices(9135.501, 1066, 0.940)),
            (InvarianceLevel::Strong, indices(9402.683, 1082, 0.938)),
        ];
        let c = compare_invariance(&ladder).unwrap();
        assert!(c.steps.iter().all(|s| s.retained));
        assert_eq!(c.selected, InvarianceLevel::Strong);
        assert_eq!(format!("{:.3}", c.steps[0].delta_cfi), "0.003");
        assert_eq!(c.steps[0].delta_df, 22);
        assert_eq!(c.steps[1].delta_df, 16);

        let same = [
            (InvarianceLevel::Configural, indices(50.0, 10, 0.97)),
            (InvarianceLevel::Configural, indices(50.0, 10, 0.97)),
        ];
        let c = compare_invariance(&same).unwrap();
        assert_eq!(c.steps[0].delta_cfi, 0.0);
        assert!(c.steps[0].retained);

        let rejected = [
            (InvarianceLevel::Configural, indices(50.0, 10, 0.97)),
            (InvarianceLevel::Weak, indices(150.0, 14, 0.90)),
            (InvarianceLevel::Strong, indices(152.0, 18, 0.90)),
        ];
        let c = compare_invariance(&rejected).unwrap();
        assert!(!c.steps[0].retained && c.steps[1].retained);
        assert_eq!(c.selected, InvarianceLevel::Configural);

        let bad = [
            (InvarianceLevel::Weak, indices(50.0, 14, 0.97)),
            (InvarianceLevel::Strong, indices(50.0, 10, 0.97)),
        ];
        assert!(matches!(compare_invariance(&bad), Err(AsmError::NonNested(_))));
    }
}
