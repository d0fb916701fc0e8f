//! The shipped three-wave activity/health model and a generating truth for it.
//!
//! The truth puts every template latent and covariate on unit variance, so
//! the structural coefficients below are both raw and standardised values.
//! Disturbance variances are whatever keeps each latent at unit variance.

use crate::error::{AsmError, Result};
use crate::matrices::AssembledMatrices;
use crate::params::{Matrix, ParameterTable};
use crate::spec::{parse_model_spec, ModelSpec, ParamRef};

pub const REFERENCE_MODEL: &str = include_str!("../models/reference.asm");

/// Share of indicator variance due to its latent.
pub const RELIABILITY: f64 = 0.6;

/// Within-wave paths, one value per wave.
const PATHS: [(&str, &str, [f64; 3]); 5] = [
    ("SA", "FHS", [-0.105, -0.080, -0.054]),
    ("PA", "FHS", [-0.146, -0.081, -0.094]),
    ("SA", "DS", [-0.085, -0.015, -0.015]),
    ("PA", "DS", [0.056, 0.098, 0.044]),
    ("FHS", "DS", [0.309, 0.246, 0.227]),
];

/// Autoregressive paths keyed by (latent, source wave, target wave).
const AUTOREGRESSIVE: [(&str, usize, usize, f64); 12] = [
    ("SA", 1, 2, 0.332),
    ("SA", 1, 3, 0.203),
    ("SA", 2, 3, 0.321),
    ("PA", 1, 2, 0.331),
    ("PA", 1, 3, 0.202),
    ("PA", 2, 3, 0.329),
    ("FHS", 1, 2, 0.527),
    ("FHS", 1, 3, 0.233),
    ("FHS", 2, 3, 0.493),
    ("DS", 1, 2, 0.445),
    ("DS", 1, 3, 0.235),
    ("DS", 2, 3, 0.373),
];

const COVARIATES: [&str; 5] = ["SEX", "AGE", "URB", "MAR", "EDU"];

/// Covariate effects per latent, rows are waves, columns follow `COVARIATES`.
const COVARIATE_EFFECTS: [(&str, [[f64; 5]; 3]); 4] = [
    (
        "SA",
        [
            [0.041, 0.046, 0.077, 0.005, 0.133],
            [0.028, -0.020, 0.078, 0.039, 0.111],
            [0.029, -0.043, 0.025, 0.024, 0.088],
        ],
    ),
    (
        "PA",
        [
            [-0.174, -0.220, -0.173, -0.038, -0.121],
            [-0.069, -0.180, -0.065, -0.009, -0.059],
            [-0.008, -0.077, -0.079, -0.022, -0.007],
        ],
    ),
    (
        "FHS",
        [
            [0.033, 0.173, -0.038, 0.008, -0.108],
            [0.003, 0.098, 0.009, -0.010, -0.051],
            [0.030, 0.066, -0.035, 0.010, -0.006],
        ],
    ),
    (
        "DS",
        [
            [0.141, -0.026, -0.076, 0.071, -0.082],
            [0.076, -0.090, -0.022, 0.040, -0.029],
            [0.064, -0.028, -0.024, 0.000, -0.027],
        ],
    ),
];

/// Reported loading and per-wave observed means of each indicator.
const INDICATORS: [(&str, f64, [f64; 3]); 15] = [
    ("sa", 1.0, [1.272, 1.470, 1.337]),
    ("pa", 1.0, [145.829, 125.573, 122.270]),
    ("iadl1", 0.348, [1.130, 1.175, 1.265]),
    ("iadl2", 0.361, [1.134, 1.168, 1.218]),
    ("iadl3", 0.407, [1.144, 1.163, 1.217]),
    ("iadl4", 0.372, [1.243, 1.238, 1.267]),
    ("iadl5", 0.158, [1.091, 1.081, 1.097]),
    ("cesd1", 0.660, [2.041, 2.041, 2.041]),
    ("cesd2", 0.600, [1.926, 1.926, 1.926]),
    ("cesd3", 0.737, [1.987, 1.987, 1.987]),
    ("cesd4", 0.692, [2.022, 2.022, 2.022]),
    ("cesd5", 0.335, [1.354, 1.354, 1.354]),
    ("cesd6", 0.455, [2.038, 2.038, 2.038]),
    ("cesd7", 0.447, [1.523, 1.523, 1.523]),
    ("cesd8", 0.389, [1.369, 1.369, 1.369]),
];

pub fn reference_spec() -> ModelSpec {
    parse_model_spec(REFERENCE_MODEL).expect("shipped model parses")
}

fn missing(what: String) -> AsmError {
    AsmError::Invalid(format!("no generating value for {what}"))
}

/// Generating matrices for a table built from the reference model.
///
/// Loadings are the reported ones rescaled so each latent's first indicator
/// has loading 1; residual variances give every indicator the same
/// [`RELIABILITY`]. Depressive-symptom intercepts are equal across waves.
pub fn reference_matrices(table: &ParameterTable) -> Result<AssembledMatrices> {
    let spec = &table.spec;
    let inds = spec.indicator_list();
    let layout = &table.layout;
    let mut m = AssembledMatrices::zeros(layout.observed_dim(), layout.latent_dim());

    let indicator = |i: usize| {
        let name = inds[i].1;
        INDICATORS
            .iter()
            .find(|(n, _, _)| *n == name)
            .ok_or_else(|| missing(format!("indicator `{name}`")))
    };
    let relative = |i: usize| -> Result<f64> {
        let owner = inds[i].0;
        let marker = inds
            .iter()
            .position(|(o, _)| *o == owner)
            .expect("owner has indicators");
        Ok(indicator(i)?.1 / indicator(marker)?.1)
    };

    for e in &table.entries {
        let t = e.wave.unwrap_or(1);
        let value = match e.param {
            ParamRef::Intercept { indicator: i } => indicator(i)?.2[t - 1],
            ParamRef::Loading { indicator: i } => relative(i)?,
            ParamRef::Residual { indicator: i } => {
                if matches!(e.status, crate::params::Status::Fixed(_)) {
                    table.value(e, &[])
                } else {
                    relative(i)?.powi(2) * (1.0 / RELIABILITY - 1.0)
                }
            }
            ParamRef::Path { source, target } => {
                let (s, d) = (&spec.latents[source], &spec.latents[target]);
                PATHS
                    .iter()
                    .find(|(a, b, _)| a == s && b == d)
                    .ok_or_else(|| missing(format!("path {s} -> {d}")))?
                    .2[t - 1]
            }
            ParamRef::Autoregressive { latent, .. } => {
                let name = &spec.latents[latent];
                let from = e.source_wave.expect("autoregressive entries carry a source wave");
                AUTOREGRESSIVE
                    .iter()
                    .find(|(n, a, b, _)| n == name && *a == from && *b == t)
                    .ok_or_else(|| missing(format!("{name}_{from} -> {name}_{t}")))?
                    .3
            }
            ParamRef::CovariateEffect { covariate, latent } => {
                let (cname, lname) = (&spec.covariates[covariate].name, &spec.latents[latent]);
                let col = COVARIATES
                    .iter()
                    .position(|c| c == cname)
                    .ok_or_else(|| missing(format!("covariate `{cname}`")))?;
                COVARIATE_EFFECTS
                    .iter()
                    .find(|(n, _)| n == lname)
                    .ok_or_else(|| missing(format!("{cname} -> {lname}")))?
                    .1[t - 1][col]
            }
            ParamRef::CovariateCov { a, b } => (a == b) as u8 as f64,
            ParamRef::CovariateLoading { .. } => 1.0,
            ParamRef::CovariateMean { .. } | ParamRef::LatentMean { .. } | ParamRef::Disturbance { .. } => 0.0,
        };
        let (r, c) = (e.row, e.col);
        match e.target {
            Matrix::Mu => m.mu[r] = value,
            Matrix::Alpha => m.alpha[r] = value,
            Matrix::Lambda => m.lambda[(r, c)] = value,
            Matrix::Beta | Matrix::Pi | Matrix::C => m.gamma[(r, c)] = value,
            Matrix::Psi => {
                m.psi[(r, c)] = value;
                m.psi[(c, r)] = value;
            }
            Matrix::Theta => m.theta[(r, c)] = value,
        }
    }

    // Disturbance variances that leave each template latent at unit variance,
    // filled in stacked (structural) order.
    let k = layout.latent_dim();
    let mut cov = m.psi.clone();
    for i in layout.covariates..k {
        let g = m.gamma.row(i);
        let mut explained = 0.0;
        for a in 0..i {
            for b in 0..i {
                explained += g[a] * g[b] * cov[(a, b)];
            }
        }
        let psi = 1.0 - explained;
        if psi <= 0.0 {
            return Err(AsmError::Invalid(format!(
                "generating paths explain more than all variance of latent row {i}"
            )));
        }
        m.psi[(i, i)] = psi;
        for j in 0..i {
            let c: f64 = (0..i).map(|a| g[a] * cov[(a, j)]).sum();
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
        cov[(i, i)] = 1.0;
    }
    Ok(m)
}

/// [`reference_matrices`] as a free-parameter vector for `table`.
pub fn reference_truth(table: &ParameterTable) -> Result<Vec<f64>> {
    Ok(table.theta_from_matrices(&reference_matrices(table)?))
}
