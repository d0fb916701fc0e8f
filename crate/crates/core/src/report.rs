//! Fit, ladder and bootstrap reports as TSV or JSON.
//!
//! Reports carry the full run configuration and no timestamps, so identical
//! inputs give identical bytes.

use std::fmt::Write as _;

use serde::Serialize;

use crate::bootstrap::BootstrapResult;
use crate::data::IngestionReport;
use crate::error::Result;
use crate::estimate::{r_squared, standardize, wald_p, Convergence, FitResult, RSquared};
use crate::metrics::{CutoffCheck, FitIndices, InvarianceComparison, CFI_CUTOFF, RMSEA_CUTOFF, SRMR_CUTOFF};
use crate::params::{ParameterTable, Status};
use crate::spec::InvarianceLevel;

/// Six significant digits; scientific notation for very small or large values.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NA".into() } else { format!("{x}") };
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..15).contains(&mag) {
        return format!("{:.5e}", x);
    }
    let decimals = (5 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or("-".into(), sig6)
}

fn model_name(level: InvarianceLevel) -> &'static str {
    match level {
        InvarianceLevel::Configural => "Configural invariance",
        InvarianceLevel::Weak => "Weak invariance",
        InvarianceLevel::Strong => "Strong invariance",
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub spec: String,
    pub data: Option<String>,
    pub out: Option<String>,
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub level: Option<f64>,
    pub n: Option<usize>,
    pub truth: Option<String>,
    pub dump_matrices: Option<String>,
    pub format: String,
}

impl RunConfig {
    fn tsv_header(&self, out: &mut String) {
        let value = serde_json::to_value(self).expect("plain struct serialises");
        let _ = writeln!(out, "# asm {}", self.command);
        if let serde_json::Value::Object(map) = value {
            for (k, v) in map {
                if v.is_null() || k == "command" {
                    continue;
                }
                let v = match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                };
                let _ = writeln!(out, "# {k}\t{v}");
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterRow {
    pub label: String,
    pub path: String,
    pub matrix: &'static str,
    pub wave: Option<usize>,
    pub status: &'static str,
    pub structural: bool,
    pub estimate: f64,
    pub se: Option<f64>,
    pub z: Option<f64>,
    pub p_value: Option<f64>,
    pub std_estimate: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub raw_ci_lower: Option<f64>,
    pub raw_ci_upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapSummary {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    pub n_failed: usize,
    pub withheld: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub run: RunConfig,
    pub model: InvarianceLevel,
    pub ingestion: Option<IngestionReport>,
    pub fit: FitIndices,
    pub cutoffs: CutoffCheck,
    pub convergence: Convergence,
    pub standard_errors: bool,
    pub parameters: Vec<ParameterRow>,
    pub r_squared: Vec<RSquared>,
    pub bootstrap: Option<BootstrapSummary>,
}

/// Assemble a fit report; bootstrap intervals, when given, are the
/// standardised ones at the bootstrap's own level.
pub fn fit_report(
    run: RunConfig,
    table: &ParameterTable,
    fit: &FitResult,
    indices: FitIndices,
    ingestion: Option<IngestionReport>,
    boot: Option<&BootstrapResult>,
) -> Result<FitReport> {
    let std = standardize(table, &fit.theta)?;
    let level = boot.map(|b| b.config.level).unwrap_or(0.99);
    let std_ci = boot.and_then(|b| b.std_intervals(level));
    let raw_ci = boot.and_then(|b| b.raw_intervals(level));
    let finite = |x: f64| x.is_finite().then_some(x);
    let parameters = table
        .entries
        .iter()
        .map(|e| {
            let estimate = table.value(e, &fit.theta);
            let se = match (e.slot, &fit.se) {
                (Some(s), Some(se)) => Some(se[s]),
                _ => None,
            };
            ParameterRow {
                label: table.label(e),
                path: table.path(e),
                matrix: e.target.name(),
                wave: e.wave,
                status: match e.status {
                    Status::Free => "free",
                    Status::Fixed(_) => "fixed",
                    Status::Equal(_) => "equal",
                },
                structural: e.target.is_structural(),
                estimate,
                se,
                z: se.map(|s| estimate / s),
                p_value: se.map(|s| wald_p(estimate, s)),
                std_estimate: std[e.id],
                ci_lower: std_ci.as_ref().and_then(|c| finite(c[e.id].0)),
                ci_upper: std_ci.as_ref().and_then(|c| finite(c[e.id].1)),
                raw_ci_lower: raw_ci.as_ref().map(|c| c[e.id].0),
                raw_ci_upper: raw_ci.as_ref().map(|c| c[e.id].1),
            }
        })
        .collect();
    Ok(FitReport {
        run,
        model: table.level,
        ingestion,
        cutoffs: indices.cutoffs(),
        fit: indices,
        convergence: fit.convergence.clone(),
        standard_errors: fit.se.is_some(),
        parameters,
        r_squared: r_squared(table, &fit.theta)?,
        bootstrap: boot.map(|b| BootstrapSummary {
            replicates: b.config.replicates,
            level: b.config.level,
            seed: b.config.seed,
            n_failed: b.failed.len(),
            withheld: b.withheld(),
        }),
    })
}

fn fit_table_header(out: &mut String) {
    out.push_str("model\tchi2\tdf\tcfi\trmsea (ci)\tsrmr\n");
}

fn fit_table_row(out: &mut String, level: InvarianceLevel, f: &FitIndices) {
    let _ = writeln!(
        out,
        "{}\t{}\t{}\t{}\t{} ({},{})\t{}",
        model_name(level),
        sig6(f.chi2),
        f.df,
        sig6(f.cfi),
        sig6(f.rmsea),
        sig6(f.rmsea_ci90.0),
        sig6(f.rmsea_ci90.1),
        sig6(f.srmr)
    );
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

fn convergence_tsv(out: &mut String, c: &Convergence) {
    let _ = writeln!(out, "converged\t{}", c.converged);
    let _ = writeln!(out, "iterations\t{}", c.iterations);
    let _ = writeln!(out, "max_gradient\t{}", sig6(c.max_gradient));
}

fn ingestion_tsv(out: &mut String, ing: &IngestionReport) {
    out.push_str("## ingestion\n");
    let _ = writeln!(out, "rows_read\t{}", ing.rows_read);
    let _ = writeln!(out, "rows_kept\t{}", ing.rows_kept);
    for (col, n) in &ing.missing_by_column {
        let _ = writeln!(out, "missing\t{col}\t{n}");
    }
}

impl FitReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        self.run.tsv_header(&mut out);
        if let Some(ing) = &self.ingestion {
            ingestion_tsv(&mut out, ing);
        }

        out.push_str("## fit\n");
        fit_table_header(&mut out);
        fit_table_row(&mut out, self.model, &self.fit);
        let _ = writeln!(out, "## cutoffs");
        let _ = writeln!(out, "cfi > {CFI_CUTOFF:.2}\t{}", pass(self.cutoffs.cfi));
        let _ = writeln!(out, "srmr < {SRMR_CUTOFF:.2}\t{}", pass(self.cutoffs.srmr));
        let _ = writeln!(out, "rmsea < {RMSEA_CUTOFF:.2}\t{}", pass(self.cutoffs.rmsea));

        out.push_str("## convergence\n");
        convergence_tsv(&mut out, &self.convergence);
        let _ = writeln!(out, "standard_errors\t{}", self.standard_errors);

        let level = self.bootstrap.as_ref().map_or(0.99, |b| b.level);
        let pct = format!("{}%", sig6(level * 100.0).trim_end_matches('0').trim_end_matches('.'));
        out.push_str("## structural\n");
        let _ = writeln!(out, "coefficient\tpath\testimate\tstandardized\t{pct} ci\tp_value");
        for p in self.parameters.iter().filter(|p| p.structural && p.status != "fixed") {
            let ci = match (p.ci_lower, p.ci_upper) {
                (Some(a), Some(b)) => format!("({}, {})", sig6(a), sig6(b)),
                _ => "-".into(),
            };
            let pv = match p.p_value {
                Some(v) if v < 0.001 => "<0.001".to_string(),
                Some(v) => sig6(v),
                None => "-".into(),
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{ci}\t{pv}",
                p.label,
                p.path,
                sig6(p.estimate),
                opt(p.std_estimate)
            );
        }

        out.push_str("## parameters\n");
        out.push_str(
            "label\tpath\tmatrix\twave\tstatus\testimate\tse\tz\tp_value\tstd_estimate\tci_lower\tci_upper\traw_ci_lower\traw_ci_upper\n",
        );
        for p in &self.parameters {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                p.label,
                p.path,
                p.matrix,
                p.wave.map_or("-".into(), |w| w.to_string()),
                p.status,
                sig6(p.estimate),
                opt(p.se),
                opt(p.z),
                opt(p.p_value),
                opt(p.std_estimate),
                opt(p.ci_lower),
                opt(p.ci_upper),
                opt(p.raw_ci_lower),
                opt(p.raw_ci_upper)
            );
        }

        out.push_str("## r_squared\nlatent\twave\tr2\n");
        for r in &self.r_squared {
            let _ = writeln!(out, "{}\t{}\t{}", r.latent, r.wave, sig6(r.value));
        }

        if let Some(b) = &self.bootstrap {
            out.push_str("## bootstrap\n");
            let _ = writeln!(out, "replicates\t{}", b.replicates);
            let _ = writeln!(out, "level\t{}", sig6(b.level));
            let _ = writeln!(out, "seed\t{}", b.seed);
            let _ = writeln!(out, "n_failed\t{}", b.n_failed);
            let _ = writeln!(out, "withheld\t{}", b.withheld);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderModel {
    pub model: InvarianceLevel,
    pub fit: FitIndices,
    pub convergence: Convergence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderReport {
    pub run: RunConfig,
    pub ingestion: Option<IngestionReport>,
    pub models: Vec<LadderModel>,
    pub comparison: InvarianceComparison,
    pub warnings: Vec<String>,
}

impl LadderReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        self.run.tsv_header(&mut out);
        for w in &self.warnings {
            let _ = writeln!(out, "# warning\t{w}");
        }
        if let Some(ing) = &self.ingestion {
            ingestion_tsv(&mut out, ing);
        }
        out.push_str("## fit\n");
        fit_table_header(&mut out);
        for m in &self.models {
            fit_table_row(&mut out, m.model, &m.fit);
        }
        out.push_str("## comparison\nfrom\tto\tdelta_chi2\tdelta_df\tdelta_cfi\tretained\n");
        for s in &self.comparison.steps {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                s.from,
                s.to,
                sig6(s.delta_chi2),
                s.delta_df,
                sig6(s.delta_cfi),
                s.retained
            );
        }
        let _ = writeln!(out, "selected\t{}", self.comparison.selected);
        out.push_str("## convergence\nmodel\tconverged\titerations\tmax_gradient\n");
        for m in &self.models {
            let c = &m.convergence;
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                m.model,
                c.converged,
                c.iterations,
                sig6(c.max_gradient)
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(8748.5), "8748.50");
        assert_eq!(sig6(0.0287194), "0.0287194");
        assert_eq!(sig6(-0.105), "-0.105000");
        assert_eq!(sig6(1044.0), "1044.00");
        assert_eq!(sig6(1234567.0), "1234567");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(3.2e-7), "3.20000e-7");
        assert_eq!(sig6(f64::NAN), "NA");
    }
}
