//! Panel CSV ingestion and output, and truth files for the simulator.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{AsmError, Result};
use crate::params::ParameterTable;
use crate::spec::ModelSpec;

/// Cells treated as missing.
const MISSING: [&str; 3] = ["", "NA", "."];

/// Minimum complete rows per free parameter.
pub const ROWS_PER_PARAMETER: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestionReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    /// Modeled columns with at least one missing cell, with their counts.
    pub missing_by_column: Vec<(String, usize)>,
}

/// Read the modeled columns of a panel CSV, dropping any row with a missing
/// modeled cell. Columns come back in the spec's observed order.
pub fn load_panel_csv(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<(DMatrix<f64>, IngestionReport)> {
    let file = File::open(path.as_ref())?;
    read_panel_csv(file, spec)
}

pub fn read_panel_csv<R: Read>(reader: R, spec: &ModelSpec) -> Result<(DMatrix<f64>, IngestionReport)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() {
        return Err(AsmError::Data("empty file".into()));
    }
    let names = spec.observed_names();
    let mut index = Vec::with_capacity(names.len());
    for name in &names {
        match header.iter().position(|h| h == name) {
            Some(i) => index.push(i),
            None => return Err(AsmError::Data(format!("missing required column `{name}`"))),
        }
    }

    let mut values = Vec::new();
    let mut missing = vec![0usize; names.len()];
    let mut read = 0;
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        read += 1;
        let mut row = Vec::with_capacity(names.len());
        let mut complete = true;
        for (j, &i) in index.iter().enumerate() {
            let cell = record.get(i).unwrap_or("");
            if MISSING.contains(&cell) {
                missing[j] += 1;
                complete = false;
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                AsmError::Data(format!(
                    "non-numeric value `{cell}` in column `{}` at line {}",
                    names[j],
                    line + 2
                ))
            })?;
            row.push(v);
        }
        if complete {
            values.extend(row);
        }
    }
    if read == 0 {
        return Err(AsmError::Data("file has a header but no rows".into()));
    }
    let kept = values.len() / names.len();
    let report = IngestionReport {
        rows_read: read,
        rows_kept: kept,
        missing_by_column: names
            .iter()
            .zip(&missing)
            .filter(|(_, &c)| c > 0)
            .map(|(n, &c)| (n.clone(), c))
            .collect(),
    };
    Ok((DMatrix::from_row_slice(kept, names.len(), &values), report))
}

/// Refuse samples smaller than [`ROWS_PER_PARAMETER`] rows per free parameter.
pub fn require_rows(report: &IngestionReport, table: &ParameterTable) -> Result<()> {
    let need = ROWS_PER_PARAMETER * table.free_count;
    if report.rows_kept < need {
        return Err(AsmError::Data(format!(
            "{} complete rows kept of {} read; the model needs at least {need}",
            report.rows_kept, report.rows_read
        )));
    }
    Ok(())
}

/// Write a header and one row per subject. Values use the shortest
/// representation that parses back to the same bits.
pub fn write_panel_csv<W: Write>(writer: W, names: &[String], data: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(names)?;
    let mut row = Vec::with_capacity(data.ncols());
    for r in 0..data.nrows() {
        row.clear();
        row.extend((0..data.ncols()).map(|c| format!("{}", data[(r, c)])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `label<TAB>value` lines, one per free slot.
pub fn truth_tsv(table: &ParameterTable, theta: &[f64]) -> String {
    let mut out = String::from("label\tvalue\n");
    for (s, v) in theta.iter().enumerate() {
        let e = &table.entries[table.slot_members(s)[0]];
        out.push_str(&format!("{}\t{}\n", table.label(e), v));
    }
    out
}

/// Parse a truth file. Any member label of an equality class sets its slot;
/// every slot must be set exactly once.
pub fn parse_truth_tsv(table: &ParameterTable, text: &str) -> Result<Vec<f64>> {
    let mut theta: Vec<Option<f64>> = vec![None; table.free_count];
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (n == 0 && line.starts_with("label")) {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(label), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(AsmError::Data(format!("line {}: expected `label<TAB>value`", n + 1)));
        };
        let entry = table
            .find(label.trim())
            .ok_or_else(|| AsmError::Data(format!("line {}: unknown parameter `{label}`", n + 1)))?;
        let slot = entry
            .slot
            .ok_or_else(|| AsmError::Data(format!("line {}: `{label}` is fixed by the model", n + 1)))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| AsmError::Data(format!("line {}: bad value `{value}`", n + 1)))?;
        if theta[slot].replace(v).is_some() {
            return Err(AsmError::Data(format!("line {}: `{label}` set twice", n + 1)));
        }
    }
    theta
        .iter()
        .enumerate()
        .map(|(s, v)| {
            v.ok_or_else(|| {
                let e = &table.entries[table.slot_members(s)[0]];
                AsmError::Data(format!("no value for `{}`", table.label(e)))
            })
        })
        .collect()
}
