//! Fit configural, weak and strong models to one sample and apply the
//! change-in-CFI rule. Pass a loading shift to break weak invariance.
//!
//! cargo run --release --example invariance_ladder -- [SHIFT] [N] [SEED]

use asm::estimate::{fit_with, FitOptions};
use asm::metrics::{compare_invariance, fit_indices};
use asm::params::{build_parameter_table, theta_to_matrices, Matrix};
use asm::reference::{reference_matrices, reference_spec};
use asm::simulate::{simulate_moments, GeneratorConfig};
use asm::spec::InvarianceLevel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let shift: f64 = args.next().map_or(Ok(0.0), |s| s.parse())?;
    let n: usize = args.next().map_or(Ok(2000), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(11), |s| s.parse())?;

    let spec = reference_spec();
    let configural = build_parameter_table(&spec, InvarianceLevel::Configural)?;
    let mut truth = reference_matrices(&configural)?;
    // Move wave-1 non-marker loadings away from the later waves.
    for e in configural
        .entries
        .iter()
        .filter(|e| e.target == Matrix::Lambda && e.wave == Some(1))
    {
        if e.slot.is_some() {
            truth.lambda[(e.row, e.col)] += shift;
        }
    }
    let moments = simulate_moments(&GeneratorConfig {
        matrices: truth,
        n,
        seed,
    })?;

    let mut ladder = Vec::new();
    let mut previous: Option<(asm::params::ParameterTable, Vec<f64>)> = None;
    for level in [
        InvarianceLevel::Configural,
        InvarianceLevel::Weak,
        InvarianceLevel::Strong,
    ] {
        let table = build_parameter_table(&spec, level)?;
        let start = match &previous {
            Some((t, theta)) => Some(table.theta_from_matrices(&theta_to_matrices(t, theta)?)),
            None => None,
        };
        let opts = FitOptions {
            start,
            standard_errors: false,
            ..FitOptions::default()
        };
        let fit = fit_with(&table, &moments, &opts)?;
        let indices = fit_indices(&table, &fit, &moments)?;
        println!(
            "{:<10} chi2 {:>10.2}  df {:>5}  cfi {:.4}  rmsea {:.4}  srmr {:.4}",
            level.name(),
            indices.chi2,
            indices.df,
            indices.cfi,
            indices.rmsea,
            indices.srmr
        );
        ladder.push((level, indices));
        previous = Some((table, fit.theta));
    }
    let comparison = compare_invariance(&ladder)?;
    for s in &comparison.steps {
        println!(
            "{} -> {}: delta chi2 {:.2} on {} df, delta cfi {:.4}, {}",
            s.from,
            s.to,
            s.delta_chi2,
            s.delta_df,
            s.delta_cfi,
            if s.retained { "retained" } else { "rejected" }
        );
    }
    println!("selected: {}", comparison.selected);
    Ok(())
}
