//! Fit the reference model to a simulated sample and print the report.
//!
//! cargo run --release --example fit_reference -- [N] [SEED]

use asm::estimate::fit;
use asm::metrics::fit_indices;
use asm::params::build_parameter_table;
use asm::reference::{reference_spec, reference_truth};
use asm::report::{fit_report, RunConfig};
use asm::simulate::{simulate_moments, GeneratorConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(2000), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(7), |s| s.parse())?;

    let spec = reference_spec();
    let table = build_parameter_table(&spec, spec.invariance.level)?;
    let truth = reference_truth(&table)?;
    let moments = simulate_moments(&GeneratorConfig::from_theta(&table, &truth, n, seed)?)?;

    let result = fit(&table, &moments)?;
    result.ensure_converged()?;
    let indices = fit_indices(&table, &result, &moments)?;
    let run = RunConfig {
        command: "fit".into(),
        spec: "reference".into(),
        n: Some(n),
        seed: Some(seed),
        ..RunConfig::default()
    };
    print!("{}", fit_report(run, &table, &result, indices, None, None)?.to_tsv());
    Ok(())
}
