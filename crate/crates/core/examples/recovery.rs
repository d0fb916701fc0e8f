//! Parameter recovery: simulate many samples at the reference truth, refit
//! each, and report bias and Wald coverage.
//!
//! cargo run --release --example recovery -- [N] [REPLICATES]

use asm::params::build_parameter_table;
use asm::reference::{reference_spec, reference_truth};
use asm::simulate::recovery_experiment;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(2000), |s| s.parse())?;
    let replicates: usize = args.next().map_or(Ok(50), |s| s.parse())?;

    let spec = reference_spec();
    let table = build_parameter_table(&spec, spec.invariance.level)?;
    let truth = reference_truth(&table)?;
    let report = recovery_experiment(&table, &truth, n, replicates, 42, 0.99)?;

    println!("{} of {} replicates converged", report.converged, report.replicates);
    for s in &report.structural {
        println!(
            "{:<28} truth {:>7.3}  mean {:>7.3}  bias {:>+.4}",
            s.path, s.truth, s.mean_estimate, s.bias
        );
    }
    println!("mean |standardised bias|: {:.4}", report.mean_abs_structural_bias());
    println!("pooled 99% Wald coverage: {:.3}", report.pooled_coverage());
    Ok(())
}
