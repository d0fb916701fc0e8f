//! Percentile bootstrap intervals for a small two-wave model.
//!
//! cargo run --release --example bootstrap_ci -- [REPLICATES] [THREADS]

use asm::bootstrap::{bootstrap_ci, BootstrapConfig};
use asm::params::build_parameter_table;
use asm::simulate::{simulate_dataset, GeneratorConfig};
use asm::spec::parse_model_spec;

const SPEC: &str = "\
latent X by x1 x2 x3
latent Y by y1 y2 y3
path X -> Y
waves 2
ar 1
invariance strong
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let replicates: usize = args.next().map_or(Ok(200), |s| s.parse())?;
    let threads: usize = args.next().map_or(Ok(4), |s| s.parse())?;

    let spec = parse_model_spec(SPEC)?;
    let table = build_parameter_table(&spec, spec.invariance.level)?;
    let mut truth = table.start_theta();
    for e in table.entries.iter().filter(|e| e.target.is_structural()) {
        if let Some(slot) = e.slot {
            truth[slot] = 0.4;
        }
    }
    let data = simulate_dataset(&GeneratorConfig::from_theta(&table, &truth, 500, 3)?)?;

    let cfg = BootstrapConfig {
        replicates,
        level: 0.95,
        seed: 5,
        parallel_width: threads,
    };
    let boot = bootstrap_ci(&data, &table, &cfg)?;
    println!("{} of {} replicates failed", boot.failed.len(), replicates);
    let Some(raw) = boot.raw_intervals(cfg.level) else {
        println!("intervals withheld");
        return Ok(());
    };
    for (e, (lo, hi)) in table.entries.iter().zip(raw) {
        if e.target.is_structural() {
            println!(
                "{:<24} {:>9.4} [{:.4}, {:.4}]",
                table.path(e),
                table.value(e, &boot.theta),
                lo,
                hi
            );
        }
    }
    Ok(())
}
