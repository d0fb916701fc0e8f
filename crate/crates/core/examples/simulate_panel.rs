//! Draw a panel dataset from the reference model at its truth values and
//! write the CSV plus the truth TSV that `asm simulate --truth` reads.
//!
//! cargo run --release --example simulate_panel -- [OUT_DIR] [N] [SEED]

use std::fs;
use std::path::PathBuf;

use asm::data::{truth_tsv, write_panel_csv};
use asm::params::build_parameter_table;
use asm::reference::{reference_spec, reference_truth, REFERENCE_MODEL};
use asm::simulate::{simulate_dataset, GeneratorConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/asm-demo".into()));
    let n: usize = args.next().map_or(Ok(2000), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse())?;

    let spec = reference_spec();
    let table = build_parameter_table(&spec, spec.invariance.level)?;
    let truth = reference_truth(&table)?;
    let data = simulate_dataset(&GeneratorConfig::from_theta(&table, &truth, n, seed)?)?;

    fs::create_dir_all(&out)?;
    fs::write(out.join("reference.asm"), REFERENCE_MODEL)?;
    fs::write(out.join("truth.tsv"), truth_tsv(&table, &truth))?;
    write_panel_csv(fs::File::create(out.join("panel.csv"))?, &spec.observed_names(), &data)?;

    println!(
        "{} rows x {} columns, {} free parameters",
        data.nrows(),
        data.ncols(),
        table.free_count
    );
    println!("wrote {}", out.display());
    Ok(())
}
