//! Parse a model specification, report diagnostics and print the
//! parameter table at each invariance level.
//!
//! cargo run --example parse_spec -- [SPEC]

use asm::estimate::degrees_of_freedom;
use asm::params::build_parameter_table;
use asm::spec::{parse_model_spec, validate_template, InvarianceLevel};

const DEMO: &str = "\
latent F by y1 y2 y3
waves 3
ar 1
invariance strong
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => DEMO.to_string(),
    };
    let spec = match parse_model_spec(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("parse error at {e}");
            std::process::exit(1);
        }
    };
    let diagnostics = validate_template(&spec);
    for d in &diagnostics {
        eprintln!("{}", d.message);
    }
    if !diagnostics.is_empty() {
        std::process::exit(3);
    }

    println!("observed: {}", spec.observed_names().join(" "));
    for level in [
        InvarianceLevel::Configural,
        InvarianceLevel::Weak,
        InvarianceLevel::Strong,
    ] {
        let table = build_parameter_table(&spec, level)?;
        println!(
            "\n# {level}: {} free, df {}",
            table.free_count,
            degrees_of_freedom(&table)
        );
        print!("{}", table.to_tsv());
    }
    Ok(())
}
