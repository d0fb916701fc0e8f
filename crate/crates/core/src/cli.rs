//! The `asm` command line.
//!
//! Exit codes: 0 success, 1 usage or other failure, 2 data ingestion,
//! 3 identification, 4 non-convergence.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::bootstrap::{bootstrap_ci, BootstrapConfig};
use crate::data::{load_panel_csv, parse_truth_tsv, require_rows, write_panel_csv, IngestionReport};
use crate::error::AsmError;
use crate::estimate::{fit_with, FitOptions, FitResult};
use crate::metrics::{compare_invariance, fit_indices};
use crate::moments::SampleMoments;
use crate::params::{build_parameter_table, matrices_tsv, theta_to_matrices, ParameterTable};
use crate::report::{fit_report, LadderModel, LadderReport, RunConfig};
use crate::simulate::{simulate_dataset, GeneratorConfig};
use crate::spec::{parse_model_spec, validate_template, InvarianceLevel, ModelSpec};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_INGESTION: i32 = 2;
pub const EXIT_IDENTIFICATION: i32 = 3;
pub const EXIT_CONVERGENCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "asm", version, about = "Autoregressive structural models for panel data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one model and report estimates and fit indices.
    Fit(FitArgs),
    /// Fit configural, weak and strong models and compare them.
    Ladder(LadderArgs),
    /// Draw a panel dataset from a model at given parameter values.
    Simulate(SimulateArgs),
    /// Fit and add percentile bootstrap intervals.
    Bootstrap(BootstrapArgs),
    /// Print the parameter table and model matrices without fitting.
    Dump(DumpArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Format {
    Tsv,
    Json,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Tsv => "tsv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Level {
    Configural,
    Weak,
    Strong,
}

impl From<Level> for InvarianceLevel {
    fn from(l: Level) -> Self {
        match l {
            Level::Configural => InvarianceLevel::Configural,
            Level::Weak => InvarianceLevel::Weak,
            Level::Strong => InvarianceLevel::Strong,
        }
    }
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Panel CSV with one row per subject.
    #[arg(long)]
    data: PathBuf,
    /// Model specification file.
    #[arg(long)]
    spec: PathBuf,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tsv")]
    format: Format,
    /// Invariance level to fit; defaults to the one in the spec.
    #[arg(long, value_enum)]
    model: Option<Level>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Also write the fitted matrices as TSV blocks.
    #[arg(long)]
    dump_matrices: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LadderArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tsv")]
    format: Format,
}

#[derive(Debug, Args)]
struct BootstrapArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1000)]
    replicates: usize,
    /// Interval coverage.
    #[arg(long, default_value_t = 0.99)]
    level: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads; defaults to ASM_THREADS, then the machine's core count.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Key/value file with any of: spec, truth, n, seed, out, model.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Parameter values, one `label<TAB>value` line per free parameter.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<Level>,
}

#[derive(Debug, Args)]
struct DumpArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, value_enum)]
    model: Option<Level>,
    /// Evaluate the matrices at these values instead of the defaults.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    spec: Option<PathBuf>,
    truth: Option<PathBuf>,
    n: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    model: Option<String>,
}

/// An error with the exit code it maps to.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

fn code_for(err: &AsmError) -> i32 {
    match err {
        AsmError::Identification(_)
        | AsmError::Underidentified { .. }
        | AsmError::FixedConflict { .. }
        | AsmError::Triangularity { .. } => EXIT_IDENTIFICATION,
        AsmError::NotConverged { .. } => EXIT_CONVERGENCE,
        _ => EXIT_OTHER,
    }
}

fn fail(context: &str) -> impl Fn(AsmError) -> Failure + '_ {
    move |e| Failure::new(code_for(&e), format!("{context}: {e}"))
}

fn ingestion(context: &str) -> impl Fn(AsmError) -> Failure + '_ {
    move |e| Failure::new(EXIT_INGESTION, format!("{context}: {e}"))
}

type Outcome = std::result::Result<i32, Failure>;

/// Run the CLI on `args` (including the program name).
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { EXIT_OTHER } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a, stdout, stderr),
        Command::Ladder(a) => cmd_ladder(a, stdout, stderr),
        Command::Simulate(a) => cmd_simulate(a, stdout),
        Command::Bootstrap(a) => cmd_bootstrap(a, stdout, stderr),
        Command::Dump(a) => cmd_dump(a, stdout),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn read_spec(path: &Path) -> std::result::Result<ModelSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::new(EXIT_OTHER, format!("{}: {e}", path.display())))?;
    let spec = parse_model_spec(&text).map_err(|e| Failure::new(EXIT_OTHER, format!("{}:{e}", path.display())))?;
    let diags = validate_template(&spec);
    if !diags.is_empty() {
        let lines: Vec<String> = diags
            .iter()
            .map(|d| match d.position {
                Some((l, c)) => format!("{}:{l}:{c}: {}", path.display(), d.message),
                None => format!("{}: {}", path.display(), d.message),
            })
            .collect();
        return Err(Failure::new(EXIT_IDENTIFICATION, lines.join("\n")));
    }
    Ok(spec)
}

fn table_for(spec: &ModelSpec, level: Option<Level>) -> std::result::Result<ParameterTable, Failure> {
    let level = level.map_or(spec.invariance.level, InvarianceLevel::from);
    build_parameter_table(spec, level).map_err(fail("model"))
}

fn load(
    path: &Path,
    spec: &ModelSpec,
    table: &ParameterTable,
) -> std::result::Result<(nalgebra::DMatrix<f64>, SampleMoments, IngestionReport), Failure> {
    let context = path.display().to_string();
    let (data, report) = load_panel_csv(path, spec).map_err(ingestion(&context))?;
    require_rows(&report, table).map_err(ingestion(&context))?;
    let moments = SampleMoments::from_data(&data).map_err(ingestion(&context))?;
    Ok((data, moments, report))
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::new(EXIT_OTHER, format!("{}: {e}", p.display()))),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Failure::new(EXIT_OTHER, e.to_string())),
    }
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn converged_code(fit: &FitResult, stderr: &mut dyn Write) -> i32 {
    if fit.convergence.converged {
        0
    } else {
        let _ = writeln!(stderr, "error: {}", fit.ensure_converged().unwrap_err());
        EXIT_CONVERGENCE
    }
}

fn cmd_fit(a: FitArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Outcome {
    let m = &a.model;
    let spec = read_spec(&m.spec)?;
    let table = table_for(&spec, m.model)?;
    let (_, moments, ingestion) = load(&m.data, &spec, &table)?;
    let fit = fit_with(&table, &moments, &FitOptions::default()).map_err(fail("fit"))?;
    let indices = fit_indices(&table, &fit, &moments).map_err(fail("fit indices"))?;
    let run = RunConfig {
        command: "fit".into(),
        spec: show(&m.spec),
        data: Some(show(&m.data)),
        out: m.out.as_deref().map(show),
        model: Some(table.level.to_string()),
        dump_matrices: a.dump_matrices.as_deref().map(show),
        format: m.format.name().into(),
        ..RunConfig::default()
    };
    let report = fit_report(run, &table, &fit, indices, Some(ingestion), None).map_err(fail("report"))?;
    let text = match m.format {
        Format::Tsv => report.to_tsv(),
        Format::Json => report.to_json(),
    };
    emit(m.out.as_deref(), &text, stdout)?;
    if let Some(path) = &a.dump_matrices {
        let mats = theta_to_matrices(&table, &fit.theta).map_err(fail("matrices"))?;
        fs::write(path, matrices_tsv(&mats))
            .map_err(|e| Failure::new(EXIT_OTHER, format!("{}: {e}", path.display())))?;
    }
    Ok(converged_code(&fit, stderr))
}

fn cmd_ladder(a: LadderArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Outcome {
    let spec = read_spec(&a.spec)?;
    let mut warnings = Vec::new();
    let levels: &[InvarianceLevel] = if spec.waves < 2 {
        warnings.push("single-wave model: only the configural model is fitted".to_string());
        &[InvarianceLevel::Configural]
    } else {
        &[
            InvarianceLevel::Configural,
            InvarianceLevel::Weak,
            InvarianceLevel::Strong,
        ]
    };
    for w in &warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
    let first = build_parameter_table(&spec, levels[0]).map_err(fail("configural model"))?;
    let (_, moments, ingestion) = load(&a.data, &spec, &first)?;

    let mut models = Vec::new();
    let mut ladder = Vec::new();
    let mut previous: Option<(ParameterTable, Vec<f64>)> = None;
    let mut code = 0;
    for &level in levels {
        let name = level.to_string();
        let table = build_parameter_table(&spec, level).map_err(fail(&name))?;
        let start = match &previous {
            Some((t, theta)) => {
                let mats = theta_to_matrices(t, theta).map_err(fail(&name))?;
                Some(table.theta_from_matrices(&mats))
            }
            None => None,
        };
        let opts = FitOptions {
            start,
            standard_errors: false,
            ..FitOptions::default()
        };
        let fit = fit_with(&table, &moments, &opts).map_err(fail(&name))?;
        if !fit.convergence.converged {
            let _ = writeln!(stderr, "error: {name}: {}", fit.ensure_converged().unwrap_err());
            code = EXIT_CONVERGENCE;
        }
        let indices = fit_indices(&table, &fit, &moments).map_err(fail(&name))?;
        ladder.push((level, indices.clone()));
        models.push(LadderModel {
            model: level,
            fit: indices,
            convergence: fit.convergence.clone(),
        });
        previous = Some((table, fit.theta));
    }
    let comparison = compare_invariance(&ladder).map_err(fail("comparison"))?;
    let report = LadderReport {
        run: RunConfig {
            command: "ladder".into(),
            spec: show(&a.spec),
            data: Some(show(&a.data)),
            out: a.out.as_deref().map(show),
            format: a.format.name().into(),
            ..RunConfig::default()
        },
        ingestion: Some(ingestion),
        models,
        comparison,
        warnings,
    };
    let text = match a.format {
        Format::Tsv => report.to_tsv(),
        Format::Json => report.to_json(),
    };
    emit(a.out.as_deref(), &text, stdout)?;
    Ok(code)
}

fn parse_level(s: &str) -> std::result::Result<Level, Failure> {
    Level::from_str(s, true).map_err(|_| Failure::new(EXIT_OTHER, format!("unknown model level `{s}`")))
}

fn cmd_simulate(a: SimulateArgs, stdout: &mut dyn Write) -> Outcome {
    let (cfg, base) = match &a.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| Failure::new(EXIT_OTHER, format!("{}: {e}", path.display())))?;
            let cfg: SimulateConfig =
                toml::from_str(&text).map_err(|e| Failure::new(EXIT_OTHER, format!("{}: {e}", path.display())))?;
            (cfg, path.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (SimulateConfig::default(), PathBuf::new()),
    };
    let rel = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
    let spec_path = a
        .spec
        .or_else(|| cfg.spec.map(rel))
        .ok_or_else(|| Failure::new(EXIT_OTHER, "simulate needs --spec"))?;
    let truth_path = a
        .truth
        .or_else(|| cfg.truth.map(rel))
        .ok_or_else(|| Failure::new(EXIT_OTHER, "simulate needs --truth"))?;
    let n =
        a.n.or(cfg.n)
            .ok_or_else(|| Failure::new(EXIT_OTHER, "simulate needs --n"))?;
    let seed = a.seed.or(cfg.seed).unwrap_or(1);
    let out = a.out.or_else(|| cfg.out.map(rel));
    let level = match (a.model, &cfg.model) {
        (Some(l), _) => Some(l),
        (None, Some(s)) => Some(parse_level(s)?),
        (None, None) => None,
    };

    let spec = read_spec(&spec_path)?;
    let table = table_for(&spec, level)?;
    let text = fs::read_to_string(&truth_path)
        .map_err(|e| Failure::new(EXIT_OTHER, format!("{}: {e}", truth_path.display())))?;
    let truth = parse_truth_tsv(&table, &text).map_err(fail(&show(&truth_path)))?;
    let gen = GeneratorConfig::from_theta(&table, &truth, n, seed).map_err(fail("truth"))?;
    let data = simulate_dataset(&gen).map_err(fail("simulate"))?;
    let mut buf = Vec::new();
    write_panel_csv(&mut buf, &spec.observed_names(), &data).map_err(fail("csv"))?;
    let text = String::from_utf8(buf).expect("csv output is utf-8");
    emit(out.as_deref(), &text, stdout)?;
    Ok(0)
}

fn threads(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var("ASM_THREADS").ok()?.parse().ok())
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
        .max(1)
}

fn cmd_bootstrap(a: BootstrapArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Outcome {
    let m = &a.model;
    let spec = read_spec(&m.spec)?;
    let table = table_for(&spec, m.model)?;
    let (data, moments, ingestion) = load(&m.data, &spec, &table)?;
    let fit = fit_with(&table, &moments, &FitOptions::default()).map_err(fail("fit"))?;
    if !fit.convergence.converged {
        return Err(Failure::new(
            EXIT_CONVERGENCE,
            format!("fit: {}", fit.ensure_converged().unwrap_err()),
        ));
    }
    let cfg = BootstrapConfig {
        replicates: a.replicates,
        level: a.level,
        seed: a.seed,
        parallel_width: threads(a.threads),
    };
    let boot = bootstrap_ci(&data, &table, &cfg).map_err(fail("bootstrap"))?;
    if boot.withheld() {
        let _ = writeln!(
            stderr,
            "warning: {} of {} replicates failed; intervals withheld",
            boot.failed.len(),
            cfg.replicates
        );
    }
    let indices = fit_indices(&table, &fit, &moments).map_err(fail("fit indices"))?;
    let run = RunConfig {
        command: "bootstrap".into(),
        spec: show(&m.spec),
        data: Some(show(&m.data)),
        out: m.out.as_deref().map(show),
        model: Some(table.level.to_string()),
        seed: Some(a.seed),
        replicates: Some(a.replicates),
        level: Some(a.level),
        format: m.format.name().into(),
        ..RunConfig::default()
    };
    let report = fit_report(run, &table, &fit, indices, Some(ingestion), Some(&boot)).map_err(fail("report"))?;
    let text = match m.format {
        Format::Tsv => report.to_tsv(),
        Format::Json => report.to_json(),
    };
    emit(m.out.as_deref(), &text, stdout)?;
    Ok(0)
}

fn cmd_dump(a: DumpArgs, stdout: &mut dyn Write) -> Outcome {
    let spec = read_spec(&a.spec)?;
    let table = table_for(&spec, a.model)?;
    let theta = match &a.truth {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::new(EXIT_OTHER, format!("{}: {e}", p.display())))?;
            parse_truth_tsv(&table, &text).map_err(fail(&show(p)))?
        }
        None => table.start_theta(),
    };
    let mats = theta_to_matrices(&table, &theta).map_err(fail("matrices"))?;
    let mut text = format!(
        "# asm dump\n# spec\t{}\n# model\t{}\n# free\t{}\n# df\t{}\n",
        show(&a.spec),
        table.level,
        table.free_count,
        crate::estimate::degrees_of_freedom(&table)
    );
    text.push_str(&table.to_tsv());
    text.push_str(&matrices_tsv(&mats));
    emit(a.out.as_deref(), &text, stdout)?;
    Ok(0)
}
