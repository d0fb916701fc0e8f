//! Acceptance suite. Prints one line per criterion and exits nonzero when
//! any criterion fails.

use std::fs;
use std::time::{Duration, Instant};

use asm::cli;
use asm::data::{truth_tsv, write_panel_csv};
use asm::discrepancy::fml_discrepancy;
use asm::estimate::{discrepancy, fit_with, gradient, FitOptions};
use asm::matrices::implied_covariance;
use asm::metrics::{compare_invariance, fit_indices, rmsea, FitIndices, DELTA_CFI};
use asm::moments::SampleMoments;
use asm::params::{build_parameter_table, Matrix, ParameterTable};
use asm::reference::{reference_matrices, reference_spec, reference_truth, REFERENCE_MODEL};
use asm::simulate::{recovery_experiment, simulate_dataset, simulate_moments, GeneratorConfig};
use asm::spec::{parse_model_spec, InvarianceLevel, ModelSpec};
use nalgebra::{dmatrix, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const ANCHOR_BUDGET: Duration = Duration::from_secs(1);
const RMSEA_TABLE1: &str = "0.029";
const DELTA_CFI_SECTION: f64 = 0.003;
const FML_TOL: f64 = 1e-12;
const DF_WEAK_DELTA: usize = 22;
const DF_STRONG_DELTA: usize = 16;
const ORACLE_MODELS: usize = 50;
const ORACLE_ROWS: usize = 1_000_000;
const ORACLE_TOL: f64 = 0.01;
const ORACLE_BUDGET: Duration = Duration::from_secs(120);
const GRADIENT_POINTS: usize = 20;
const GRADIENT_TOL: f64 = 1e-4;
/// Floor on the magnitude used to scale gradient differences.
const GRADIENT_FLOOR: f64 = 1e-3;
const RECOVERY_N: usize = 2000;
const RECOVERY_REPLICATES: usize = 200;
const RECOVERY_BIAS_TOL: f64 = 0.02;
const COVERAGE_RANGE: (f64, f64) = (0.97, 1.0);
const RECOVERY_BUDGET: Duration = Duration::from_secs(600);
const NESTING_DATASETS: usize = 20;
/// Slack on chi-square ordering from finite optimiser precision.
const NESTING_SLACK: f64 = 1e-3;
const POWER_REPLICATES: usize = 100;
const POWER_SHIFT: f64 = 0.5;
const POWER_REQUIRED: usize = 95;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn no_se() -> FitOptions {
    FitOptions {
        standard_errors: false,
        ..FitOptions::default()
    }
}

fn ladder_levels(spec: &ModelSpec) -> Vec<ParameterTable> {
    [
        InvarianceLevel::Configural,
        InvarianceLevel::Weak,
        InvarianceLevel::Strong,
    ]
    .into_iter()
    .map(|l| build_parameter_table(spec, l).unwrap())
    .collect()
}

fn formula_anchors() -> Outcome {
    let start = Instant::now();
    let r = rmsea(8748.5, 1044, 8959).point;
    let blank = |cfi| FitIndices {
        chi2: 0.0,
        df: 0,
        p_value: 0.0,
        cfi,
        srmr: 0.0,
        rmsea: 0.0,
        rmsea_ci90: (0.0, 0.0),
        n: 0,
        chi2_null: 0.0,
        df_null: 0,
    };
    let step = compare_invariance(&[
        (InvarianceLevel::Configural, blank(0.943)),
        (InvarianceLevel::Weak, blank(0.940)),
    ])
    .map_err(|e| e.to_string())?;
    let delta = step.steps[0].delta_cfi;
    let zero = fml_discrepancy(&DMatrix::identity(3, 3), &DMatrix::identity(3, 3), None).unwrap();
    let half = fml_discrepancy(&dmatrix![2.0, 0.0; 0.0, 1.0], &DMatrix::identity(2, 2), None).unwrap();
    let elapsed = start.elapsed();
    check(
        format!("{r:.3}") == RMSEA_TABLE1
            && (delta - DELTA_CFI_SECTION).abs() < 1e-12
            && step.steps[0].retained
            && zero == 0.0
            && (half - (1.0 - 2f64.ln())).abs() < FML_TOL
            && elapsed < ANCHOR_BUDGET,
        format!("rmsea {r:.4}, delta cfi {delta:.4}, fml {zero} / {half:.6}, {elapsed:.2?}"),
    )
}

fn df_deltas() -> Outcome {
    let t = ladder_levels(&reference_spec());
    let (a, b) = (t[0].free_count - t[1].free_count, t[1].free_count - t[2].free_count);
    check(
        a == DF_WEAK_DELTA && b == DF_STRONG_DELTA,
        format!("configural-weak {a}, weak-strong {b}"),
    )
}

fn perturbed_truth(table: &ParameterTable, base: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut theta = base.to_vec();
    for slot in 0..table.free_count {
        let e = &table.entries[table.slot_members(slot)[0]];
        theta[slot] = match e.target {
            Matrix::Lambda => base[slot] * rng.gen_range(0.85..1.15),
            Matrix::Beta | Matrix::Pi | Matrix::C => base[slot] + rng.gen_range(-0.08..0.08),
            Matrix::Psi | Matrix::Theta if e.row == e.col => base[slot] * rng.gen_range(0.8..1.2),
            Matrix::Psi | Matrix::Theta => base[slot] + rng.gen_range(-0.05..0.05),
            Matrix::Mu | Matrix::Alpha => base[slot] + rng.gen_range(-0.5..0.5),
        };
    }
    theta
}

/// Rescale observed variables to unit implied variance.
fn unit_scale(cfg: &mut GeneratorConfig) {
    let sigma = implied_covariance(&cfg.matrices).unwrap();
    let d: Vec<f64> = (0..sigma.nrows()).map(|i| 1.0 / sigma[(i, i)].sqrt()).collect();
    let m = &mut cfg.matrices;
    for i in 0..d.len() {
        m.mu[i] *= d[i];
        m.lambda.row_mut(i).scale_mut(d[i]);
        for j in 0..d.len() {
            m.theta[(i, j)] *= d[i] * d[j];
        }
    }
}

fn implied_moment_oracle() -> Outcome {
    let spec = reference_spec();
    let table = build_parameter_table(&spec, InvarianceLevel::Strong).unwrap();
    let base = reference_truth(&table).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let thetas: Vec<Vec<f64>> = (0..ORACLE_MODELS)
        .map(|_| perturbed_truth(&table, &base, &mut rng))
        .collect();
    let start = Instant::now();
    let errors: Vec<Result<f64, String>> = thetas
        .par_iter()
        .enumerate()
        .map(|(model, theta)| {
            let mut cfg = GeneratorConfig::from_theta(&table, theta, ORACLE_ROWS, 1000 + model as u64)
                .map_err(|e| format!("model {model}: {e}"))?;
            unit_scale(&mut cfg);
            let sigma = implied_covariance(&cfg.matrices).unwrap();
            let m = simulate_moments(&cfg).map_err(|e| e.to_string())?;
            Ok((&m.cov - &sigma).abs().max())
        })
        .collect();
    let elapsed = start.elapsed();
    let mut worst: f64 = 0.0;
    for e in errors {
        worst = worst.max(e?);
    }
    check(
        worst < ORACLE_TOL && elapsed < ORACLE_BUDGET,
        format!("{ORACLE_MODELS} models x {ORACLE_ROWS} rows, max abs error {worst:.5}, {elapsed:.1?}"),
    )
}

fn gradient_shape(text: &str, level: InvarianceLevel, points: usize, seed: u64) -> Result<f64, String> {
    let spec = parse_model_spec(text).map_err(|e| e.to_string())?;
    let table = build_parameter_table(&spec, level).map_err(|e| e.to_string())?;
    let mut base = table.start_theta();
    for e in table.entries.iter().filter(|e| e.target.is_structural()) {
        if let Some(s) = e.slot {
            base[s] = 0.3;
        }
    }
    gradient_points(&table, &base, points, seed)
}

fn gradient_points(table: &ParameterTable, base: &[f64], points: usize, seed: u64) -> Result<f64, String> {
    let cfg = GeneratorConfig::from_theta(table, base, 500, seed).map_err(|e| e.to_string())?;
    let moments: SampleMoments = simulate_moments(&cfg).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let theta = perturbed_truth(table, base, &mut rng);
        let g = gradient(table, &theta, &moments).map_err(|e| e.to_string())?;
        for k in 0..theta.len() {
            let h = 1e-6 * theta[k].abs().max(1.0);
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[k] += h;
            down[k] -= h;
            let fd =
                (discrepancy(table, &up, &moments).unwrap() - discrepancy(table, &down, &moments).unwrap()) / (2.0 * h);
            worst = worst.max((g[k] - fd).abs() / fd.abs().max(GRADIENT_FLOOR));
        }
    }
    Ok(worst)
}

fn gradient_check() -> Outcome {
    let spec = reference_spec();
    let reference = build_parameter_table(&spec, InvarianceLevel::Strong).unwrap();
    let truth = reference_truth(&reference).unwrap();
    let a = gradient_points(&reference, &truth, 7, 1)?;
    let b = gradient_shape(
        "latent X by x1 x2 x3\nlatent Y by y1 y2 y3\npath X -> Y\ncovariate Z -> X Y\nwaves 2\nar 1\ninvariance strong\nmeans free",
        InvarianceLevel::Strong,
        7,
        2,
    )?;
    let c = gradient_shape(
        "latent F by f1 f2 f3 f4\nwaves 4\nar 2\ninvariance weak\nidentify variance",
        InvarianceLevel::Weak,
        GRADIENT_POINTS - 14,
        3,
    )?;
    let worst = a.max(b).max(c);
    check(
        worst < GRADIENT_TOL,
        format!("{GRADIENT_POINTS} points over 3 shapes, max relative error {worst:.2e}"),
    )
}

fn recovery() -> Outcome {
    let spec = reference_spec();
    let table = build_parameter_table(&spec, InvarianceLevel::Strong).unwrap();
    let truth = reference_truth(&table).unwrap();
    let start = Instant::now();
    let report =
        recovery_experiment(&table, &truth, RECOVERY_N, RECOVERY_REPLICATES, 77, 0.99).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let bias = report.mean_abs_structural_bias();
    let coverage = report.pooled_coverage();
    check(
        bias < RECOVERY_BIAS_TOL
            && (COVERAGE_RANGE.0..=COVERAGE_RANGE.1).contains(&coverage)
            && report.failed.is_empty()
            && elapsed < RECOVERY_BUDGET,
        format!(
            "n {RECOVERY_N} x {} converged, mean |std bias| {bias:.4}, 99% coverage {:.3}, {elapsed:.1?}",
            report.converged, coverage
        ),
    )
}

fn fit_ladder(tables: &[ParameterTable], moments: &SampleMoments) -> Result<Vec<FitIndices>, String> {
    tables
        .iter()
        .map(|t| {
            let f = fit_with(t, moments, &no_se()).map_err(|e| e.to_string())?;
            if !f.convergence.converged {
                return Err(format!("{} did not converge", t.level));
            }
            fit_indices(t, &f, moments).map_err(|e| e.to_string())
        })
        .collect()
}

fn nesting() -> Outcome {
    let spec = reference_spec();
    let tables = ladder_levels(&spec);
    let truth = reference_truth(&tables[2]).unwrap();
    let results: Vec<Result<Vec<FitIndices>, String>> = (0..NESTING_DATASETS)
        .into_par_iter()
        .map(|d| {
            let cfg = GeneratorConfig::from_theta(&tables[2], &truth, 2000, 500 + d as u64).unwrap();
            fit_ladder(&tables, &simulate_moments(&cfg).unwrap())
        })
        .collect();
    let mut violations = 0;
    for r in results {
        let f = r?;
        let chi_ok = f[1].chi2 >= f[0].chi2 - NESTING_SLACK && f[2].chi2 >= f[1].chi2 - NESTING_SLACK;
        let df_ok = f[0].df < f[1].df && f[1].df < f[2].df;
        if !(chi_ok && df_ok) {
            violations += 1;
        }
    }
    check(
        violations == 0,
        format!("{NESTING_DATASETS} datasets, {violations} ordering violations"),
    )
}

fn power() -> Outcome {
    let spec = reference_spec();
    let tables = ladder_levels(&spec);
    let mut shifted = reference_matrices(&tables[0]).unwrap();
    for e in &tables[0].entries {
        if e.target == Matrix::Lambda && e.wave == Some(1) && e.slot.is_some() {
            shifted.lambda[(e.row, e.col)] += POWER_SHIFT;
        }
    }
    let pair = &tables[..2];
    let results: Vec<Result<bool, String>> = (0..POWER_REPLICATES)
        .into_par_iter()
        .map(|r| {
            let cfg = GeneratorConfig {
                matrices: shifted.clone(),
                n: 2000,
                seed: 9000 + r as u64,
            };
            let f = fit_ladder(pair, &simulate_moments(&cfg).map_err(|e| e.to_string())?)?;
            Ok(f[0].cfi - f[1].cfi >= DELTA_CFI)
        })
        .collect();
    let mut rejected = 0;
    for r in results {
        if r? {
            rejected += 1;
        }
    }
    check(
        rejected >= POWER_REQUIRED,
        format!("weak rejected in {rejected}/{POWER_REPLICATES} replicates"),
    )
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["asm"];
    argv.extend_from_slice(args);
    let code = cli::run(argv, &mut out, &mut err);
    if code != 0 {
        return Err(format!(
            "asm {} exited {code}: {}",
            args[0],
            String::from_utf8_lossy(&err)
        ));
    }
    Ok(String::from_utf8(out).unwrap())
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::TempDir::new().unwrap();
        let spec = reference_spec();
        let table = build_parameter_table(&spec, InvarianceLevel::Strong).unwrap();
        let truth = reference_truth(&table).unwrap();
        let data = simulate_dataset(&GeneratorConfig::from_theta(&table, &truth, 2500, 31).unwrap()).unwrap();
        fs::write(dir.path().join("reference.asm"), REFERENCE_MODEL).unwrap();
        fs::write(dir.path().join("truth.tsv"), truth_tsv(&table, &truth)).unwrap();
        write_panel_csv(
            fs::File::create(dir.path().join("panel.csv")).unwrap(),
            &spec.observed_names(),
            &data,
        )
        .unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).display().to_string()
    }
}

fn determinism(ws: &Workspace) -> Outcome {
    let (spec, data, truth) = (ws.path("reference.asm"), ws.path("panel.csv"), ws.path("truth.tsv"));
    let fit = || run_cli(&["fit", "--data", &data, "--spec", &spec]);
    let simulate = || {
        run_cli(&[
            "simulate", "--spec", &spec, "--truth", &truth, "--n", "2000", "--seed", "7",
        ])
    };
    let boot = |threads: &str| {
        run_cli(&[
            "bootstrap",
            "--data",
            &data,
            "--spec",
            &spec,
            "--replicates",
            "40",
            "--seed",
            "5",
            "--threads",
            threads,
        ])
    };
    let same_fit = fit()? == fit()?;
    let same_sim = simulate()? == simulate()?;
    let same_boot = boot("1")? == boot("4")?;
    check(
        same_fit && same_sim && same_boot,
        format!("fit {same_fit}, simulate {same_sim}, bootstrap across thread counts {same_boot}"),
    )
}

fn layout(ws: &Workspace) -> Outcome {
    let (spec, data) = (ws.path("reference.asm"), ws.path("panel.csv"));
    let ladder = run_cli(&["ladder", "--data", &data, "--spec", &spec])?;
    let boot = run_cli(&[
        "bootstrap",
        "--data",
        &data,
        "--spec",
        &spec,
        "--replicates",
        "40",
        "--seed",
        "5",
    ])?;
    let table1 = "model\tchi2\tdf\tcfi\trmsea (ci)\tsrmr";
    let table3 = "coefficient\tpath\testimate\tstandardized\t99% ci\tp_value";
    let rows1 = ladder
        .lines()
        .filter(|l| l.ends_with(char::is_numeric) && l.contains("invariance\t"))
        .filter(|l| {
            l.split('\t').count() == 6
                && l.split('\t')
                    .nth(4)
                    .is_some_and(|c| c.contains(" (") && c.ends_with(')'))
        })
        .count();
    let first = boot
        .lines()
        .find(|l| l.starts_with("beta[SA,FHS]@1\t"))
        .unwrap_or_default()
        .to_string();
    let cells: Vec<&str> = first.split('\t').collect();
    let row_ok = cells.len() == 6
        && cells[1] == "SA_1 -> FHS_1"
        && cells[4].starts_with('(')
        && cells[4].contains(", ")
        && cells[4].ends_with(')');
    check(
        ladder.contains(table1) && rows1 == 3 && boot.contains(table3) && row_ok,
        format!(
            "fit table rows {rows1}/3, structural first row `{}`",
            first.replace('\t', " | ")
        ),
    )
}

fn main() {
    let ws = Workspace::new();
    let criteria: Vec<Criterion> = vec![
        ("formula anchors", Box::new(formula_anchors)),
        ("df-delta accounting", Box::new(df_deltas)),
        ("implied-moment oracle", Box::new(implied_moment_oracle)),
        ("gradient check", Box::new(gradient_check)),
        ("parameter recovery", Box::new(recovery)),
        ("nesting monotonicity", Box::new(nesting)),
        ("invariance-selection power", Box::new(power)),
        ("determinism", Box::new(|| determinism(&ws))),
        ("report layout", Box::new(|| layout(&ws))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
