use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isolab::scenario::{bundled, catalog, parse_tolerance, run_scenario, Overrides, Pipeline, ScenarioConfig};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_FAILED: u8 = 3;

/// Environment variable overriding the output directory (lower priority
/// than `--out`).
const OUT_ENV: &str = "ISOLAB_OUT";

#[derive(Parser)]
#[command(
    name = "isolab",
    version,
    about = "Isoperimetric profiles and concentration on discrete conformal surfaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario with the pipeline named in its config.
    Run(RunArgs),
    /// List bundled scenarios and any valid configs in a directory.
    List {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Compute the isoperimetric profile only.
    Profile(RunArgs),
    /// Run the concentration decomposition only.
    Decompose(RunArgs),
    /// Run one verification pipeline.
    Verify {
        #[command(subcommand)]
        what: Verify,
    },
}

#[derive(Subcommand)]
enum Verify {
    /// Bounded-geometry checks on the base manifold and every term grid.
    Geometry(RunArgs),
    /// Limit detection, convergence and the bound checks.
    Limits(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to a scenario JSON file, or the name of a bundled scenario.
    scenario: String,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Tolerance override, e.g. `--tol l1=1e-6`; may be repeated.
    #[arg(long = "tol", value_name = "NAME=VAL")]
    tol: Vec<String>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn load(args: &RunArgs) -> Result<ScenarioConfig, Failure> {
    let path = Path::new(&args.scenario);
    let (text, origin) = if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        (text, path.display().to_string())
    } else if let Some(text) = bundled(&args.scenario) {
        (text.to_string(), format!("bundled:{}", args.scenario))
    } else {
        return Err(Failure::Config(format!(
            "no scenario file or bundled scenario named `{}`",
            args.scenario
        )));
    };
    let mut overrides = Overrides {
        seed: args.seed,
        tolerances: Vec::new(),
    };
    for t in &args.tol {
        overrides
            .tolerances
            .push(parse_tolerance(t).map_err(|e| Failure::Config(format!("--tol: {e}")))?);
    }
    ScenarioConfig::parse_with(&text, &overrides).map_err(|e| Failure::Config(format!("{origin}: {e}")))
}

fn out_dir(args: &RunArgs, config: &ScenarioConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| Path::new("out").join(&config.name))
}

fn execute(args: &RunArgs, pipeline: Option<Pipeline>) -> Result<bool, Failure> {
    let config = load(args)?;
    if let Some(p) = pipeline {
        config
            .check_pipeline(p)
            .map_err(|e| Failure::Config(format!("{}: {e}", args.scenario)))?;
    }
    let outcome = run_scenario(&config, pipeline).map_err(|e| Failure::Runtime(e.to_string()))?;
    let dir = out_dir(args, &config);
    outcome
        .write_to(&dir)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    for c in &outcome.checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<26} value={:<12.6e} limit={:.6e} ({})",
            c.name, c.value, c.limit, c.source
        );
    }
    println!("wrote {} files to {}", outcome.artifacts.len(), dir.display());
    Ok(outcome.passed())
}

fn list(dir: Option<&Path>) -> Result<bool, Failure> {
    let (entries, rejected) = catalog(dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    for e in &entries {
        match &e.path {
            Some(p) => println!("{:<24} {}  [{}]", e.name, e.description, p.display()),
            None => println!("{:<24} {}", e.name, e.description),
        }
    }
    for (path, err) in &rejected {
        eprintln!("skipped {}: {err}", path.display());
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => execute(a, None),
        Command::List { dir } => list(dir.as_deref()),
        Command::Profile(a) => execute(a, Some(Pipeline::Profile)),
        Command::Decompose(a) => execute(a, Some(Pipeline::Decompose)),
        Command::Verify {
            what: Verify::Geometry(a),
        } => execute(a, Some(Pipeline::VerifyGeometry)),
        Command::Verify {
            what: Verify::Limits(a),
        } => execute(a, Some(Pipeline::VerifyLimits)),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILED),
        Err(Failure::Config(msg)) => {
            eprintln!("invalid config: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
