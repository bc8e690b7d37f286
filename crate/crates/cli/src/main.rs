//! `mfteam`: solve, simulate and validate mean-field team models.

mod policy_file;
mod tables;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use mfteam::model::parse_spec;
use mfteam::model::{AugmentedState, LatticeShape, MinorDynamics, MinorKernel, StageView};
use mfteam::reductions::embed_major_as_type;
use mfteam::simulator::{rollout, InitialState, SimConfig};
use mfteam::solver::PrescriptionSpace;
use mfteam::validation;
use mfteam::{Lattice, ModelSpec, Objective, Solver};

use policy_file::PolicyFile;
use tables::Tables;

#[derive(Parser, Debug)]
#[command(name = "mfteam", version, about = "Team-optimal control under mean-field sharing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the model and write value and policy tables.
    Solve(SolveArgs),
    /// Estimate the cost of a solved policy by Monte Carlo.
    Simulate(SimulateArgs),
    /// Check the solver against the brute-force oracles.
    Validate(ValidateArgs),
    /// Describe a model and the size of its problem.
    Info(ModelArgs),
}

#[derive(Args, Debug, Serialize)]
struct ModelArgs {
    /// Model document (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "mfteam-out")]
    out: PathBuf,
    /// Solve a finite horizon of T stages instead of the model's objective.
    #[arg(long, conflicts_with = "beta")]
    horizon: Option<usize>,
    /// Discount factor overriding the model's objective.
    #[arg(long)]
    beta: Option<f64>,
    /// Value-iteration tolerance; with --beta, defaults to the model's or 1e-8.
    #[arg(long)]
    tol: Option<f64>,
    /// Replace the population of a single-type model.
    #[arg(long)]
    population: Option<usize>,
    /// Scale one minor kernel row by 1.5 (negative control for validate).
    #[arg(long, hide = true)]
    corrupt_kernel: bool,
}

#[derive(Args, Debug, Serialize)]
struct SolveArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Solve the equivalent model with the major subsystem as an extra type.
    #[arg(long)]
    via_embedding: bool,
    /// Also write long-format tables for plotting.
    #[arg(long)]
    emit_plot_data: bool,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// policy.csv written by `solve`.
    #[arg(long)]
    policy: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    rollouts: usize,
    /// Initial count vector, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    counts: Vec<u32>,
    /// Initial major state, by label or index.
    #[arg(long)]
    major: Option<String>,
    /// Simulated stages; defaults to T, or the truncation rule when discounted.
    #[arg(long)]
    stages: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct ValidateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Skip the brute-force checks whose size grows exponentially.
    #[arg(long)]
    skip_oracle: bool,
}

#[derive(Serialize)]
struct RunManifest {
    spec_path: PathBuf,
    subcommand: &'static str,
    parameters: serde_json::Value,
    tool_version: &'static str,
    wall_time_seconds: f64,
    results: Vec<PathBuf>,
}

/// Wraps a kernel and inflates the row of state 0 under action 0.
#[derive(Debug)]
struct Corrupted {
    inner: Arc<ModelSpec>,
}

impl MinorDynamics for Corrupted {
    fn row(&self, view: &StageView<'_>, state: AugmentedState, action: usize) -> Vec<f64> {
        let flat = self.inner.flat(state);
        let mut row = self.inner.minor_row(view, flat, action).unwrap_or_default();
        if flat == 0 && action == 0 {
            row.iter_mut().for_each(|p| *p *= 1.5);
        }
        row
    }

    fn is_stationary(&self) -> bool {
        self.inner.minor_kernel.is_stationary()
    }
}

fn load(args: &ModelArgs) -> Result<ModelSpec> {
    let text = fs::read_to_string(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let mut spec = parse_spec(&text).with_context(|| format!("parsing {}", args.model.display()))?;
    if let Some(n) = args.population {
        ensure!(spec.types.len() == 1, "--population needs a single-type model");
        spec.types[0].population = n;
    }
    if let Some(t) = args.horizon {
        spec.objective = Objective::FiniteHorizon(t);
    } else if let Some(beta) = args.beta {
        let tol = args.tol.unwrap_or(match spec.objective {
            Objective::Discounted { tol, .. } => tol,
            Objective::FiniteHorizon(_) => 1e-8,
        });
        spec.objective = Objective::Discounted { beta, tol };
    } else if let Some(tol) = args.tol {
        let Objective::Discounted { beta, .. } = spec.objective else { bail!("--tol applies to discounted objectives") };
        spec.objective = Objective::Discounted { beta, tol };
    }
    spec.validate()?;
    if args.corrupt_kernel {
        spec.minor_kernel = MinorKernel::Custom(Arc::new(Corrupted { inner: Arc::new(spec.clone()) }));
    }
    Ok(spec)
}

fn objective_text(o: &Objective) -> String {
    match o {
        Objective::FiniteHorizon(t) => format!("finite horizon T={t}"),
        Objective::Discounted { beta, tol } => format!("discounted beta={beta} tol={tol:e}"),
    }
}

fn cmd_solve(args: &SolveArgs, results: &mut Vec<PathBuf>) -> Result<bool> {
    let spec = load(&args.model)?;
    let out = &args.model.out;
    let lattice = spec.lattice()?;
    let major_states = spec.major_state_count();
    let tables = if args.via_embedding {
        let e = embed_major_as_type(&spec)?;
        let solution = Solver::new(&e.spec)?.solve()?;
        Tables::from_embedding(&solution, &e, &lattice, major_states)
    } else {
        let solution = Solver::new(&spec)?.solve()?;
        Tables::from_solution(&solution, &lattice, major_states)
    };
    let values = out.join("values.csv");
    tables::write_values(&values, &spec, &lattice, &tables)?;
    results.push(values);
    let policy = out.join("policy.csv");
    tables::write_policy(&policy, &spec, &lattice, &tables)?;
    results.push(policy);
    if let Some(lines) = tables::threshold_summary(&spec, &lattice, &tables) {
        let path = out.join("thresholds.txt");
        fs::write(&path, lines.iter().map(|l| format!("{l}\n")).collect::<String>())?;
        for l in &lines {
            println!("{l}");
        }
        results.push(path);
    }
    if args.emit_plot_data {
        results.extend(tables::write_plot_data(out, &spec, &lattice, &tables)?);
    }
    println!("solved {} points x {major_states} major states ({})", lattice.len(), objective_text(&spec.objective));
    Ok(true)
}

fn major_index(spec: &ModelSpec, given: Option<&str>) -> Result<usize> {
    let Some(given) = given else { return Ok(0) };
    let labels: Vec<String> = spec.major.as_ref().map_or(vec!["0".into()], |m| m.states.clone());
    if let Some(i) = labels.iter().position(|l| l == given) {
        return Ok(i);
    }
    match given.parse::<usize>() {
        Ok(i) if i < labels.len() => Ok(i),
        _ => bail!("unknown major state {given:?}; expected one of {labels:?}"),
    }
}

fn cmd_simulate(args: &SimulateArgs, results: &mut Vec<PathBuf>) -> Result<bool> {
    let spec = load(&args.model)?;
    let law = PolicyFile::load(&args.policy, &spec)?;
    if let Objective::FiniteHorizon(t) = spec.objective {
        let stages = args.stages.unwrap_or(t);
        ensure!(law.stages() == 1 || stages <= law.stages(), "policy covers {} stages, {stages} requested", law.stages());
    }
    let major = major_index(&spec, args.major.as_deref())?;
    let mut cfg = SimConfig::new(args.seed, args.rollouts, InitialState::MeanField { counts: args.counts.clone(), major });
    cfg.horizon = args.stages;
    let report = rollout(&spec, &law, &cfg)?;
    let path = args.model.out.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
    println!(
        "estimate {:.6} +- {:.6} (SE) over {} rollouts of {} stages, truncation bias bound {:.2e}",
        report.mean, report.std_error, report.rollouts, report.horizon, report.truncation_bias_bound
    );
    results.push(path);
    Ok(true)
}

#[derive(Serialize)]
struct Check {
    check: &'static str,
    passed: bool,
    detail: String,
}

fn is_capacity(e: &mfteam::Error) -> bool {
    matches!(e, mfteam::Error::Capacity { .. })
}

fn cmd_validate(args: &ValidateArgs, results: &mut Vec<PathBuf>) -> Result<bool> {
    let spec = load(&args.model)?;
    let mut checks = Vec::new();
    let mut record = |check: &'static str, outcome: mfteam::Result<(bool, String)>| -> Result<()> {
        let (passed, detail) = match outcome {
            Ok(r) => r,
            Err(e) if is_capacity(&e) => bail!("{check}: {e} (use --skip-oracle)"),
            Err(e) => (false, e.to_string()),
        };
        println!("{} {check}: {detail}", if passed { "PASS" } else { "FAIL" });
        checks.push(Check { check, passed, detail });
        Ok(())
    };
    record("row normalization", validation::row_normalization(&spec).map(|rows| (true, format!("{rows} rows"))))?;
    if !args.skip_oracle {
        record(
            "kernel enumeration",
            validation::kernel_agreement(&spec).map(|a| {
                (a.max_deviation <= 1e-12, format!("{} kernels, max deviation {:.3e}", a.cases, a.max_deviation))
            }),
        )?;
        record(
            "dense dynamic program",
            validation::dp_agreement(&spec).map(|a| {
                (
                    a.passes(1e-10),
                    format!(
                        "{} states x {} stages, max deviation {:.3e}, {} argmin mismatches",
                        a.states,
                        a.stages,
                        a.max_value_deviation,
                        a.argmin_mismatches.len()
                    ),
                )
            }),
        )?;
        if spec.population() == 1 {
            record(
                "single agent",
                validation::single_agent_agreement(&spec).map(|d| (d <= 1e-10, format!("max deviation {d:.3e}"))),
            )?;
        }
    }
    if spec.major.is_some() && spec.shape == LatticeShape::PerType {
        record(
            "major-as-type embedding",
            validation::embedding_agreement(&spec).map(|a| {
                (
                    a.passes(1e-10),
                    format!(
                        "{} points, max deviation {:.3e}, {} major and {} minor action mismatches",
                        a.points,
                        a.max_value_deviation,
                        a.major_action_mismatches.len(),
                        a.minor_action_mismatches.len()
                    ),
                )
            }),
        )?;
    }
    let ok = checks.iter().all(|c| c.passed);
    let path = args.model.out.join("validation.json");
    fs::write(&path, serde_json::to_string_pretty(&json!({ "passed": ok, "checks": checks }))? + "\n")?;
    results.push(path);
    Ok(ok)
}

fn cmd_info(args: &ModelArgs, results: &mut Vec<PathBuf>) -> Result<bool> {
    let spec = load(args)?;
    let lattice: Option<Lattice> = spec.lattice().ok();
    let prescriptions = PrescriptionSpace::new(&spec).map(|s| s.len()).ok();
    let info = json!({
        "types": spec.types.iter().map(|t| json!({
            "population": t.population,
            "states": t.states,
            "actions": t.actions,
        })).collect::<Vec<_>>(),
        "major": spec.major.as_ref().map(|m| json!({ "states": m.states, "actions": m.actions })),
        "objective": objective_text(&spec.objective),
        "stationary": spec.is_stationary(),
        "lattice_points": lattice.as_ref().map(Lattice::len),
        "action_pairs": prescriptions,
    });
    let text = serde_json::to_string_pretty(&info)? + "\n";
    print!("{text}");
    let path = args.out.join("info.json");
    fs::write(&path, text)?;
    results.push(path);
    Ok(true)
}

fn run(cli: &Cli) -> Result<bool> {
    let start = Instant::now();
    let (name, model, parameters) = match &cli.command {
        Command::Solve(a) => ("solve", &a.model, serde_json::to_value(a)?),
        Command::Simulate(a) => ("simulate", &a.model, serde_json::to_value(a)?),
        Command::Validate(a) => ("validate", &a.model, serde_json::to_value(a)?),
        Command::Info(a) => ("info", a, serde_json::to_value(a)?),
    };
    fs::create_dir_all(&model.out).with_context(|| format!("creating {}", model.out.display()))?;
    let mut results = Vec::new();
    let outcome = match &cli.command {
        Command::Solve(a) => cmd_solve(a, &mut results),
        Command::Simulate(a) => cmd_simulate(a, &mut results),
        Command::Validate(a) => cmd_validate(a, &mut results),
        Command::Info(a) => cmd_info(a, &mut results),
    };
    write_manifest(&model.out, RunManifest {
        spec_path: model.model.clone(),
        subcommand: name,
        parameters,
        tool_version: env!("CARGO_PKG_VERSION"),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        results,
    })?;
    outcome
}

fn write_manifest(out: &Path, manifest: RunManifest) -> Result<()> {
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("validation failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
