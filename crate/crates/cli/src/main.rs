//! `doacpol` command-line driver: experiments, prior calibration, and
//! self-verification suites.
//!
//! Exit codes: 0 success, 1 a self-check suite failed, 2 usage or
//! configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use doacpol_core::baselines::PlannerKind;
use doacpol_core::calibrate::{calibrate, CalibrationSettings, CalibrationTarget};
use doacpol_core::engine::Threshold;
use doacpol_core::exec::{with_thread_cap, Execution};
use doacpol_core::firegrid::GridScenario;
use doacpol_core::harness::{
    run_experiment, summary_table, write_atomic, write_outputs, ExperimentConfig,
};
use doacpol_core::planner::Evaluator;
use doacpol_core::selfcheck::{run_suite, SelfcheckOptions, Suite};
use doacpol_core::{Error, Result};

const THREADS_ENV: &str = "DOACPOL_THREADS";

#[derive(Parser)]
#[command(
    name = "doacpol",
    version,
    about = "Decentralized open-loop planning with selective communication"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded experiments and write results, summary and plot data.
    Run(RunArgs),
    /// Search the tied top/bottom prior lattice for a target action distribution.
    Calibrate(CalibrateArgs),
    /// Run the self-verification suites.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario TOML file, or `2x2` / `4x4` for the built-in scenarios.
    #[arg(long)]
    scenario: Option<String>,
    /// One of mpomdp-ol, decpomdp-ol, rverifyac, doacpol.
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Joint actions executed per session before replanning.
    #[arg(long)]
    replan: Option<usize>,
    #[arg(long)]
    sessions: Option<usize>,
    /// Number of runs; seeds are `seed, seed + 1, ...`.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Synchronize both agents before every session.
    #[arg(long)]
    force_comm: bool,
    /// auto, exhaustive-tree or factored-entropy.
    #[arg(long)]
    evaluator: Option<String>,
    /// Evaluate work items on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

/// Config-file form of [`RunArgs`].
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    scenario: Option<String>,
    algorithm: Option<String>,
    epsilon: Option<f64>,
    delta: Option<f64>,
    horizon: Option<usize>,
    replan: Option<usize>,
    sessions: Option<usize>,
    runs: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    force_comm: Option<bool>,
    evaluator: Option<String>,
    sequential: Option<bool>,
}

/// Fully resolved run settings, echoed into the output directory.
#[derive(Debug, Serialize)]
struct RunConfig {
    scenario: String,
    algorithm: String,
    epsilon: f64,
    delta: f64,
    horizon: usize,
    replan: usize,
    sessions: usize,
    runs: usize,
    seed: u64,
    seeds: Vec<u64>,
    out: PathBuf,
    force_comm: bool,
    evaluator: String,
    sequential: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario with fixed unshared values (default: built-in 2x2).
    #[arg(long)]
    scenario: Option<String>,
    /// Target masses such as `D+D=0.875,R+R=0.125`.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Deviation accepted as a match.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Where to write the scenario with the best prior pinned.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrateFile {
    scenario: Option<String>,
    target: Option<String>,
    epsilon: Option<f64>,
    tolerance: Option<f64>,
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SelfcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// reuse, prop1, mrac, fullcomm or normalization; all when omitted.
    #[arg(long)]
    suite: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Test hook: flip the tie-break order to show the suites catch it.
    #[arg(long)]
    fault_tiebreak: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SelfcheckFile {
    suite: Option<String>,
    seed: Option<u64>,
    fault_tiebreak: Option<bool>,
}

fn read_config<T: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_scenario(spec: &str) -> Result<GridScenario> {
    let path = Path::new(spec);
    if path.exists() {
        return GridScenario::load(path);
    }
    match spec {
        "2x2" => Ok(GridScenario::builtin_2x2()),
        "4x4" => Ok(GridScenario::builtin_4x4()),
        _ => Err(Error::Config(format!(
            "scenario file {} does not exist",
            path.display()
        ))),
    }
}

fn parse_evaluator(name: &str) -> Result<Evaluator> {
    match name {
        "auto" => Ok(Evaluator::Auto),
        "exhaustive-tree" => Ok(Evaluator::ExhaustiveTree),
        "factored-entropy" => Ok(Evaluator::FactoredEntropy),
        other => Err(Error::Config(format!(
            "unknown evaluator {other:?}; expected auto, exhaustive-tree or factored-entropy"
        ))),
    }
}

fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| {
                Error::Config(format!(
                    "{THREADS_ENV} must be a positive integer, got {v:?}"
                ))
            }),
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let file: RunFile = read_config(args.config.as_deref())?;
    let scenario_name = args
        .scenario
        .or(file.scenario)
        .ok_or_else(|| Error::Config("--scenario is required".into()))?;
    let scenario = load_scenario(&scenario_name)?;
    let algorithm = args
        .algorithm
        .or(file.algorithm)
        .unwrap_or_else(|| "doacpol".into());
    let epsilon = args.epsilon.or(file.epsilon).unwrap_or(0.3);
    let delta = args.delta.or(file.delta).unwrap_or(0.05);
    // Validate thresholds even where the planner ignores them.
    Threshold::epsilon(epsilon)?;
    Threshold::delta(delta)?;
    let planner = PlannerKind::from_algorithm(&algorithm, epsilon, delta)?;
    let mut exp = ExperimentConfig::for_scenario(&scenario, planner);
    exp.horizon = args.horizon.or(file.horizon).unwrap_or(exp.horizon);
    exp.replan_stride = args.replan.or(file.replan).unwrap_or(exp.replan_stride);
    exp.sessions = args.sessions.or(file.sessions).unwrap_or(exp.sessions);
    exp.force_comm = args.force_comm || file.force_comm.unwrap_or(false);
    let evaluator = args
        .evaluator
        .or(file.evaluator)
        .unwrap_or_else(|| "auto".into());
    exp.evaluator = parse_evaluator(&evaluator)?;
    let sequential = args.sequential || file.sequential.unwrap_or(false);
    exp.execution = if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    exp.validate()?;

    let runs = args.runs.or(file.runs).unwrap_or(25);
    if runs == 0 {
        return Err(Error::Config("--runs must be at least 1".into()));
    }
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let seeds: Vec<u64> = (0..runs as u64).map(|i| seed.wrapping_add(i)).collect();
    let out = args
        .out
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from("results"));

    let effective = RunConfig {
        scenario: scenario_name,
        algorithm,
        epsilon,
        delta,
        horizon: exp.horizon,
        replan: exp.replan_stride,
        sessions: exp.sessions,
        runs,
        seed,
        seeds: seeds.clone(),
        out: out.clone(),
        force_comm: exp.force_comm,
        evaluator,
        sequential,
    };
    let cap = thread_cap()?;
    let results = with_thread_cap(cap, || run_experiment(&scenario, &exp, &seeds))?;
    let rows = write_outputs(&out, &results)?;
    let echo = toml::to_string(&effective).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&out.join("config.toml"), echo.as_bytes())?;
    print!("{}", summary_table(&rows));
    println!(
        "wrote {} runs of {} to {}",
        results.len(),
        exp.planner,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<ExitCode> {
    let file: CalibrateFile = read_config(args.config.as_deref())?;
    let scenario = match args.scenario.or(file.scenario) {
        Some(s) => load_scenario(&s)?,
        None => GridScenario::builtin_2x2(),
    };
    let target = match args.target.or(file.target) {
        Some(t) => t.parse::<CalibrationTarget>()?,
        None => CalibrationTarget::corner_default(),
    };
    let mut settings = CalibrationSettings::default();
    if let Some(e) = args.epsilon.or(file.epsilon) {
        settings.epsilon = Threshold::epsilon(e)?;
    }
    if let Some(t) = args.tolerance.or(file.tolerance) {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Config(format!(
                "tolerance must be a non-negative number, got {t}"
            )));
        }
        settings.tolerance = t;
    }
    let report = with_thread_cap(thread_cap()?, || calibrate(&scenario, &target, &settings))?;
    print!("{}", report.summary());
    let output = args
        .output
        .or(file.output)
        .unwrap_or_else(|| PathBuf::from("calibrated.toml"));
    let mut pinned = scenario.file.clone();
    pinned.prior = report.best.prior.clone();
    write_atomic(&output, pinned.to_toml()?.as_bytes())?;
    println!("pinned scenario written to {}", output.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_selfcheck(args: SelfcheckArgs) -> Result<ExitCode> {
    let file: SelfcheckFile = read_config(args.config.as_deref())?;
    let suites: Vec<Suite> = match args.suite.or(file.suite) {
        Some(s) => vec![s.parse()?],
        None => Suite::ALL.to_vec(),
    };
    let mut opts = SelfcheckOptions {
        fault_tiebreak: args.fault_tiebreak || file.fault_tiebreak.unwrap_or(false),
        ..SelfcheckOptions::default()
    };
    if let Some(seed) = args.seed.or(file.seed) {
        opts.seed = seed;
    }
    let cap = thread_cap()?;
    let mut all_passed = true;
    for suite in suites {
        let report = with_thread_cap(cap, || run_suite(suite, &opts))?;
        println!("{report}");
        all_passed &= report.passed;
    }
    Ok(if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Selfcheck(a) => cmd_selfcheck(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
