use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use taskinfer::regressor::TargetKind;
use taskinfer::simkit::{analyze, export, load_scenario, run, run_estimation, selftest, EstimatorKind};
use taskinfer::Result;

#[derive(Parser)]
#[command(name = "taskinfer", version, about = "Multirobot CBF-QP simulation and goal/gain identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write trajectory.csv and summary.json.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate, then run the estimators and write estimates.csv as well.
    Estimate {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of `ao,ukf`; defaults to the scenario's list.
        #[arg(long, value_delimiter = ',', value_parser = parse_estimator)]
        estimators: Option<Vec<EstimatorKind>>,
        /// Overrides the scenario's target.
        #[arg(long, value_parser = parse_target)]
        target: Option<TargetKind>,
    },
    /// Excitation diagnostics for an output directory.
    Analyze {
        out: PathBuf,
        /// Window start in seconds.
        #[arg(long)]
        from: Option<f64>,
        /// Window end in seconds.
        #[arg(long)]
        to: Option<f64>,
    },
    /// Randomized oracle and closed-form equivalence suite.
    Selftest {
        #[arg(long, default_value_t = 10_000)]
        instances: usize,
        #[arg(long, default_value_t = selftest::SelftestConfig::default().seed)]
        seed: u64,
    },
}

fn parse_estimator(s: &str) -> std::result::Result<EstimatorKind, String> {
    EstimatorKind::parse(s).ok_or_else(|| format!("unknown estimator {s:?}, expected ao or ukf"))
}

fn parse_target(s: &str) -> std::result::Result<TargetKind, String> {
    match s {
        "goal" => Ok(TargetKind::Goal),
        "gain" => Ok(TargetKind::Gain),
        _ => Err(format!("unknown target {s:?}, expected goal or gain")),
    }
}

/// `Ok(false)` marks a completed run whose checks failed.
fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Simulate { scenario, out } => {
            let sc = load_scenario(&scenario)?;
            let log = run(&sc)?;
            export(&out, &sc, &log, None)?;
            println!(
                "{} steps, min distance {:.6}, written to {}",
                log.steps.len(),
                log.min_distance,
                out.display()
            );
        }
        Command::Estimate {
            scenario,
            out,
            estimators,
            target,
        } => {
            let mut sc = load_scenario(&scenario)?;
            if let Some(t) = target {
                sc.estimation.target = t;
            }
            if let Some(e) = estimators {
                sc.estimation.estimators = e;
            }
            let log = run(&sc)?;
            let est = run_estimation(&sc, &log, sc.estimation.target, &sc.estimation.estimators)?;
            export(&out, &sc, &log, Some(&est))?;
            for r in &est.runs {
                let status = r.failure.as_deref().unwrap_or("ok");
                println!(
                    "robot {} {}: final error {:.6e} ({status})",
                    r.robot_id,
                    r.estimator.as_str(),
                    r.final_error()
                );
            }
        }
        Command::Analyze { out, from, to } => {
            let report = analyze::analyze_dir(&out, (from, to))?;
            print!("{}", analyze::render(&report));
        }
        Command::Selftest { instances, seed } => {
            let cfg = selftest::SelftestConfig {
                instances,
                seed,
                ..Default::default()
            };
            let rep = selftest::run_selftest(&cfg);
            print!("{}", selftest::render(&rep));
            return Ok(rep.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
