use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dkf_core::harness::{self, ExperimentConfig};
use dkf_core::DkfError;

#[derive(Parser)]
#[command(name = "dkf", version, about = "Distributed Kalman filter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Every (η, γ, algorithm) cell of the config.
    Run(Common),
    /// All γ values at the first η.
    SweepGamma(Common),
    /// All η values at the first γ, with degradation relative to η = 0.
    SweepEta(Common),
    /// Steady-state predictions per γ without simulation.
    SteadyState(Common),
    /// Direct and stochastic fused-covariance estimators against the exact value.
    QwsBench(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the trial count (or the replica count for qws-bench).
    #[arg(long)]
    trials: Option<usize>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, DkfError> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(t) = self.trials {
            config.trials = t;
            config.qws_bench.replicas = t;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

fn paths(files: &[PathBuf]) -> Vec<String> {
    files.iter().map(|p| p.display().to_string()).collect()
}

fn cell_summary(report: &harness::ExperimentReport) -> serde_json::Value {
    report
        .cells
        .iter()
        .map(|c| {
            json!({
                "algorithm": c.algorithm,
                "gamma": c.gamma,
                "eta": c.eta,
                "mmse": c.mmse,
                "std_error": c.mmse_std_error,
                "theory": c.theory.as_ref().map(|t| t.mean_posterior_trace),
                "error": c.error,
            })
        })
        .collect()
}

fn simulate(config: &ExperimentConfig) -> Result<serde_json::Value, DkfError> {
    let report = harness::run_experiment(config)?;
    let files = harness::emit_report(&report, &config.output_dir)?;
    Ok(json!({
        "experiment": report.experiment,
        "files": paths(&files),
        "cells": cell_summary(&report),
        "elapsed_seconds": report.runtime.elapsed_seconds,
    }))
}

fn execute(command: &Command) -> Result<serde_json::Value, DkfError> {
    match command {
        Command::Run(c) => simulate(&c.load()?),
        Command::SweepGamma(c) => {
            let mut config = c.load()?;
            config.etas.truncate(1);
            if config.etas.is_empty() {
                config.etas.push(0.0);
            }
            simulate(&config)
        }
        Command::SweepEta(c) => {
            let mut config = c.load()?;
            config.gammas.truncate(1);
            if !config.etas.contains(&0.0) {
                config.etas.insert(0, 0.0);
            }
            let report = harness::run_experiment(&config)?;
            let mut files = harness::emit_report(&report, &config.output_dir)?;
            let rows = harness::relative_degradation(&report);
            let path = config.output_dir.join(format!("{}_degradation.json", report.experiment));
            std::fs::write(&path, serde_json::to_string_pretty(&rows)?)?;
            files.push(path);
            Ok(json!({
                "experiment": report.experiment,
                "files": paths(&files),
                "degradation": rows,
                "elapsed_seconds": report.runtime.elapsed_seconds,
            }))
        }
        Command::SteadyState(c) => {
            let config = c.load()?;
            let setup = config.setup()?;
            let report = harness::steady_state_report(&config, &setup)?;
            let files = harness::emit_steady_state_report(&report, &config.output_dir)?;
            Ok(json!({
                "experiment": report.experiment,
                "files": paths(&files),
                "ckf_posterior_trace": report.ckf_posterior_trace,
                "decay": report.decay,
            }))
        }
        Command::QwsBench(c) => {
            let config = c.load()?;
            let setup = config.setup()?;
            let report = harness::qws_benchmark(&config, &setup, harness::worker_count()?)?;
            let files = harness::emit_qws_report(&report, &config.output_dir)?;
            Ok(json!({
                "experiment": report.experiment,
                "files": paths(&files),
                "direct_bound_satisfied": report.direct_bound_satisfied,
                "direct_violations": report.direct_violations,
                "stochastic_ratio": report.stochastic_ratio,
                "stochastic_agreement": report.stochastic_agreement,
            }))
        }
    }
}

fn fail(message: String, kind: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": message, "kind": kind }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return fail(e.to_string().trim().to_string(), "usage", 2),
    };
    match execute(&cli.command) {
        Ok(summary) => {
            // A closed stdout (e.g. piped into `head`) is not an error.
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.to_string(), e.kind(), 1),
    }
}
