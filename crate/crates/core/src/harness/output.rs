use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::bench::QwsBenchReport;
use super::experiment::ExperimentReport;
use super::steady::SteadyStateReport;
use crate::error::Result;

pub const CSV_HEADER: [&str; 8] = ["experiment", "algorithm", "gamma", "eta", "node", "k", "mse", "theory"];
const SUMMARY_HEADER: [&str; 9] =
    ["experiment", "algorithm", "gamma", "eta", "mmse", "mmse_std_error", "theory", "trials", "status"];

/// Shortest round-trip form; switches to exponent notation for tiny values.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// One row per (algorithm, γ, η, node, k) of every completed cell; nodes are 1-based.
pub fn write_long_csv<W: Write>(report: &ExperimentReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for cell in report.cells.iter().filter(|c| c.is_ok()) {
        let (alg, gamma, eta) = (cell.algorithm.to_string(), cell.gamma.to_string(), num(cell.eta));
        for (k, row) in cell.mse.iter().enumerate() {
            for (i, mse) in row.iter().enumerate() {
                let theory = cell.theory.as_ref().map(|t| t.posterior_trace[i]);
                w.write_record([
                    report.experiment.as_str(),
                    &alg,
                    &gamma,
                    &eta,
                    &(i + 1).to_string(),
                    &(k + 1).to_string(),
                    &num(*mse),
                    &opt(theory),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_summary_csv<W: Write>(report: &ExperimentReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_HEADER)?;
    for cell in &report.cells {
        w.write_record([
            report.experiment.clone(),
            cell.algorithm.to_string(),
            cell.gamma.to_string(),
            num(cell.eta),
            num(cell.mmse),
            num(cell.mmse_std_error),
            opt(cell.theory.as_ref().map(|t| t.mean_posterior_trace)),
            cell.trials.to_string(),
            cell.error.clone().unwrap_or_else(|| "ok".into()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn csv_file(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    Ok(std::io::BufWriter::new(fs::File::create(path)?))
}

/// Writes `<name>.csv`, `<name>_summary.csv` and `<name>.json` into `dir`.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let name = &report.experiment;
    let long = dir.join(format!("{name}.csv"));
    let summary = dir.join(format!("{name}_summary.csv"));
    let json = dir.join(format!("{name}.json"));
    write_long_csv(report, csv_file(&long)?)?;
    write_summary_csv(report, csv_file(&summary)?)?;
    write_json(report, &json)?;
    Ok(vec![long, summary, json])
}

/// Writes `<name>_qws.json` plus per-step CSV dumps of both estimators.
pub fn emit_qws_report(report: &QwsBenchReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let name = &report.experiment;
    let json = dir.join(format!("{name}_qws.json"));
    let direct = dir.join(format!("{name}_qws_direct.csv"));
    let stochastic = dir.join(format!("{name}_qws_stochastic.csv"));
    write_json(report, &json)?;

    let mut w = csv::Writer::from_writer(csv_file(&direct)?);
    w.write_record(["step", "node", "u_error_fro", "u_pinv_error_fro", "bound_exact", "bound_spectral", "u_error_2"])?;
    for d in &report.direct {
        w.write_record([
            d.step.to_string(),
            d.node.to_string(),
            num(d.error_fro),
            num(d.pinv_error_fro),
            opt(d.bound_exact),
            opt(d.bound_spectral),
            num(d.error_spectral),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(csv_file(&stochastic)?);
    w.write_record(["step", "node", "mean_sq_error", "predicted_sq_error", "inverse_mean_rel_error"])?;
    for s in &report.stochastic {
        w.write_record([
            s.step.to_string(),
            s.node.to_string(),
            num(s.mean_sq_error),
            opt(s.predicted_sq_error),
            opt(s.inverse_mean_rel_error),
        ])?;
    }
    w.flush()?;
    Ok(vec![json, direct, stochastic])
}

pub fn emit_steady_state_report(report: &SteadyStateReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let json = dir.join(format!("{}_steady_state.json", report.experiment));
    write_json(report, &json)?;
    Ok(vec![json])
}
