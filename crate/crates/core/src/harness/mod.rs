//! Monte Carlo experiments on the target-tracking network: configuration,
//! trial execution, steady-state predictions, QWS diagnostics and report
//! files.

mod bench;
mod config;
mod experiment;
mod output;
mod steady;

pub use bench::{qws_benchmark, DirectDiagnostic, QwsBenchReport, StochasticDiagnostic};
pub use config::{locally_observable, ExperimentConfig, ModelSpec, NetworkSpec, QwsBenchSpec, Setup};
pub use experiment::{
    ckf_prediction, posterior_theory_trace, relative_degradation, run_experiment, run_experiment_with, steady_prediction,
    CellReport, CellTheory, DegradationRow, ExperimentReport, RuntimeInfo, SeedInfo,
};
pub use output::{emit_qws_report, emit_report, emit_steady_state_report, write_long_csv, CSV_HEADER};
pub use steady::{steady_state_report, ContinuityModulus, DecayFit, NodeSteadyState, SteadyStateEntry, SteadyStateReport};

use serde::{Deserialize, Serialize};

use crate::error::{DkfError, Result};
use crate::network::ConsensusNetwork;

pub const SCHEMA_VERSION: u32 = 1;

/// Worker threads: DKF_THREADS when set, otherwise every available core.
pub fn worker_count() -> Result<usize> {
    match std::env::var("DKF_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(DkfError::Config(format!("DKF_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub nodes: usize,
    pub edges: usize,
    pub lambda2: f64,
    pub diameter: Option<usize>,
    pub seed: Option<u64>,
}

impl NetworkSummary {
    pub fn new(network: &ConsensusNetwork, seed: Option<u64>) -> Self {
        let s = network.spectral_data();
        NetworkSummary {
            nodes: network.node_count(),
            edges: network.edges().len(),
            lambda2: s.lambda2,
            diameter: s.diameter,
            seed,
        }
    }
}
