use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Setup};
use super::experiment::steady_prediction;
use super::{NetworkSummary, SCHEMA_VERSION};
use crate::error::Result;
use crate::filters::Algorithm;
use crate::fusion::FusedModel;
use crate::linalg;
use crate::qws;
use crate::riccati::{self, SolverOptions};
use crate::system::SensorSuite;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSteadyState {
    pub node: usize,
    /// trace(P_i), the steady prior the filter reports.
    pub trace_estimated: f64,
    /// trace(P̃_i), the actual steady prior error covariance.
    pub trace_actual: f64,
    pub consistency_margin: f64,
    /// ‖P_i − P^C‖₂
    pub gap_to_ckf: f64,
    /// ‖P̃_i − P^C‖₂
    pub actual_gap_to_ckf: f64,
    pub posterior_trace_actual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateEntry {
    pub algorithm: Algorithm,
    pub gamma: usize,
    pub error: Option<String>,
    pub spectral_radius: f64,
    pub max_gap: f64,
    pub nodes: Vec<NodeSteadyState>,
}

/// Contraction factor per unit of γ from a log-linear fit of the largest
/// node gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub algorithm: Algorithm,
    pub rate: Option<f64>,
}

/// max_i ‖ΔP_i‖_F / δ when every R_j moves by δ in Frobenius norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityModulus {
    pub algorithm: Algorithm,
    pub gamma: usize,
    pub perturbation: f64,
    pub change: f64,
    pub modulus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateReport {
    pub schema_version: u32,
    pub experiment: String,
    pub eta: f64,
    pub network: NetworkSummary,
    pub ckf_prior_trace: f64,
    pub ckf_posterior_trace: f64,
    pub entries: Vec<SteadyStateEntry>,
    pub decay: Vec<DecayFit>,
    pub continuity: Vec<ContinuityModulus>,
}

const CONTINUITY_DELTA: f64 = 1e-6;

/// Steady-state predictions for every distributed algorithm family in the
/// config, per γ, at the first η.
pub fn steady_state_report(config: &ExperimentConfig, setup: &Setup) -> Result<SteadyStateReport> {
    let opts = SolverOptions { pinv_rel_tol: config.filter_options(1).pinv_rel_tol, ..SolverOptions::default() };
    let eta = config.etas.first().copied().unwrap_or(0.0);
    let network = setup.network.blended(eta)?;
    let (pc, pc_post) = riccati::steady_ckf(&setup.plant, &setup.sensors, &opts)?;

    let mut families: Vec<Algorithm> = Vec::new();
    for &a in &config.algorithms {
        let rep = representative(a);
        if rep != Algorithm::Ckf && !families.contains(&rep) {
            families.push(rep);
        }
    }

    let mut entries = Vec::new();
    for &algorithm in &families {
        for &gamma in &config.gammas {
            let fused = FusedModel::new(&network, &setup.sensors, gamma);
            let entry = match steady_prediction(algorithm, &setup.plant, &setup.sensors, &fused, config.omega, &opts) {
                Ok(p) => {
                    let nodes: Vec<NodeSteadyState> = (0..fused.node_count())
                        .map(|i| NodeSteadyState {
                            node: i + 1,
                            trace_estimated: p.prior_estimated[i].trace(),
                            trace_actual: p.prior_actual[i].trace(),
                            consistency_margin: p.consistency_margin[i],
                            gap_to_ckf: linalg::spectral_norm(&(&p.prior_estimated[i] - &pc)),
                            actual_gap_to_ckf: linalg::spectral_norm(&(&p.prior_actual[i] - &pc)),
                            posterior_trace_actual: p.posterior_actual[i].trace(),
                        })
                        .collect();
                    SteadyStateEntry {
                        algorithm,
                        gamma,
                        error: None,
                        spectral_radius: p.spectral_radius,
                        max_gap: nodes.iter().map(|n| n.gap_to_ckf).fold(0.0, f64::max),
                        nodes,
                    }
                }
                Err(e) => SteadyStateEntry {
                    algorithm,
                    gamma,
                    error: Some(e.to_string()),
                    spectral_radius: 0.0,
                    max_gap: 0.0,
                    nodes: vec![],
                },
            };
            entries.push(entry);
        }
    }

    let decay = families
        .iter()
        .map(|&algorithm| {
            let points: Vec<(usize, f64)> = entries
                .iter()
                .filter(|e| e.algorithm == algorithm && e.error.is_none())
                .map(|e| (e.gamma, e.max_gap))
                .collect();
            DecayFit { algorithm, rate: qws::fit_decay_rate(&points) }
        })
        .collect();

    let mut continuity = Vec::new();
    if let Some(&gamma) = config.gammas.first() {
        let perturbed = perturbed_sensors(&setup.plant.a, &setup.sensors, CONTINUITY_DELTA)?;
        let fused = FusedModel::new(&network, &setup.sensors, gamma);
        let fused_p = FusedModel::new(&network, &perturbed, gamma);
        for &algorithm in &families {
            let base = steady_prediction(algorithm, &setup.plant, &setup.sensors, &fused, config.omega, &opts);
            let moved = steady_prediction(algorithm, &setup.plant, &perturbed, &fused_p, config.omega, &opts);
            if let (Ok(b), Ok(m)) = (base, moved) {
                let change = b
                    .prior_estimated
                    .iter()
                    .zip(&m.prior_estimated)
                    .map(|(x, y)| (x - y).norm())
                    .fold(0.0, f64::max);
                continuity.push(ContinuityModulus {
                    algorithm,
                    gamma,
                    perturbation: CONTINUITY_DELTA,
                    change,
                    modulus: change / CONTINUITY_DELTA,
                });
            }
        }
    }

    Ok(SteadyStateReport {
        schema_version: SCHEMA_VERSION,
        experiment: config.name.clone(),
        eta,
        network: NetworkSummary::new(&network, setup.network_seed),
        ckf_prior_trace: pc.trace(),
        ckf_posterior_trace: pc_post.trace(),
        entries,
        decay,
        continuity,
    })
}

/// One algorithm per steady-state family.
fn representative(a: Algorithm) -> Algorithm {
    match a {
        Algorithm::McmStoch => Algorithm::McmDirect,
        Algorithm::MciStoch => Algorithm::MciDirect,
        other => other,
    }
}

/// Every R_j shifted by a multiple of the identity so that the stacked
/// shift has Frobenius norm `delta`.
fn perturbed_sensors(a: &DMatrix<f64>, sensors: &SensorSuite, delta: f64) -> Result<SensorSuite> {
    let nodes = sensors.node_count();
    let total_dim: usize = (0..nodes).map(|j| sensors.r(j).nrows()).sum();
    let step = delta / (total_dim as f64).sqrt();
    let c = (0..nodes).map(|j| sensors.c(j).clone()).collect();
    let r = (0..nodes)
        .map(|j| {
            let m = sensors.r(j).nrows();
            sensors.r(j) + DMatrix::identity(m, m) * step
        })
        .collect();
    SensorSuite::new(a, c, r)
}
