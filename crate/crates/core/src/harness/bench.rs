use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Setup};
use super::{NetworkSummary, SCHEMA_VERSION};
use crate::error::{DkfError, Result};
use crate::linalg;
use crate::qws::{self, DirectQws, StochasticQws};
use crate::rng::filter_stream;

/// Relative slack on the bound check, for round-off.
const BOUND_SLACK: f64 = 1e-9;
/// Allowed relative deviation of the stochastic error from its prediction.
const MOMENT_TOLERANCE: f64 = 0.10;
const REPLICA_CHUNK: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectDiagnostic {
    pub step: usize,
    pub node: usize,
    pub consensus_count: usize,
    /// ‖Ũ − R̃‖_F
    pub error_fro: f64,
    /// ‖Ũ† − R̃†‖_F
    pub pinv_error_fro: f64,
    /// ‖Ũ − R̃‖₂
    pub error_spectral: f64,
    /// α‖R̃‖₂ with the exact and spectral factors, when finite.
    pub bound_exact: Option<f64>,
    pub bound_spectral: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticDiagnostic {
    pub step: usize,
    pub node: usize,
    /// Replica mean of ‖Υ̃ − R̃‖²_F.
    pub mean_sq_error: f64,
    pub predicted_sq_error: Option<f64>,
    /// ‖mean(Υ̃†) − s·R̃†‖_F / ‖s·R̃†‖_F with s = k/(k − r − 1).
    pub inverse_mean_rel_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QwsBenchReport {
    pub schema_version: u32,
    pub experiment: String,
    pub gamma: usize,
    pub eta: f64,
    pub steps: usize,
    pub replicas: usize,
    pub network: NetworkSummary,
    /// First consensus count at which the spectral bound applies.
    pub spectral_threshold: usize,
    pub direct: Vec<DirectDiagnostic>,
    pub direct_violations: usize,
    pub direct_bound_satisfied: bool,
    /// Fitted per-step contraction of the largest direct error.
    pub direct_decay_rate: Option<f64>,
    pub stochastic: Vec<StochasticDiagnostic>,
    /// Network-summed mean squared error over its prediction at the last step.
    pub stochastic_ratio: Option<f64>,
    pub stochastic_agreement: bool,
}

/// Runs both QWS estimators on the configured network against the exact
/// fused covariance R̃_i = Σ_j l_ij² X_j.
pub fn qws_benchmark(config: &ExperimentConfig, setup: &Setup, threads: usize) -> Result<QwsBenchReport> {
    let spec = &config.qws_bench;
    let gamma = spec.gamma;
    let eta = config.etas.first().copied().unwrap_or(0.0);
    let network = setup.network.blended(eta)?;
    let nodes = network.node_count();
    let dim = setup.plant.state_dim();
    let rel_tol = config.filter_options(gamma).pinv_rel_tol;
    let xs = setup.sensors.informations();
    let exact = qws::exact_qws_all(&network, gamma, xs);
    let exact_pinv: Vec<DMatrix<f64>> = exact.iter().map(|x| linalg::pinv_sym(x, rel_tol)).collect();
    let exact_norm: Vec<f64> = exact.iter().map(linalg::spectral_norm).collect();
    let factors: Vec<DMatrix<f64>> = xs.iter().map(qws::factor_info).collect::<Result<_>>()?;

    let mut direct_qws =
        DirectQws::init(&network, &factors, gamma, config.q_seed(), config.naive_mode)?.with_pinv_tol(rel_tol);
    let mut direct = Vec::with_capacity(spec.steps * nodes);
    let mut violations = 0;
    let mut worst = Vec::with_capacity(spec.steps);
    for step in 1..=spec.steps {
        direct_qws.step(&network);
        let count = direct_qws.consensus_count();
        let bounds = qws::direct_error_bound(&network, gamma, count)?;
        let mut step_worst = 0.0f64;
        for i in 0..nodes {
            let u = &direct_qws.estimates()[i];
            let diff = u - &exact[i];
            let error_spectral = linalg::spectral_norm(&diff);
            let bound_exact = bounds[i].exact.is_finite().then(|| bounds[i].exact * exact_norm[i]);
            let bound_spectral = bounds[i].spectral.map(|a| a * exact_norm[i]);
            for b in [bound_exact, bound_spectral].into_iter().flatten() {
                if error_spectral > b * (1.0 + BOUND_SLACK) + BOUND_SLACK * exact_norm[i] {
                    violations += 1;
                }
            }
            step_worst = step_worst.max(diff.norm());
            direct.push(DirectDiagnostic {
                step,
                node: i + 1,
                consensus_count: count,
                error_fro: diff.norm(),
                pinv_error_fro: (linalg::pinv_sym(u, rel_tol) - &exact_pinv[i]).norm(),
                error_spectral,
                bound_exact,
                bound_spectral,
            });
        }
        worst.push((step, step_worst));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| DkfError::Config(format!("thread pool: {e}")))?;
    let chunks: Vec<std::ops::Range<usize>> = (0..spec.replicas)
        .step_by(REPLICA_CHUNK)
        .map(|s| s..(s + REPLICA_CHUNK).min(spec.replicas))
        .collect();
    let run_chunk = |range: std::ops::Range<usize>| -> Result<(Vec<f64>, Vec<DMatrix<f64>>)> {
        let mut sq = vec![0.0; spec.steps * nodes];
        let mut inv = vec![DMatrix::zeros(dim, dim); spec.steps * nodes];
        for r in range {
            let mut est = StochasticQws::new(&factors, gamma)?;
            let mut rng = filter_stream(config.base_seed.wrapping_add(r as u64));
            for k in 0..spec.steps {
                let ups = est.step(&network, &mut rng);
                for i in 0..nodes {
                    sq[k * nodes + i] += (&ups[i] - &exact[i]).norm_squared();
                    inv[k * nodes + i] += linalg::pinv_sym(&ups[i], rel_tol);
                }
            }
        }
        Ok((sq, inv))
    };
    let parts: Vec<Result<(Vec<f64>, Vec<DMatrix<f64>>)>> =
        pool.install(|| chunks.par_iter().map(|r| run_chunk(r.clone())).collect());
    let mut sq = vec![0.0; spec.steps * nodes];
    let mut inv = vec![DMatrix::zeros(dim, dim); spec.steps * nodes];
    for p in parts {
        let (s, m) = p?;
        for (a, b) in sq.iter_mut().zip(s) {
            *a += b;
        }
        for (a, b) in inv.iter_mut().zip(m) {
            *a += b;
        }
    }
    let reps = spec.replicas as f64;
    let mut stochastic = Vec::with_capacity(spec.steps * nodes);
    let (mut last_emp, mut last_pred) = (0.0, 0.0);
    let mut have_prediction = false;
    for k in 1..=spec.steps {
        for i in 0..nodes {
            let idx = (k - 1) * nodes + i;
            let mean_sq_error = sq[idx] / reps;
            let moments = qws::stochastic_moment_predictions(&exact[i], k, rel_tol).ok();
            let inverse_mean_rel_error = moments.as_ref().and_then(|m| {
                let target = &exact_pinv[i] * m.inverse_mean_scale;
                let scale = target.norm();
                (scale > 0.0).then(|| (&inv[idx] / reps - &target).norm() / scale)
            });
            if k == spec.steps {
                if let Some(m) = &moments {
                    have_prediction = true;
                    last_emp += mean_sq_error;
                    last_pred += m.mse_forward;
                }
            }
            stochastic.push(StochasticDiagnostic {
                step: k,
                node: i + 1,
                mean_sq_error,
                predicted_sq_error: moments.map(|m| m.mse_forward),
                inverse_mean_rel_error,
            });
        }
    }
    let stochastic_ratio = (have_prediction && last_pred > 0.0).then(|| last_emp / last_pred);

    Ok(QwsBenchReport {
        schema_version: SCHEMA_VERSION,
        experiment: config.name.clone(),
        gamma,
        eta,
        steps: spec.steps,
        replicas: spec.replicas,
        network: NetworkSummary::new(&network, setup.network_seed),
        spectral_threshold: qws::spectral_threshold(network.spectral_data().lambda2, nodes),
        direct,
        direct_violations: violations,
        direct_bound_satisfied: violations == 0,
        direct_decay_rate: qws::fit_decay_rate(&worst),
        stochastic,
        stochastic_agreement: stochastic_ratio.is_some_and(|r| (r - 1.0).abs() <= MOMENT_TOLERANCE),
        stochastic_ratio,
    })
}
