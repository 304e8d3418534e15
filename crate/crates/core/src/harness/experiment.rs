use std::ops::Range;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Setup};
use super::{worker_count, NetworkSummary, SCHEMA_VERSION};
use crate::error::{DkfError, Result};
use crate::filters::{Algorithm, DistributedFilter, FilterOptions};
use crate::fusion::FusedModel;
use crate::linalg;
use crate::network::ConsensusNetwork;
use crate::riccati::{self, SolverOptions, SteadyStatePrediction};
use crate::rng::trajectory_stream;
use crate::system::{PlantModel, SensorSuite, Simulator, Trajectory};

/// Trials per work item. Fixed so that sums are formed in the same order
/// whatever the worker count.
const TRIAL_CHUNK: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub base_seed: u64,
    pub q_seed: u64,
    pub network_seed: Option<u64>,
    /// Trial t uses trajectory seed base_seed + t; the stochastic modes draw
    /// their filter stream from the same number.
    pub first_trial_seed: u64,
    pub last_trial_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeInfo {
    pub threads: usize,
    pub elapsed_seconds: f64,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTheory {
    /// Steady trace of the actual posterior error covariance, per node.
    pub posterior_trace: Vec<f64>,
    /// Steady trace of the covariance the filter reports, per node.
    pub estimated_posterior_trace: Vec<f64>,
    /// min eig(P_i − P̃_i) of the steady priors.
    pub prior_consistency_margin: Vec<f64>,
    pub spectral_radius: f64,
    pub mean_posterior_trace: f64,
}

impl CellTheory {
    pub fn from_prediction(p: &SteadyStatePrediction) -> Self {
        let posterior_trace = p.posterior_trace();
        CellTheory {
            mean_posterior_trace: posterior_trace.iter().sum::<f64>() / posterior_trace.len() as f64,
            posterior_trace,
            estimated_posterior_trace: p.posterior_estimated.iter().map(|m| m.trace()).collect(),
            prior_consistency_margin: p.consistency_margin.clone(),
            spectral_radius: p.spectral_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub algorithm: Algorithm,
    pub gamma: usize,
    pub eta: f64,
    /// Set when the filter failed; the statistics are then empty.
    pub error: Option<String>,
    pub trials: usize,
    /// Steady-window mean over nodes and trials.
    pub mmse: f64,
    pub mmse_std_error: f64,
    pub node_mmse: Vec<f64>,
    /// Steady-window mean over nodes, per trial.
    pub trial_mmse: Vec<f64>,
    /// mse[k - 1][i] = MSE_{i,k}
    pub mse: Vec<Vec<f64>>,
    /// Steady-window error second moment per node.
    pub empirical_covariance: Vec<Vec<Vec<f64>>>,
    /// Steady-window mean of the reported posterior covariance per node.
    pub reported_covariance: Vec<Vec<Vec<f64>>>,
    /// min eig(reported − empirical) per node.
    pub empirical_margin: Vec<f64>,
    pub theory: Option<CellTheory>,
    pub theory_error: Option<String>,
}

impl CellReport {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub experiment: String,
    pub config: ExperimentConfig,
    pub seeds: SeedInfo,
    pub network: NetworkSummary,
    pub steady_window: (usize, usize),
    pub ckf_posterior_trace: Option<f64>,
    pub cells: Vec<CellReport>,
    pub runtime: RuntimeInfo,
}

impl ExperimentReport {
    pub fn cell(&self, algorithm: Algorithm, gamma: usize, eta: f64) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.algorithm == algorithm && c.gamma == gamma && c.eta == eta)
    }
}

/// Relative change of a cell's MMSE against the η = 0 cell of the same
/// algorithm and γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationRow {
    pub algorithm: Algorithm,
    pub gamma: usize,
    pub eta: f64,
    pub mmse: f64,
    pub baseline_mmse: f64,
    pub relative: f64,
}

pub fn relative_degradation(report: &ExperimentReport) -> Vec<DegradationRow> {
    report
        .cells
        .iter()
        .filter(|c| c.is_ok())
        .filter_map(|c| {
            let base = report.cell(c.algorithm, c.gamma, 0.0).filter(|b| b.is_ok())?;
            Some(DegradationRow {
                algorithm: c.algorithm,
                gamma: c.gamma,
                eta: c.eta,
                mmse: c.mmse,
                baseline_mmse: base.mmse,
                relative: (c.mmse - base.mmse) / base.mmse,
            })
        })
        .collect()
}

/// The centralized filter viewed as N identical nodes.
pub fn ckf_prediction(
    plant: &PlantModel,
    sensors: &SensorSuite,
    opts: &SolverOptions,
) -> Result<SteadyStatePrediction> {
    let (prior, post) = riccati::steady_ckf(plant, sensors, opts)?;
    let nodes = sensors.node_count();
    let rho = linalg::spectral_radius(&(&plant.a * &post * linalg::inv_spd(&prior)?));
    Ok(SteadyStatePrediction {
        prior_estimated: vec![prior.clone(); nodes],
        prior_actual: vec![prior; nodes],
        posterior_estimated: vec![post.clone(); nodes],
        posterior_actual: vec![post; nodes],
        consistency_margin: vec![0.0; nodes],
        a_block: None,
        gamma_block: None,
        spectral_radius: rho,
    })
}

/// Steady-state solution matching `algorithm`; both QWS modes share one.
pub fn steady_prediction(
    algorithm: Algorithm,
    plant: &PlantModel,
    sensors: &SensorSuite,
    fused: &FusedModel,
    omega: Option<f64>,
    opts: &SolverOptions,
) -> Result<SteadyStatePrediction> {
    match algorithm {
        Algorithm::Ckf => ckf_prediction(plant, sensors, opts),
        Algorithm::Cm => riccati::steady_cm(plant, fused, opts),
        Algorithm::Ci => riccati::steady_hcmci(plant, sensors, fused, 1.0, opts),
        Algorithm::Hcmci => {
            let w = omega.unwrap_or(fused.node_count() as f64);
            riccati::steady_hcmci(plant, sensors, fused, w, opts)
        }
        Algorithm::McmDirect | Algorithm::McmStoch => riccati::steady_modified_cm(plant, fused, opts),
        Algorithm::MciDirect | Algorithm::MciStoch => riccati::steady_modified_ci(plant, sensors, fused, opts),
    }
}

/// Per-node trace of the steady actual posterior error covariance.
pub fn posterior_theory_trace(algorithm: Algorithm, prediction: Option<&SteadyStatePrediction>) -> Result<Vec<f64>> {
    prediction
        .map(SteadyStatePrediction::posterior_trace)
        .ok_or_else(|| DkfError::MissingSolution(algorithm.to_string()))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let setup = config.setup()?;
    run_experiment_with(config, &setup, worker_count()?)
}

/// As `run_experiment` with a prepared setup and an explicit worker count.
pub fn run_experiment_with(config: &ExperimentConfig, setup: &Setup, threads: usize) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| DkfError::Config(format!("thread pool: {e}")))?;
    let opts = SolverOptions { pinv_rel_tol: config.filter_options(1).pinv_rel_tol, ..SolverOptions::default() };
    let simulator = Simulator::new(&setup.plant, &setup.sensors)?;
    let window = config.steady_window();
    let mut cells = Vec::new();
    for &eta in &config.etas {
        let network = setup.network.blended(eta)?;
        for &gamma in &config.gammas {
            let fused = FusedModel::new(&network, &setup.sensors, gamma);
            let mut cache: Vec<(Algorithm, std::result::Result<SteadyStatePrediction, String>)> = Vec::new();
            for &algorithm in &config.algorithms {
                let theory_key = theory_key(algorithm);
                if !cache.iter().any(|(a, _)| theory_key == self::theory_key(*a)) {
                    let p = steady_prediction(algorithm, &setup.plant, &setup.sensors, &fused, config.omega, &opts)
                        .map_err(|e| e.to_string());
                    cache.push((algorithm, p));
                }
                let theory = &cache.iter().find(|(a, _)| theory_key == self::theory_key(*a)).unwrap().1;
                let ctx = CellContext {
                    algorithm,
                    options: config.filter_options(gamma),
                    setup,
                    network: &network,
                    simulator: &simulator,
                    steps: config.model.horizon_steps,
                    window,
                    base_seed: config.base_seed,
                };
                let mut cell = match simulate_cell(&ctx, config.trials, &pool) {
                    Ok(acc) => acc.finish(&ctx, config.trials),
                    Err(e) => CellReport::failed(algorithm, gamma, eta, config.trials, e.to_string()),
                };
                cell.eta = eta;
                match theory {
                    Ok(p) => cell.theory = Some(CellTheory::from_prediction(p)),
                    Err(e) => cell.theory_error = Some(e.clone()),
                }
                cells.push(cell);
            }
        }
    }
    let ckf_posterior_trace = riccati::steady_ckf(&setup.plant, &setup.sensors, &opts).ok().map(|(_, p)| p.trace());
    Ok(ExperimentReport {
        schema_version: SCHEMA_VERSION,
        experiment: config.name.clone(),
        config: config.clone(),
        seeds: SeedInfo {
            base_seed: config.base_seed,
            q_seed: config.q_seed(),
            network_seed: setup.network_seed,
            first_trial_seed: config.base_seed,
            last_trial_seed: config.base_seed.wrapping_add(config.trials as u64 - 1),
        },
        network: NetworkSummary::new(&setup.network, setup.network_seed),
        steady_window: window,
        ckf_posterior_trace,
        cells,
        runtime: RuntimeInfo {
            threads: threads.max(1),
            elapsed_seconds: started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    })
}

fn theory_key(a: Algorithm) -> u8 {
    match a {
        Algorithm::McmDirect | Algorithm::McmStoch => 10,
        Algorithm::MciDirect | Algorithm::MciStoch => 11,
        other => other as u8,
    }
}

struct CellContext<'a> {
    algorithm: Algorithm,
    options: FilterOptions,
    setup: &'a Setup,
    network: &'a ConsensusNetwork,
    simulator: &'a Simulator,
    steps: usize,
    window: (usize, usize),
    base_seed: u64,
}

impl CellContext<'_> {
    fn trial_seed(&self, trial: usize) -> u64 {
        self.base_seed.wrapping_add(trial as u64)
    }

    fn trajectory(&self, trial: usize) -> Trajectory {
        let seed = self.trial_seed(trial);
        let mut rng = trajectory_stream(seed);
        self.simulator.run(&self.setup.plant, &self.setup.sensors, self.steps, &mut rng, seed)
    }

    fn in_window(&self, k: usize) -> bool {
        (self.window.0..=self.window.1).contains(&k)
    }
}

/// Sums over the trials of one chunk (or, after merging, of a whole cell).
struct Accumulator {
    /// K × N
    sse: DMatrix<f64>,
    trial_sum: Vec<f64>,
    err_moment: Vec<DMatrix<f64>>,
    reported: Vec<DMatrix<f64>>,
}

impl Accumulator {
    fn zeros(steps: usize, nodes: usize, n: usize, trials: usize) -> Self {
        Accumulator {
            sse: DMatrix::zeros(steps, nodes),
            trial_sum: vec![0.0; trials],
            err_moment: vec![DMatrix::zeros(n, n); nodes],
            reported: vec![DMatrix::zeros(n, n); nodes],
        }
    }

    fn merge(&mut self, other: Accumulator) {
        self.sse += other.sse;
        self.trial_sum.extend(other.trial_sum);
        for (a, b) in self.err_moment.iter_mut().zip(other.err_moment) {
            *a += b;
        }
        for (a, b) in self.reported.iter_mut().zip(other.reported) {
            *a += b;
        }
    }

    fn finish(self, ctx: &CellContext, trials: usize) -> CellReport {
        let nodes = self.sse.ncols();
        let t = trials as f64;
        let window_len = (ctx.window.1 - ctx.window.0 + 1) as f64;
        let mse: Vec<Vec<f64>> = (0..self.sse.nrows())
            .map(|k| (0..nodes).map(|i| self.sse[(k, i)] / t).collect())
            .collect();
        let trial_mmse: Vec<f64> = self.trial_sum.iter().map(|s| s / (window_len * nodes as f64)).collect();
        let mmse = trial_mmse.iter().sum::<f64>() / t;
        let mmse_std_error = if trials > 1 {
            let var = trial_mmse.iter().map(|m| (m - mmse).powi(2)).sum::<f64>() / (t - 1.0);
            (var / t).sqrt()
        } else {
            0.0
        };
        let node_mmse = (0..nodes)
            .map(|i| (ctx.window.0..=ctx.window.1).map(|k| mse[k - 1][i]).sum::<f64>() / window_len)
            .collect();
        let scale = 1.0 / (t * window_len);
        let empirical: Vec<DMatrix<f64>> = self.err_moment.into_iter().map(|m| linalg::symmetrized(m * scale)).collect();
        let reported: Vec<DMatrix<f64>> = self.reported.into_iter().map(|m| linalg::symmetrized(m * scale)).collect();
        let empirical_margin = empirical.iter().zip(&reported).map(|(e, r)| linalg::min_eigenvalue(&(r - e))).collect();
        CellReport {
            algorithm: ctx.algorithm,
            gamma: ctx.options.gamma,
            eta: 0.0,
            error: None,
            trials,
            mmse,
            mmse_std_error,
            node_mmse,
            trial_mmse,
            mse,
            empirical_covariance: empirical.iter().map(linalg::to_rows).collect(),
            reported_covariance: reported.iter().map(linalg::to_rows).collect(),
            empirical_margin,
            theory: None,
            theory_error: None,
        }
    }
}

impl CellReport {
    fn failed(algorithm: Algorithm, gamma: usize, eta: f64, trials: usize, message: String) -> Self {
        CellReport {
            algorithm,
            gamma,
            eta,
            error: Some(message),
            trials,
            mmse: 0.0,
            mmse_std_error: 0.0,
            node_mmse: vec![],
            trial_mmse: vec![],
            mse: vec![],
            empirical_covariance: vec![],
            reported_covariance: vec![],
            empirical_margin: vec![],
            theory: None,
            theory_error: None,
        }
    }
}

fn simulate_cell(ctx: &CellContext, trials: usize, pool: &rayon::ThreadPool) -> Result<Accumulator> {
    let chunks: Vec<Range<usize>> = (0..trials).step_by(TRIAL_CHUNK).map(|s| s..(s + TRIAL_CHUNK).min(trials)).collect();
    let parts: Vec<Result<Accumulator>> = pool.install(|| chunks.par_iter().map(|r| run_chunk(ctx, r.clone())).collect());
    let mut parts = parts.into_iter();
    let mut total = parts.next().expect("at least one trial")?;
    for p in parts {
        total.merge(p?);
    }
    Ok(total)
}

fn run_chunk(ctx: &CellContext, trials: Range<usize>) -> Result<Accumulator> {
    let s = ctx.setup;
    let trajectories: Vec<Trajectory> = trials.clone().map(|t| ctx.trajectory(t)).collect();
    let mut acc = Accumulator::zeros(ctx.steps, s.sensors.node_count(), s.plant.state_dim(), trajectories.len());
    if ctx.algorithm.is_stochastic() {
        for (b, t) in trials.enumerate() {
            let mut filter =
                DistributedFilter::new(ctx.algorithm, &s.plant, &s.sensors, ctx.network, ctx.options, 1, ctx.trial_seed(t))?;
            drive(ctx, &mut filter, &trajectories[b..b + 1], &mut acc, b)?;
        }
    } else {
        let mut filter = DistributedFilter::new(
            ctx.algorithm,
            &s.plant,
            &s.sensors,
            ctx.network,
            ctx.options,
            trajectories.len(),
            ctx.base_seed,
        )?;
        drive(ctx, &mut filter, &trajectories, &mut acc, 0)?;
    }
    Ok(acc)
}

/// Runs `filter` over the trajectories (one per batch column) and adds the
/// errors into `acc`, whose trial slots start at `offset`.
fn drive(
    ctx: &CellContext,
    filter: &mut DistributedFilter,
    trajectories: &[Trajectory],
    acc: &mut Accumulator,
    offset: usize,
) -> Result<()> {
    let sensors = &ctx.setup.sensors;
    let nodes = sensors.node_count();
    let n = ctx.setup.plant.state_dim();
    let batch = trajectories.len();
    for k in 1..=ctx.steps {
        let ys: Vec<DMatrix<f64>> = (0..nodes)
            .map(|j| DMatrix::from_fn(sensors.c(j).nrows(), batch, |r, b| trajectories[b].measurements[k - 1][j][r]))
            .collect();
        filter.step(&ys)?;
        let truth = DMatrix::from_fn(n, batch, |r, b| trajectories[b].states[k][r]);
        let steady = ctx.in_window(k);
        for i in 0..nodes {
            let state = filter.state(i);
            let err = &state.x_post - &truth;
            for b in 0..batch {
                let e2 = err.column(b).norm_squared();
                acc.sse[(k - 1, i)] += e2;
                if steady {
                    acc.trial_sum[offset + b] += e2;
                }
            }
            if steady {
                acc.err_moment[i].gemm(1.0, &err, &err.transpose(), 1.0);
                acc.reported[i] += &state.p_post * batch as f64;
            }
        }
    }
    Ok(())
}
