//! The distributed filters as per-node state machines.
//!
//! Every time step runs prediction, γ synchronous fusion rounds, the
//! covariance step of the modified filters, and the correction. Estimates are
//! n×B matrices: B independent trials advance together whenever the
//! covariance recursion does not depend on the measurements (every algorithm
//! except the stochastic modes, which therefore require B = 1).

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DkfError, Result};
use crate::fusion::FusionBuffer;
use crate::linalg;
use crate::network::ConsensusNetwork;
use crate::qws::{self, DirectQws, StochasticQws};
use crate::system::{PlantModel, SensorSuite, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Algorithm {
    Ckf,
    Cm,
    Ci,
    Hcmci,
    McmDirect,
    McmStoch,
    MciDirect,
    MciStoch,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Ckf,
        Algorithm::Cm,
        Algorithm::Ci,
        Algorithm::Hcmci,
        Algorithm::McmDirect,
        Algorithm::McmStoch,
        Algorithm::MciDirect,
        Algorithm::MciStoch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ckf => "ckf",
            Algorithm::Cm => "cm",
            Algorithm::Ci => "ci",
            Algorithm::Hcmci => "hcmci",
            Algorithm::McmDirect => "mcm-direct",
            Algorithm::McmStoch => "mcm-stoch",
            Algorithm::MciDirect => "mci-direct",
            Algorithm::MciStoch => "mci-stoch",
        }
    }

    /// Fuses prior information pairs (J, Ṽ).
    pub fn is_ci_family(self) -> bool {
        matches!(self, Algorithm::Ci | Algorithm::Hcmci | Algorithm::MciDirect | Algorithm::MciStoch)
    }

    pub fn is_modified(self) -> bool {
        matches!(self, Algorithm::McmDirect | Algorithm::McmStoch | Algorithm::MciDirect | Algorithm::MciStoch)
    }

    /// The covariance path depends on per-trial random draws.
    pub fn is_stochastic(self) -> bool {
        matches!(self, Algorithm::McmStoch | Algorithm::MciStoch)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = DkfError;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .iter()
            .copied()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| DkfError::InvalidArgument(format!("unknown algorithm `{s}`")))
    }
}

impl TryFrom<String> for Algorithm {
    type Error = DkfError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Algorithm> for String {
    fn from(a: Algorithm) -> String {
        a.as_str().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOptions {
    pub gamma: usize,
    /// HCMCI measurement weight; `None` means N.
    pub omega: Option<f64>,
    pub freeze_qws: bool,
    /// Seed of the random rows used by the direct method.
    pub q_seed: u64,
    pub pinv_rel_tol: f64,
    /// Give random rows only to nodes with nonzero information.
    pub naive_mode: bool,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions {
            gamma: 1,
            omega: None,
            freeze_qws: false,
            q_seed: 0,
            pinv_rel_tol: qws::default_pinv_tol(4),
            naive_mode: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeFilterState {
    pub node: usize,
    /// n×B, one column per trial.
    pub x_prior: DMatrix<f64>,
    pub p_prior: DMatrix<f64>,
    pub x_post: DMatrix<f64>,
    pub p_post: DMatrix<f64>,
    /// Ṽ^(γ) of the last step (CI family).
    pub fused_prior_info: Option<DMatrix<f64>>,
    /// Information added by the last correction (C̃ᵀŨ†C̃, N·C̃, ω·C̃ …).
    pub measurement_info: Option<DMatrix<f64>>,
}

enum QwsEstimator {
    None,
    Direct(DirectQws),
    Stochastic(StochasticQws, ChaCha8Rng),
}

pub struct DistributedFilter<'a> {
    algorithm: Algorithm,
    options: FilterOptions,
    omega: f64,
    plant: &'a PlantModel,
    sensors: &'a SensorSuite,
    lt: DMatrix<f64>,
    c_tilde: Vec<DMatrix<f64>>,
    total_info: DMatrix<f64>,
    qws: QwsEstimator,
    states: Vec<NodeFilterState>,
    batch: usize,
    step: usize,
}

impl<'a> DistributedFilter<'a> {
    /// `rng_seed` drives the per-step draws of the stochastic modes.
    pub fn new(
        algorithm: Algorithm,
        plant: &'a PlantModel,
        sensors: &'a SensorSuite,
        network: &'a ConsensusNetwork,
        options: FilterOptions,
        batch: usize,
        rng_seed: u64,
    ) -> Result<Self> {
        let nodes = network.node_count();
        if sensors.node_count() != nodes {
            return Err(DkfError::InvalidArgument("sensor suite and network sizes differ".into()));
        }
        if options.gamma == 0 && algorithm != Algorithm::Ckf {
            return Err(DkfError::InvalidArgument("gamma must be at least 1".into()));
        }
        if batch == 0 {
            return Err(DkfError::InvalidArgument("batch must be at least 1".into()));
        }
        if algorithm.is_stochastic() && batch != 1 {
            return Err(DkfError::InvalidArgument(format!("{algorithm} runs one trial per filter")));
        }
        let omega = match algorithm {
            Algorithm::Hcmci => options.omega.unwrap_or(nodes as f64),
            _ => 1.0,
        };
        if !(omega > 0.0) {
            return Err(DkfError::InvalidArgument("omega must be positive".into()));
        }
        let lt = network.weights().transpose();
        // S^(0) = C_iᵀR_i⁻¹C_i fused γ rounds; it does not change over time.
        let mut s = FusionBuffer::from_payloads(sensors.informations());
        s.fuse(&lt, options.gamma);
        let c_tilde = (0..nodes).map(|i| linalg::symmetrized(s.payload(i))).collect();
        let factors: Vec<DMatrix<f64>> = sensors
            .informations()
            .iter()
            .map(qws::factor_info)
            .collect::<Result<_>>()?;
        let qws = match algorithm {
            Algorithm::McmDirect | Algorithm::MciDirect => QwsEstimator::Direct(
                DirectQws::init(network, &factors, options.gamma, options.q_seed, options.naive_mode)?
                    .with_pinv_tol(options.pinv_rel_tol)
                    .with_freeze(options.freeze_qws),
            ),
            Algorithm::McmStoch | Algorithm::MciStoch => QwsEstimator::Stochastic(
                StochasticQws::new(&factors, options.gamma)?.with_freeze(options.freeze_qws),
                crate::rng::filter_stream(rng_seed),
            ),
            _ => QwsEstimator::None,
        };
        let x0 = DMatrix::from_fn(plant.state_dim(), batch, |r, _| plant.x0_mean[r]);
        let state_count = if algorithm == Algorithm::Ckf { 1 } else { nodes };
        let states = (0..state_count)
            .map(|node| NodeFilterState {
                node,
                x_prior: x0.clone(),
                p_prior: plant.p0.clone(),
                x_post: x0.clone(),
                p_post: plant.p0.clone(),
                fused_prior_info: None,
                measurement_info: None,
            })
            .collect();
        Ok(DistributedFilter {
            algorithm,
            options,
            omega,
            plant,
            sensors,
            lt,
            c_tilde,
            total_info: sensors.total_information(),
            qws,
            states,
            batch,
            step: 0,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn options(&self) -> &FilterOptions {
        &self.options
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn time_step(&self) -> usize {
        self.step
    }

    pub fn node_count(&self) -> usize {
        self.sensors.node_count()
    }

    /// State of node i; the CKF keeps one state shared by all nodes.
    pub fn state(&self, i: usize) -> &NodeFilterState {
        if self.states.len() == 1 {
            &self.states[0]
        } else {
            &self.states[i]
        }
    }

    /// C̃_i = S_i^(γ).
    pub fn fused_information(&self, i: usize) -> &DMatrix<f64> {
        &self.c_tilde[i]
    }

    /// Current Ũ_{i,k} or Υ̃_{i,k}.
    pub fn qws_estimates(&self) -> Option<&[DMatrix<f64>]> {
        match &self.qws {
            QwsEstimator::None => None,
            QwsEstimator::Direct(d) => Some(d.estimates()),
            QwsEstimator::Stochastic(s, _) => Some(s.estimates()),
        }
    }

    /// Advances one time step. `measurements[j]` is m_j × B (y_{j,k} per trial).
    pub fn step(&mut self, measurements: &[DMatrix<f64>]) -> Result<()> {
        let nodes = self.node_count();
        if measurements.len() != nodes || measurements.iter().any(|y| y.ncols() != self.batch) {
            return Err(DkfError::InvalidArgument("one m_j x B measurement block per node required".into()));
        }
        self.step += 1;
        for s in &mut self.states {
            s.x_prior = &self.plant.a * &s.x_post;
            s.p_prior = linalg::symmetrized(&self.plant.a * &s.p_post * self.plant.a.transpose() + &self.plant.q);
        }
        let normalized: Vec<DMatrix<f64>> = (0..nodes).map(|j| self.sensors.normalizer(j) * &measurements[j]).collect();
        match self.algorithm {
            Algorithm::Ckf => self.ckf_correction(&normalized),
            Algorithm::Cm => self.cm_correction(&normalized),
            Algorithm::Ci | Algorithm::Hcmci => self.ci_correction(&normalized),
            Algorithm::McmDirect | Algorithm::McmStoch => self.modified_cm_correction(&normalized),
            Algorithm::MciDirect | Algorithm::MciStoch => self.modified_ci_correction(&normalized),
        }
    }

    fn fuse_measurements(&self, normalized: &[DMatrix<f64>]) -> FusionBuffer {
        let mut y = FusionBuffer::from_payloads(normalized);
        y.fuse(&self.lt, self.options.gamma);
        y
    }

    fn ckf_correction(&mut self, normalized: &[DMatrix<f64>]) -> Result<()> {
        let sum = normalized.iter().skip(1).fold(normalized[0].clone(), |acc, z| acc + z);
        let s = &mut self.states[0];
        let p_inv = linalg::inv_spd_fast(&s.p_prior)?;
        s.p_post = linalg::inv_spd_fast(&(&p_inv + &self.total_info))?;
        s.x_post = &s.p_post * (&p_inv * &s.x_prior + sum);
        s.measurement_info = Some(self.total_info.clone());
        Ok(())
    }

    /// Local correction with prior information (V, J) and measurement
    /// information `info` / vector `gain · ỹ`.
    fn correct(state: &mut NodeFilterState, v: &DMatrix<f64>, j: DMatrix<f64>, info: DMatrix<f64>, gain_y: DMatrix<f64>) -> Result<()> {
        state.p_post = linalg::inv_spd_fast(&(v + &info))?;
        state.x_post = &state.p_post * (j + gain_y);
        state.measurement_info = Some(info);
        Ok(())
    }

    fn cm_correction(&mut self, normalized: &[DMatrix<f64>]) -> Result<()> {
        let y = self.fuse_measurements(normalized);
        let n_nodes = self.node_count() as f64;
        for (i, s) in self.states.iter_mut().enumerate() {
            let p_inv = linalg::inv_spd_fast(&s.p_prior)?;
            let j = &p_inv * &s.x_prior;
            Self::correct(s, &p_inv, j, &self.c_tilde[i] * n_nodes, y.payload(i) * n_nodes)?;
        }
        Ok(())
    }

    /// Fuses J = P⁻¹x̂ and Ṽ = P⁻¹ over γ rounds.
    fn fuse_prior_information(&self) -> Result<(FusionBuffer, FusionBuffer)> {
        let inverses = self.states.iter().map(|s| linalg::inv_spd_fast(&s.p_prior)).collect::<Result<Vec<_>>>()?;
        let js: Vec<_> = inverses.iter().zip(&self.states).map(|(v, s)| v * &s.x_prior).collect();
        let mut j = FusionBuffer::from_payloads(&js);
        let mut v = FusionBuffer::from_payloads(&inverses);
        j.fuse(&self.lt, self.options.gamma);
        v.fuse(&self.lt, self.options.gamma);
        Ok((j, v))
    }

    fn ci_correction(&mut self, normalized: &[DMatrix<f64>]) -> Result<()> {
        let y = self.fuse_measurements(normalized);
        let (j, v) = self.fuse_prior_information()?;
        let omega = self.omega;
        for (i, s) in self.states.iter_mut().enumerate() {
            let v_i = linalg::symmetrized(v.payload(i));
            let info = &self.c_tilde[i] * omega;
            let gain_y = y.payload(i) * omega;
            Self::correct(s, &v_i, j.payload(i), info, gain_y)?;
            s.fused_prior_info = Some(v_i);
        }
        Ok(())
    }

    /// Runs the covariance step and returns (C̃ᵀŨ†C̃, C̃ᵀŨ†) per node.
    fn covariance_step(&mut self) -> Result<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
        let estimates: Vec<DMatrix<f64>> = match &mut self.qws {
            QwsEstimator::Direct(d) => d.step_with_weights(&self.lt).to_vec(),
            QwsEstimator::Stochastic(s, rng) => s.step_with_weights(&self.lt, rng).to_vec(),
            QwsEstimator::None => unreachable!("modified filters carry a QWS estimator"),
        };
        let tol = self.options.pinv_rel_tol;
        Ok(estimates
            .iter()
            .zip(&self.c_tilde)
            .map(|(u, c)| {
                let gain = c.transpose() * linalg::pinv_sym(u, tol);
                (linalg::symmetrized(&gain * c), gain)
            })
            .collect())
    }

    fn modified_cm_correction(&mut self, normalized: &[DMatrix<f64>]) -> Result<()> {
        let y = self.fuse_measurements(normalized);
        let terms = self.covariance_step()?;
        for (i, (s, (info, gain))) in self.states.iter_mut().zip(terms).enumerate() {
            let p_inv = linalg::inv_spd_fast(&s.p_prior)?;
            let j = &p_inv * &s.x_prior;
            Self::correct(s, &p_inv, j, info, gain * y.payload(i))?;
        }
        Ok(())
    }

    fn modified_ci_correction(&mut self, normalized: &[DMatrix<f64>]) -> Result<()> {
        let y = self.fuse_measurements(normalized);
        let (j, v) = self.fuse_prior_information()?;
        let terms = self.covariance_step()?;
        for (i, (s, (info, gain))) in self.states.iter_mut().zip(terms).enumerate() {
            let v_i = linalg::symmetrized(v.payload(i));
            Self::correct(s, &v_i, j.payload(i), info, gain * y.payload(i))?;
            s.fused_prior_info = Some(v_i);
        }
        Ok(())
    }
}

/// Per-step posterior history of one filter run over a single trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterHistory {
    pub algorithm: Algorithm,
    /// estimates[k - 1][i] = x̂_{i,k|k}
    pub estimates: Vec<Vec<nalgebra::DVector<f64>>>,
    /// covariances[k - 1][i] = P_{i,k|k}
    pub covariances: Vec<Vec<DMatrix<f64>>>,
}

impl FilterHistory {
    /// ‖x̂_{i,k|k} − x_k‖² per step and node.
    pub fn squared_errors(&self, trajectory: &Trajectory) -> Vec<Vec<f64>> {
        self.estimates
            .iter()
            .enumerate()
            .map(|(k, nodes)| nodes.iter().map(|x| (x - &trajectory.states[k + 1]).norm_squared()).collect())
            .collect()
    }
}

/// Drives one filter over a trajectory and records every posterior.
pub fn run_filter(
    algorithm: Algorithm,
    trajectory: &Trajectory,
    network: &ConsensusNetwork,
    plant: &PlantModel,
    sensors: &SensorSuite,
    options: FilterOptions,
    rng_seed: u64,
) -> Result<FilterHistory> {
    let mut filter = DistributedFilter::new(algorithm, plant, sensors, network, options, 1, rng_seed)?;
    let nodes = sensors.node_count();
    let mut estimates = Vec::with_capacity(trajectory.steps());
    let mut covariances = Vec::with_capacity(trajectory.steps());
    for ys in &trajectory.measurements {
        let blocks: Vec<DMatrix<f64>> = ys.iter().map(|y| DMatrix::from_column_slice(y.len(), 1, y.as_slice())).collect();
        filter.step(&blocks)?;
        estimates.push((0..nodes).map(|i| filter.state(i).x_post.column(0).into_owned()).collect());
        covariances.push((0..nodes).map(|i| filter.state(i).p_post.clone()).collect());
    }
    Ok(FilterHistory { algorithm, estimates, covariances })
}
