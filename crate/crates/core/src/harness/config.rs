use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DkfError, Result};
use crate::filters::{Algorithm, FilterOptions};
use crate::fusion::FusedModel;
use crate::linalg;
use crate::network::{ConsensusNetwork, TopologyKind};
use crate::qws;
use crate::system::{cyclic_sensor_types, make_tracking_model, make_tracking_sensors, PlantModel, SensorSuite, SensorType};

/// Where the consensus graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkSpec {
    /// Seeds are tried in order from `seed`; with `require_local_observability`
    /// the first graph on which every node's γ = 1 fused model is observable
    /// is kept.
    RandomGeometric {
        nodes: usize,
        #[serde(default = "default_side")]
        side_length: f64,
        #[serde(default = "default_radius")]
        comm_radius: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        require_local_observability: bool,
        #[serde(default = "default_search_limit")]
        search_limit: u64,
    },
    Named {
        topology: TopologyKind,
        nodes: usize,
        #[serde(default)]
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

fn default_side() -> f64 {
    300.0
}

fn default_radius() -> f64 {
    100.0
}

fn default_search_limit() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(rename = "T")]
    pub sampling_interval: f64,
    pub horizon_steps: usize,
    #[serde(default = "default_x0")]
    pub x0_mean: Vec<f64>,
    #[serde(rename = "P0_scale", default = "default_p0_scale")]
    pub p0_scale: f64,
    /// Cycled 1, 2, 3 over node indices when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_types: Option<Vec<SensorType>>,
}

fn default_x0() -> Vec<f64> {
    vec![150.0, 0.0, 150.0, 0.0]
}

fn default_p0_scale() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QwsBenchSpec {
    #[serde(default = "default_bench_gamma")]
    pub gamma: usize,
    #[serde(default = "default_bench_steps")]
    pub steps: usize,
    #[serde(default = "default_bench_replicas")]
    pub replicas: usize,
}

impl Default for QwsBenchSpec {
    fn default() -> Self {
        QwsBenchSpec { gamma: default_bench_gamma(), steps: default_bench_steps(), replicas: default_bench_replicas() }
    }
}

fn default_bench_gamma() -> usize {
    5
}

fn default_bench_steps() -> usize {
    60
}

fn default_bench_replicas() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub network: NetworkSpec,
    pub model: ModelSpec,
    #[serde(default = "default_gammas")]
    pub gammas: Vec<usize>,
    #[serde(default = "default_etas")]
    pub etas: Vec<f64>,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Inclusive 1-based step range; defaults to the last quarter of the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steady_window: Option<(usize, usize)>,
    /// HCMCI weight; N when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default)]
    pub freeze_qws: bool,
    /// Seed of the direct-method rows; `base_seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pinv_rel_tol: Option<f64>,
    #[serde(default)]
    pub naive_mode: bool,
    #[serde(default)]
    pub qws_bench: QwsBenchSpec,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_gammas() -> Vec<usize> {
    vec![1]
}

fn default_etas() -> Vec<f64> {
    vec![0.0]
}

fn default_algorithms() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}

fn default_trials() -> usize {
    1000
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_json(&text)?;
        // Graph files are resolved relative to the config file.
        if let NetworkSpec::File { path: p } = &mut config.network {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DkfError::Config(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.model.horizon_steps == 0 {
            return bad("horizon_steps must be at least 1".into());
        }
        if self.gammas.iter().any(|&g| g == 0) {
            return bad("every gamma must be at least 1".into());
        }
        if let Some(e) = self.etas.iter().find(|e| !(0.0..1.0).contains(*e)) {
            return bad(format!("eta {e} outside [0, 1)"));
        }
        if self.model.x0_mean.len() != 4 {
            return bad("x0_mean must have 4 entries".into());
        }
        if !(self.model.p0_scale > 0.0) {
            return bad("P0_scale must be positive".into());
        }
        if let Some((a, b)) = self.steady_window {
            if a == 0 || a > b || b > self.model.horizon_steps {
                return bad(format!("steady window [{a}, {b}] outside 1..={}", self.model.horizon_steps));
            }
        }
        if let Some(w) = self.omega {
            if !(w > 0.0) {
                return bad("omega must be positive".into());
            }
        }
        let q = &self.qws_bench;
        if q.gamma == 0 || q.steps == 0 || q.replicas == 0 {
            return bad("qws_bench gamma, steps and replicas must be positive".into());
        }
        Ok(())
    }

    pub fn steady_window(&self) -> (usize, usize) {
        self.steady_window.unwrap_or_else(|| {
            let k = self.model.horizon_steps;
            let len = (k / 4).max(1);
            (k - len + 1, k)
        })
    }

    pub fn q_seed(&self) -> u64 {
        self.q_seed.unwrap_or(self.base_seed)
    }

    pub fn filter_options(&self, gamma: usize) -> FilterOptions {
        FilterOptions {
            gamma,
            omega: self.omega,
            freeze_qws: self.freeze_qws,
            q_seed: self.q_seed(),
            pinv_rel_tol: self.pinv_rel_tol.unwrap_or_else(|| qws::default_pinv_tol(4)),
            naive_mode: self.naive_mode,
        }
    }

    pub fn plant(&self) -> Result<PlantModel> {
        let m = &self.model;
        make_tracking_model(m.sampling_interval)?
            .with_initial(DVector::from_vec(m.x0_mean.clone()), DMatrix::identity(4, 4) * m.p0_scale)
    }

    pub fn sensors(&self, plant: &PlantModel, node_count: usize) -> Result<SensorSuite> {
        let types = match &self.model.node_types {
            Some(t) if t.len() != node_count => {
                return Err(DkfError::Config(format!(
                    "node_types lists {} nodes but the network has {node_count}",
                    t.len()
                )))
            }
            Some(t) => t.clone(),
            None => cyclic_sensor_types(node_count),
        };
        make_tracking_sensors(plant, &types)
    }

    /// Plant, sensors and the (η = 0) network.
    pub fn setup(&self) -> Result<Setup> {
        let plant = self.plant()?;
        match &self.network {
            NetworkSpec::File { path } => {
                let network = ConsensusNetwork::load(path)?;
                let sensors = self.sensors(&plant, network.node_count())?;
                Ok(Setup { plant, sensors, network, network_seed: None })
            }
            NetworkSpec::Named { topology, nodes, seed } => {
                let network = ConsensusNetwork::build_named_topology(*topology, *nodes, *seed)?;
                let sensors = self.sensors(&plant, *nodes)?;
                Ok(Setup { plant, sensors, network, network_seed: Some(*seed) })
            }
            NetworkSpec::RandomGeometric {
                nodes,
                side_length,
                comm_radius,
                seed,
                require_local_observability,
                search_limit,
            } => {
                let sensors = self.sensors(&plant, *nodes)?;
                for s in *seed..seed.saturating_add(*search_limit) {
                    let network = match ConsensusNetwork::build_random_geometric(*nodes, *side_length, *comm_radius, s) {
                        Ok(n) => n,
                        Err(DkfError::Disconnected(_)) => continue,
                        Err(e) => return Err(e),
                    };
                    if !require_local_observability || locally_observable(&plant, &sensors, &network) {
                        return Ok(Setup { plant, sensors, network, network_seed: Some(s) });
                    }
                }
                Err(DkfError::Config(format!(
                    "no suitable geometric graph among seeds {seed}..{}",
                    seed.saturating_add(*search_limit)
                )))
            }
        }
    }
}

/// Every node's γ = 1 fused pair (A, C̃_i) is observable.
pub fn locally_observable(plant: &PlantModel, sensors: &SensorSuite, network: &ConsensusNetwork) -> bool {
    let fused = FusedModel::new(network, sensors, 1);
    fused.c_tilde.iter().all(|c| linalg::is_observable(&plant.a, c))
}

#[derive(Debug, Clone)]
pub struct Setup {
    pub plant: PlantModel,
    pub sensors: SensorSuite,
    pub network: ConsensusNetwork,
    /// Seed that produced the graph, for generated graphs.
    pub network_seed: Option<u64>,
}
