//! Sensor-network topologies and doubly stochastic consensus weights.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DkfError, Result};
use crate::linalg;

/// Placements tried by [`ConsensusNetwork::build_random_geometric`].
pub const GEOMETRIC_MAX_RETRIES: usize = 100;
/// Redraws tried by the small-world generator before giving up.
pub const SMALL_WORLD_MAX_RETRIES: usize = 100;
pub const SMALL_WORLD_REWIRE_PROBABILITY: f64 = 0.2;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Undirected edge stored with `i < j`, 0-based.
pub type Edge = (usize, usize);

fn normalize_edge(a: usize, b: usize) -> Edge {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Line,
    Circle,
    SmallWorld,
    Complete,
}

impl FromStr for TopologyKind {
    type Err = DkfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line" => Ok(TopologyKind::Line),
            "circle" => Ok(TopologyKind::Circle),
            "small_world" | "small-world" => Ok(TopologyKind::SmallWorld),
            "complete" => Ok(TopologyKind::Complete),
            other => Err(DkfError::UnknownTopology(other.to_string())),
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TopologyKind::Line => "line",
            TopologyKind::Circle => "circle",
            TopologyKind::SmallWorld => "small_world",
            TopologyKind::Complete => "complete",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralData {
    /// Second-largest eigenvalue magnitude of the weight matrix.
    pub lambda2: f64,
    /// Hop diameter; `None` when the graph is disconnected.
    pub diameter: Option<usize>,
    pub connected: bool,
}

/// Undirected graph with a symmetric doubly stochastic weight matrix.
///
/// Immutable after construction apart from the matrix-power cache, which is
/// behind a lock so the network can be shared across Monte Carlo workers.
pub struct ConsensusNetwork {
    node_count: usize,
    edges: BTreeSet<Edge>,
    weights: DMatrix<f64>,
    /// Nonzero entries of each weight row, self included.
    rows: Vec<Vec<(usize, f64)>>,
    powers: RwLock<HashMap<usize, Arc<DMatrix<f64>>>>,
}

impl Clone for ConsensusNetwork {
    fn clone(&self) -> Self {
        let cache = self.powers.read().expect("power cache poisoned").clone();
        ConsensusNetwork {
            node_count: self.node_count,
            edges: self.edges.clone(),
            weights: self.weights.clone(),
            rows: self.rows.clone(),
            powers: RwLock::new(cache),
        }
    }
}

impl fmt::Debug for ConsensusNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConsensusNetwork")
            .field("node_count", &self.node_count)
            .field("edges", &self.edges)
            .finish_non_exhaustive()
    }
}

/// l_ij = 1/(1 + max(deg_i, deg_j)) on edges; the diagonal takes the remainder.
pub fn metropolis_weights(edges: &BTreeSet<Edge>, node_count: usize) -> DMatrix<f64> {
    let mut degree = vec![0usize; node_count];
    for &(i, j) in edges {
        degree[i] += 1;
        degree[j] += 1;
    }
    let mut w = DMatrix::zeros(node_count, node_count);
    for &(i, j) in edges {
        let v = 1.0 / (1.0 + degree[i].max(degree[j]) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..node_count {
        let off: f64 = (0..node_count).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

/// ηI + (1 − η)L.
pub fn blend_weights(weights: &DMatrix<f64>, eta: f64) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&eta) {
        return Err(DkfError::InvalidArgument(format!("eta = {eta} outside [0, 1)")));
    }
    let n = weights.nrows();
    let blended = DMatrix::identity(n, n) * eta + weights * (1.0 - eta);
    check_doubly_stochastic(&blended)?;
    Ok(blended)
}

fn check_doubly_stochastic(w: &DMatrix<f64>) -> Result<()> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(DkfError::InvalidArgument("weight matrix is not square".into()));
    }
    for i in 0..n {
        let row: f64 = w.row(i).sum();
        let col: f64 = w.column(i).sum();
        if (row - 1.0).abs() > STOCHASTIC_TOL || (col - 1.0).abs() > STOCHASTIC_TOL {
            return Err(DkfError::InvalidArgument(format!(
                "weights are not doubly stochastic at node {i} (row {row}, column {col})"
            )));
        }
    }
    Ok(())
}

fn bfs_distances(adjacency: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adjacency.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].unwrap();
        for &v in &adjacency[u] {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

fn is_connected(edges: &BTreeSet<Edge>, node_count: usize) -> bool {
    let adjacency = adjacency_lists(edges, node_count);
    node_count <= 1 || bfs_distances(&adjacency, 0).iter().all(Option::is_some)
}

fn adjacency_lists(edges: &BTreeSet<Edge>, node_count: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); node_count];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    adj
}

impl ConsensusNetwork {
    /// Network with Metropolis weights on the given undirected edge set.
    pub fn with_metropolis(node_count: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let edges = Self::collect_edges(node_count, edges)?;
        let weights = metropolis_weights(&edges, node_count);
        Self::from_parts(node_count, edges, weights)
    }

    /// Network with explicit weights; the edge set is read off the
    /// off-diagonal support.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self> {
        let n = weights.nrows();
        let mut edges = BTreeSet::new();
        for i in 0..n {
            for j in (i + 1)..n.min(weights.ncols()) {
                if weights[(i, j)] != 0.0 || weights[(j, i)] != 0.0 {
                    edges.insert((i, j));
                }
            }
        }
        Self::from_parts(n, edges, weights)
    }

    fn collect_edges(node_count: usize, edges: impl IntoIterator<Item = Edge>) -> Result<BTreeSet<Edge>> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(DkfError::InvalidArgument(format!(
                    "edge ({a}, {b}) out of range for {node_count} nodes"
                )));
            }
            if a == b {
                return Err(DkfError::InvalidArgument(format!("self-loop at node {a}")));
            }
            set.insert(normalize_edge(a, b));
        }
        Ok(set)
    }

    fn from_parts(node_count: usize, edges: BTreeSet<Edge>, weights: DMatrix<f64>) -> Result<Self> {
        if node_count == 0 {
            return Err(DkfError::InvalidArgument("network needs at least one node".into()));
        }
        if weights.shape() != (node_count, node_count) {
            return Err(DkfError::InvalidArgument("weight matrix shape mismatch".into()));
        }
        if linalg::relative_asymmetry(&weights) > STOCHASTIC_TOL {
            return Err(DkfError::InvalidArgument("weight matrix is not symmetric".into()));
        }
        check_doubly_stochastic(&weights)?;
        for i in 0..node_count {
            if weights[(i, i)] <= 0.0 {
                return Err(DkfError::InvalidArgument(format!("l_ii must be positive at node {i}")));
            }
            for j in 0..node_count {
                let w = weights[(i, j)];
                if w < 0.0 {
                    return Err(DkfError::InvalidArgument(format!("negative weight at ({i}, {j})")));
                }
                if i != j && (w > 0.0) != edges.contains(&normalize_edge(i, j)) {
                    return Err(DkfError::InvalidArgument(format!(
                        "weight support disagrees with edge set at ({i}, {j})"
                    )));
                }
            }
        }
        let rows = (0..node_count)
            .map(|i| {
                (0..node_count)
                    .filter(|&j| weights[(i, j)] != 0.0)
                    .map(|j| (j, weights[(i, j)]))
                    .collect()
            })
            .collect();
        Ok(ConsensusNetwork {
            node_count,
            edges,
            weights,
            rows,
            powers: RwLock::new(HashMap::new()),
        })
    }

    /// Uniform placement in a square; edges join nodes within `comm_radius`.
    /// Placement is redrawn until the graph is connected.
    pub fn build_random_geometric(
        node_count: usize,
        side_length: f64,
        comm_radius: f64,
        rng_seed: u64,
    ) -> Result<Self> {
        if node_count < 2 {
            return Err(DkfError::InvalidArgument("random geometric graph needs >= 2 nodes".into()));
        }
        if !(side_length > 0.0 && comm_radius > 0.0) {
            return Err(DkfError::InvalidArgument("side length and radius must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        for _ in 0..GEOMETRIC_MAX_RETRIES {
            let points: Vec<(f64, f64)> = (0..node_count)
                .map(|_| (rng.random::<f64>() * side_length, rng.random::<f64>() * side_length))
                .collect();
            let mut edges = BTreeSet::new();
            for i in 0..node_count {
                for j in (i + 1)..node_count {
                    let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
                    if dx.hypot(dy) <= comm_radius {
                        edges.insert((i, j));
                    }
                }
            }
            if is_connected(&edges, node_count) {
                let weights = metropolis_weights(&edges, node_count);
                return Self::from_parts(node_count, edges, weights);
            }
        }
        Err(DkfError::Disconnected(GEOMETRIC_MAX_RETRIES))
    }

    pub fn build_named_topology(kind: TopologyKind, node_count: usize, rng_seed: u64) -> Result<Self> {
        if node_count < 2 {
            return Err(DkfError::InvalidArgument("named topologies need >= 2 nodes".into()));
        }
        let n = node_count;
        let edges: Vec<Edge> = match kind {
            TopologyKind::Line => (0..n - 1).map(|i| (i, i + 1)).collect(),
            TopologyKind::Circle => (0..n).map(|i| (i, (i + 1) % n)).filter(|(a, b)| a != b).collect(),
            TopologyKind::Complete => (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect(),
            TopologyKind::SmallWorld => return Self::build_small_world(n, rng_seed),
        };
        Self::with_metropolis(n, edges)
    }

    /// Watts–Strogatz: ring lattice of degree 4, each lattice edge rewired
    /// with probability 0.2, redrawn until connected.
    fn build_small_world(n: usize, rng_seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        for _ in 0..SMALL_WORLD_MAX_RETRIES {
            let mut edges = BTreeSet::new();
            for i in 0..n {
                for step in 1..=2 {
                    let j = (i + step) % n;
                    if i != j {
                        edges.insert(normalize_edge(i, j));
                    }
                }
            }
            let lattice: Vec<Edge> = edges.iter().copied().collect();
            for (i, j) in lattice {
                if rng.random::<f64>() >= SMALL_WORLD_REWIRE_PROBABILITY {
                    continue;
                }
                let candidates: Vec<usize> = (0..n)
                    .filter(|&t| t != i && !edges.contains(&normalize_edge(i, t)))
                    .collect();
                if candidates.is_empty() {
                    continue;
                }
                let t = candidates[rng.random_range(0..candidates.len())];
                edges.remove(&(i, j));
                edges.insert(normalize_edge(i, t));
            }
            if is_connected(&edges, n) {
                let weights = metropolis_weights(&edges, n);
                return Self::from_parts(n, edges, weights);
            }
        }
        Err(DkfError::Disconnected(SMALL_WORLD_MAX_RETRIES))
    }

    /// Copy of this network with weights ηI + (1 − η)L.
    pub fn blended(&self, eta: f64) -> Result<Self> {
        if eta == 0.0 {
            return Ok(self.clone());
        }
        let weights = blend_weights(&self.weights, eta)?;
        Self::from_parts(self.node_count, self.edges.clone(), weights)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn degree(&self, i: usize) -> usize {
        self.rows[i].len() - 1
    }

    /// Nonzero (j, l_ij) pairs of row i, self included.
    pub fn row_support(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// L^k, cached by exponent.
    pub fn power(&self, k: usize) -> Arc<DMatrix<f64>> {
        if let Some(p) = self.powers.read().expect("power cache poisoned").get(&k) {
            return Arc::clone(p);
        }
        let mut cache = self.powers.write().expect("power cache poisoned");
        if let Some(p) = cache.get(&k) {
            return Arc::clone(p);
        }
        // Start from the largest cached exponent below k.
        let (mut exp, mut acc) = cache
            .iter()
            .filter(|(&e, _)| e <= k)
            .max_by_key(|(&e, _)| e)
            .map(|(&e, m)| (e, (**m).clone()))
            .unwrap_or_else(|| (0, DMatrix::identity(self.node_count, self.node_count)));
        while exp < k {
            acc = &acc * &self.weights;
            exp += 1;
        }
        let acc = Arc::new(acc);
        cache.insert(k, Arc::clone(&acc));
        acc
    }

    /// Row i of L^k, i.e. (l_i1^(k), …, l_iN^(k)).
    pub fn consensus_row(&self, i: usize, k: usize) -> DVector<f64> {
        self.power(k).row(i).transpose()
    }

    pub fn spectral_data(&self) -> SpectralData {
        let n = self.node_count;
        let adjacency = adjacency_lists(&self.edges, n);
        let mut diameter = 0;
        let mut connected = true;
        for s in 0..n {
            for d in bfs_distances(&adjacency, s) {
                match d {
                    Some(d) => diameter = diameter.max(d),
                    None => connected = false,
                }
            }
        }
        let (values, _) = linalg::sym_eigen(&self.weights);
        let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        mags.sort_by(|a, b| b.total_cmp(a));
        let lambda2 = mags.get(1).copied().unwrap_or(0.0);
        let unit_multiplicity = values.iter().filter(|v| (*v - 1.0).abs() < 1e-9).count();
        debug_assert_eq!(connected, unit_multiplicity == 1, "spectral and BFS connectivity disagree");
        SpectralData {
            lambda2,
            diameter: connected.then_some(diameter),
            connected,
        }
    }

    /// One synchronous consensus round: Z_i ← Σ_j l_ij Z_j.
    pub fn fuse(&self, values: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        assert_eq!(values.len(), self.node_count, "one payload per node");
        self.rows
            .iter()
            .map(|row| {
                let mut acc = DMatrix::zeros(values[0].nrows(), values[0].ncols());
                for &(j, w) in row {
                    acc.zip_apply(&values[j], |a, b| *a += w * b);
                }
                acc
            })
            .collect()
    }

    pub fn fuse_rounds(&self, values: Vec<DMatrix<f64>>, rounds: usize) -> Vec<DMatrix<f64>> {
        (0..rounds).fold(values, |z, _| self.fuse(&z))
    }

    pub fn to_file(&self, eta: f64) -> NetworkFile {
        NetworkFile {
            n: self.node_count,
            edges: self.edges.iter().map(|&(i, j)| [i + 1, j + 1]).collect(),
            weights: WeightSpec::Explicit(linalg::to_rows(&self.weights)),
            eta,
        }
    }

    pub fn from_file(file: &NetworkFile) -> Result<Self> {
        let edges = file
            .edges
            .iter()
            .map(|&[a, b]| {
                if a == 0 || b == 0 {
                    Err(DkfError::InvalidArgument("graph files use 1-based node indices".into()))
                } else {
                    Ok((a - 1, b - 1))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let base = match &file.weights {
            WeightSpec::Named(name) if name == "metropolis" => Self::with_metropolis(file.n, edges)?,
            WeightSpec::Named(other) => {
                return Err(DkfError::InvalidArgument(format!("unknown weight rule `{other}`")))
            }
            WeightSpec::Explicit(rows) => {
                let net = Self::from_weights(linalg::from_rows(rows)?)?;
                let listed = Self::collect_edges(file.n, edges)?;
                if net.edges != listed {
                    return Err(DkfError::InvalidArgument("explicit weights disagree with edge list".into()));
                }
                net
            }
        };
        base.blended(file.eta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: NetworkFile = serde_json::from_str(&text)?;
        Self::from_file(&file)
    }
}

/// On-disk graph description; node indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    pub weights: WeightSpec,
    #[serde(default)]
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Named(String),
    Explicit(Vec<Vec<f64>>),
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn path3() -> ConsensusNetwork {
        ConsensusNetwork::with_metropolis(3, [(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn metropolis_on_path() {
        let w = path3().weights().clone();
        assert_relative_eq!(w[(0, 1)], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(w[(1, 2)], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(w[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(w[(2, 2)], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(w[(1, 1)], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(w[(0, 2)], 0.0);
    }

    #[test]
    fn metropolis_single_edge_and_complete() {
        let net = ConsensusNetwork::with_metropolis(2, [(0, 1)]).unwrap();
        assert_eq!(net.weights()[(0, 1)], 0.5);
        assert_eq!(net.weights()[(0, 0)], 0.5);
        let k5 = ConsensusNetwork::build_named_topology(TopologyKind::Complete, 5, 0).unwrap();
        for v in k5.weights().iter() {
            assert_relative_eq!(*v, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn named_edge_sets() {
        let line = ConsensusNetwork::build_named_topology(TopologyKind::Line, 3, 0).unwrap();
        assert_eq!(line.edges().iter().copied().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
        let circle = ConsensusNetwork::build_named_topology(TopologyKind::Circle, 4, 0).unwrap();
        assert_eq!(
            circle.edges().iter().copied().collect::<Vec<_>>(),
            vec![(0, 1), (0, 3), (1, 2), (2, 3)]
        );
        let k3 = ConsensusNetwork::build_named_topology(TopologyKind::Complete, 3, 0).unwrap();
        assert_eq!(k3.edges().len(), 3);
        for v in k3.weights().iter() {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!(matches!("star".parse::<TopologyKind>(), Err(DkfError::UnknownTopology(_))));
    }

    #[test]
    fn small_world_is_connected_and_reproducible() {
        let a = ConsensusNetwork::build_named_topology(TopologyKind::SmallWorld, 20, 3).unwrap();
        let b = ConsensusNetwork::build_named_topology(TopologyKind::SmallWorld, 20, 3).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert!(a.spectral_data().connected);
        // rewiring keeps the lattice edge count
        assert_eq!(a.edges().len(), 40);
    }

    #[test]
    fn blend_examples() {
        let k2 = ConsensusNetwork::with_metropolis(2, [(0, 1)]).unwrap();
        let b = blend_weights(k2.weights(), 0.5).unwrap();
        assert_relative_eq!(b[(0, 0)], 0.75, epsilon = 1e-15);
        assert_relative_eq!(b[(0, 1)], 0.25, epsilon = 1e-15);
        assert_eq!(blend_weights(k2.weights(), 0.0).unwrap(), *k2.weights());
        let p = path3();
        let b = blend_weights(p.weights(), 0.9).unwrap();
        for i in 0..3 {
            assert!(b[(i, i)] >= 0.9);
        }
        assert!(blend_weights(p.weights(), 1.0).is_err());
        assert!(blend_weights(p.weights(), -0.1).is_err());
    }

    #[test]
    fn consensus_rows() {
        let p = path3();
        assert_eq!(p.consensus_row(1, 0), DVector::from_vec(vec![0.0, 1.0, 0.0]));
        let k4 = ConsensusNetwork::build_named_topology(TopologyKind::Complete, 4, 0).unwrap();
        for v in k4.consensus_row(2, 1).iter() {
            assert_relative_eq!(*v, 0.25, epsilon = 1e-15);
        }
        for v in p.consensus_row(0, 200).iter() {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn spectral_examples() {
        let k4 = ConsensusNetwork::build_named_topology(TopologyKind::Complete, 4, 0).unwrap();
        let s = k4.spectral_data();
        assert!(s.lambda2.abs() < 1e-12);
        assert_eq!(s.diameter, Some(1));
        let k2 = ConsensusNetwork::with_metropolis(2, [(0, 1)]).unwrap();
        assert!(k2.spectral_data().lambda2 < 1e-12);
        let p = path3().spectral_data();
        // eigenvalues of the Metropolis path-3 matrix are {1, 2/3, 0}
        assert_relative_eq!(p.lambda2, 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(p.diameter, Some(2));
        assert!(p.connected);
    }

    #[test]
    fn geometric_examples() {
        let net = ConsensusNetwork::build_random_geometric(20, 300.0, 100.0, 11).unwrap();
        assert_eq!(net.node_count(), 20);
        assert!(net.spectral_data().connected);
        let pair = ConsensusNetwork::build_random_geometric(2, 10.0, 20.0, 5).unwrap();
        assert_eq!(pair.edges().len(), 1);
        assert!(matches!(
            ConsensusNetwork::build_random_geometric(5, 100.0, 1.0, 5),
            Err(DkfError::Disconnected(GEOMETRIC_MAX_RETRIES))
        ));
    }

    #[test]
    fn sparse_fusion_matches_dense_weights() {
        let net = ConsensusNetwork::build_random_geometric(12, 300.0, 120.0, 2).unwrap();
        let values: Vec<DMatrix<f64>> =
            (0..12).map(|i| DMatrix::from_element(2, 1, i as f64 * 0.7 - 1.0)).collect();
        let fused = net.fuse_rounds(values.clone(), 3);
        let l3 = net.power(3);
        for i in 0..12 {
            let expect: f64 = (0..12).map(|j| l3[(i, j)] * values[j][(0, 0)]).sum();
            assert_relative_eq!(fused[i][(0, 0)], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn file_round_trip_is_one_based() {
        let net = path3();
        let file = net.to_file(0.0);
        assert_eq!(file.edges, vec![[1, 2], [2, 3]]);
        let back = ConsensusNetwork::from_file(&file).unwrap();
        assert_eq!(back.weights(), net.weights());
        let named = NetworkFile { n: 3, edges: vec![[1, 2], [2, 3]], weights: WeightSpec::Named("metropolis".into()), eta: 0.5 };
        let json = serde_json::to_string(&named).unwrap();
        let parsed: NetworkFile = serde_json::from_str(&json).unwrap();
        let blended = ConsensusNetwork::from_file(&parsed).unwrap();
        assert_relative_eq!(blended.weights()[(1, 1)], 0.5 + 0.5 / 3.0, epsilon = 1e-15);
        let bad = NetworkFile { edges: vec![[0, 1]], ..named };
        assert!(ConsensusNetwork::from_file(&bad).is_err());
    }
}
