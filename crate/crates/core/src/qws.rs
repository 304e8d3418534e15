//! Quadratic weighted sums X̃_i = Σ_j (l_ij^(γ))² X_j computed over the network.
//!
//! Two distributed estimators are provided. The direct method decouples the
//! sum with random rows q_i and a consensus on N q_iᵀq_i; the stochastic method
//! averages outer products of fused Gaussian probes. The centralized oracle is
//! for tests and diagnostics only.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DkfError, Result};
use crate::fusion::FusionBuffer;
use crate::linalg;
use crate::network::ConsensusNetwork;

/// Redraws of the random rows before giving up on a full-rank stack.
pub const Q_REDRAW_LIMIT: usize = 100;
/// Draws whose stacked rows have condition number above this times their
/// width are redrawn; W̃ inherits the square of it.
pub const Q_CONDITION_LIMIT: f64 = 100.0;

/// Consecutive sub-threshold changes after which a frozen estimate stops updating.
pub const FREEZE_PATIENCE: usize = 10;
pub const FREEZE_THRESHOLD: f64 = 1e-12;

/// Default relative cutoff for pseudo-inverses of n×n matrices.
pub fn default_pinv_tol(n: usize) -> f64 {
    1e-10 * n as f64
}

/// X and a square factor Y with YᵀY = X.
#[derive(Debug, Clone)]
pub struct InfoFactor {
    pub node: usize,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl InfoFactor {
    pub fn new(node: usize, x: DMatrix<f64>) -> Result<Self> {
        let y = factor_info(&x)?;
        Ok(InfoFactor { node, x, y })
    }

    pub fn is_zero(&self) -> bool {
        self.x.amax() == 0.0
    }
}

/// Symmetric PSD square root, so YᵀY = X and Y stays n×n when X is singular.
pub fn factor_info(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::check_symmetric(x, 1e-10)?;
    Ok(linalg::sqrt_psd(x))
}

/// Moore–Penrose inverse with symmetry check.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    linalg::check_symmetric(m, linalg::SYMMETRY_TOL)?;
    Ok(linalg::pinv_sym(m, rel_tol))
}

/// Centralized X̃_i by direct evaluation of the weights l_ij^(γ).
pub fn exact_qws_oracle(network: &ConsensusNetwork, gamma: usize, xs: &[DMatrix<f64>], i: usize) -> DMatrix<f64> {
    let row = network.consensus_row(i, gamma);
    weighted_sum(xs, row.iter().map(|l| l * l))
}

pub fn exact_qws_all(network: &ConsensusNetwork, gamma: usize, xs: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    (0..network.node_count()).map(|i| exact_qws_oracle(network, gamma, xs, i)).collect()
}

/// Σ_j l_ij^(γ) X_j, the (linear) fused information C̃_i.
pub fn linear_fusion_oracle(network: &ConsensusNetwork, gamma: usize, xs: &[DMatrix<f64>], i: usize) -> DMatrix<f64> {
    weighted_sum(xs, network.consensus_row(i, gamma).iter().copied())
}

/// Closed form of the direct estimate:
/// (1/N) Σ_j (l_ij^(γ))² / l_ij^(k) X_j. Terms with l_ij^(γ) = 0 are skipped.
pub fn direct_closed_form(
    network: &ConsensusNetwork,
    gamma: usize,
    k: usize,
    xs: &[DMatrix<f64>],
    i: usize,
) -> DMatrix<f64> {
    let n = network.node_count() as f64;
    let lg = network.consensus_row(i, gamma);
    let lk = network.consensus_row(i, k);
    weighted_sum(
        xs,
        lg.iter().zip(lk.iter()).map(|(g, kk)| if *g == 0.0 { 0.0 } else { g * g / (n * kk) }),
    )
}

fn weighted_sum(xs: &[DMatrix<f64>], weights: impl Iterator<Item = f64>) -> DMatrix<f64> {
    let (r, c) = xs[0].shape();
    let mut acc = DMatrix::zeros(r, c);
    for (x, w) in xs.iter().zip(weights) {
        if w != 0.0 {
            acc.zip_apply(x, |a, b| *a += w * b);
        }
    }
    acc
}

/// Per-node factor of the direct-method error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectBound {
    /// max_{j: l_ij^(γ) > 0} |1/(N l_ij^(k)) − 1|
    pub exact: f64,
    /// N|λ₂|^k / (1 − N|λ₂|^k), absent while N|λ₂|^k ≥ 1.
    pub spectral: Option<f64>,
}

pub fn spectral_bound(lambda2: f64, node_count: usize, k: usize) -> Option<f64> {
    let t = node_count as f64 * lambda2.abs().powi(k as i32);
    (t < 1.0).then(|| t / (1.0 - t))
}

/// Smallest k with N|λ₂|^k < 1, i.e. the first k at which the spectral form applies.
pub fn spectral_threshold(lambda2: f64, node_count: usize) -> usize {
    let l = lambda2.abs();
    if l == 0.0 || node_count <= 1 {
        return 1;
    }
    let mut k = ((1.0 / node_count as f64).ln() / l.ln()).floor().max(0.0) as usize;
    while spectral_bound(lambda2, node_count, k).is_none() {
        k += 1;
    }
    k.max(1)
}

pub fn direct_error_bound(network: &ConsensusNetwork, gamma: usize, k: usize) -> Result<Vec<DirectBound>> {
    if gamma == 0 || k < gamma {
        return Err(DkfError::InvalidArgument(format!("bound needs 1 <= gamma <= k (gamma = {gamma}, k = {k})")));
    }
    let n = network.node_count();
    let spectral = spectral_bound(network.spectral_data().lambda2, n, k);
    Ok((0..n)
        .map(|i| {
            let lg = network.consensus_row(i, gamma);
            let lk = network.consensus_row(i, k);
            let exact = (0..n)
                .filter(|&j| lg[j] > 0.0)
                .map(|j| {
                    if lk[j] > 0.0 {
                        (1.0 / (n as f64 * lk[j]) - 1.0).abs()
                    } else {
                        f64::INFINITY
                    }
                })
                .fold(0.0, f64::max);
            DirectBound { exact, spectral }
        })
        .collect())
}

/// Direct-method state for all nodes of one network.
///
/// ũ_i is stored as an n × (S·n) matrix whose b-th n×n block is
/// Σ_j l_ij q_jb Y_jᵀ; the Kronecker factor is never formed.
#[derive(Debug, Clone)]
pub struct DirectQws {
    gamma: usize,
    dim: usize,
    q_rows: Vec<DVector<f64>>,
    factors: Vec<DMatrix<f64>>,
    w: Vec<DMatrix<f64>>,
    consensus_count: usize,
    estimates: Vec<DMatrix<f64>>,
    pinv_rel_tol: f64,
    freeze: bool,
    quiet_steps: usize,
    frozen: bool,
}

impl DirectQws {
    /// Draws q rows from the seeded stream and sets W̃_i = N q_iᵀq_i.
    ///
    /// In naive mode only nodes with nonzero factors receive random rows of
    /// width S (their count); the remaining rows are zero.
    pub fn init(
        network: &ConsensusNetwork,
        factors: &[DMatrix<f64>],
        gamma: usize,
        rng_seed: u64,
        naive_mode: bool,
    ) -> Result<Self> {
        let n_nodes = network.node_count();
        if factors.len() != n_nodes {
            return Err(DkfError::InvalidArgument("one factor per node required".into()));
        }
        if gamma == 0 {
            return Err(DkfError::InvalidArgument("gamma must be at least 1".into()));
        }
        let dim = factors[0].nrows();
        let active: Vec<bool> = factors
            .iter()
            .map(|y| !naive_mode || y.amax() > 0.0)
            .collect();
        let width = active.iter().filter(|a| **a).count();
        if width == 0 {
            return Err(DkfError::InvalidArgument("every node is naive".into()));
        }
        let mut rng = crate::rng::qws_init_stream(rng_seed);
        let mut best: Option<(f64, Vec<DVector<f64>>)> = None;
        for _ in 0..Q_REDRAW_LIMIT {
            let rows: Vec<DVector<f64>> = active
                .iter()
                .map(|&on| {
                    if on {
                        DVector::from_fn(width, |_, _| rng.sample::<f64, _>(StandardNormal))
                    } else {
                        DVector::zeros(width)
                    }
                })
                .collect();
            let stacked = DMatrix::from_fn(width, width, |r, c| {
                let node = active.iter().enumerate().filter(|(_, a)| **a).nth(r).unwrap().0;
                rows[node][c]
            });
            let sv = stacked.singular_values();
            if linalg::rank(&stacked, 1e-10) < width {
                continue;
            }
            let cond = sv.max() / sv.min();
            if cond <= Q_CONDITION_LIMIT * width as f64 {
                best = Some((cond, rows));
                break;
            }
            if best.as_ref().is_none_or(|(c, _)| cond < *c) {
                best = Some((cond, rows));
            }
        }
        let q_rows = best.ok_or(DkfError::RankDeficientQ(Q_REDRAW_LIMIT))?.1;
        let w = q_rows
            .iter()
            .map(|q| q * q.transpose() * n_nodes as f64)
            .collect();
        Ok(DirectQws {
            gamma,
            dim,
            q_rows,
            factors: factors.to_vec(),
            w,
            consensus_count: 0,
            estimates: vec![DMatrix::zeros(dim, dim); n_nodes],
            pinv_rel_tol: default_pinv_tol(dim),
            freeze: false,
            quiet_steps: 0,
            frozen: false,
        })
    }

    pub fn with_pinv_tol(mut self, rel_tol: f64) -> Self {
        self.pinv_rel_tol = rel_tol;
        self
    }

    pub fn with_freeze(mut self, freeze: bool) -> Self {
        self.freeze = freeze;
        self
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn q_rows(&self) -> &[DVector<f64>] {
        &self.q_rows
    }

    pub fn q_width(&self) -> usize {
        self.q_rows[0].len()
    }

    /// Rounds of consensus applied to W̃ so far.
    pub fn consensus_count(&self) -> usize {
        self.consensus_count
    }

    pub fn w(&self, i: usize) -> &DMatrix<f64> {
        &self.w[i]
    }

    pub fn estimates(&self) -> &[DMatrix<f64>] {
        &self.estimates
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// ũ_i^(0) = Y_iᵀ(q_i ⊗ I_n).
    pub fn initial_u(&self) -> Vec<DMatrix<f64>> {
        let (n, s) = (self.dim, self.q_width());
        self.factors
            .iter()
            .zip(&self.q_rows)
            .map(|(y, q)| {
                let yt = y.transpose();
                let mut u = DMatrix::zeros(n, s * n);
                for b in 0..s {
                    if q[b] != 0.0 {
                        u.view_mut((0, b * n), (n, n)).copy_from(&(&yt * q[b]));
                    }
                }
                u
            })
            .collect()
    }

    /// ũ_i^(γ) after γ fusion rounds.
    pub fn fused_u(&self, network: &ConsensusNetwork) -> Vec<DMatrix<f64>> {
        self.fused_u_with(&network.weights().transpose())
    }

    /// As `fused_u`, given the transposed weight matrix.
    pub fn fused_u_with(&self, lt: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut buf = FusionBuffer::from_payloads(&self.initial_u());
        buf.fuse(lt, self.gamma);
        (0..buf.node_count()).map(|i| buf.payload(i)).collect()
    }

    pub fn advance_w(&mut self, network: &ConsensusNetwork, rounds: usize) {
        self.advance_w_with(&network.weights().transpose(), rounds);
    }

    pub fn advance_w_with(&mut self, lt: &DMatrix<f64>, rounds: usize) {
        let mut buf = FusionBuffer::from_payloads(&self.w);
        buf.fuse(lt, rounds);
        self.w = (0..buf.node_count()).map(|i| linalg::symmetrized(buf.payload(i))).collect();
        self.consensus_count += rounds;
    }

    /// Ũ_i = ũ_i (W̃_i† ⊗ I_n) ũ_iᵀ for the current W̃.
    pub fn estimate_from(&self, fused_u: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        fused_u
            .iter()
            .zip(&self.w)
            .map(|(u, w)| quadratic_block_form(u, &linalg::pinv_sym(w, self.pinv_rel_tol), self.dim))
            .collect()
    }

    /// One filter time step: ũ is rebuilt and fused γ rounds while W̃ carries
    /// on from its previous value for γ more rounds. Returns Ũ_{i,k}.
    pub fn step(&mut self, network: &ConsensusNetwork) -> &[DMatrix<f64>] {
        self.step_with_weights(&network.weights().transpose())
    }

    /// As `step`, given the transposed weight matrix.
    pub fn step_with_weights(&mut self, lt: &DMatrix<f64>) -> &[DMatrix<f64>] {
        if self.frozen {
            return &self.estimates;
        }
        let u = self.fused_u_with(lt);
        self.advance_w_with(lt, self.gamma);
        let next = self.estimate_from(&u);
        if self.freeze && self.consensus_count > self.gamma {
            let change = next
                .iter()
                .zip(&self.estimates)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            self.quiet_steps = if change < FREEZE_THRESHOLD { self.quiet_steps + 1 } else { 0 };
            self.frozen = self.quiet_steps >= FREEZE_PATIENCE;
        }
        self.estimates = next;
        &self.estimates
    }
}

/// Σ_{a,b} P_ab u_a u_bᵀ where u_a is the a-th n×n block of u.
fn quadratic_block_form(u: &DMatrix<f64>, p: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let s = p.nrows();
    let mut z = DMatrix::<f64>::zeros(n, s * n);
    for b in 0..s {
        let mut block = z.view_mut((0, b * n), (n, n));
        for a in 0..s {
            let w = p[(a, b)];
            if w != 0.0 {
                block.zip_apply(&u.view((0, a * n), (n, n)), |x: &mut f64, y: f64| *x += w * y);
            }
        }
    }
    linalg::symmetrized(z * u.transpose())
}

/// Stochastic-method state for all nodes of one network (one trial).
#[derive(Debug, Clone)]
pub struct StochasticQws {
    gamma: usize,
    factors_t: Vec<DMatrix<f64>>,
    average: Vec<DMatrix<f64>>,
    last_sample: Vec<DVector<f64>>,
    samples: usize,
    freeze: bool,
    quiet_steps: usize,
    frozen: bool,
}

impl StochasticQws {
    pub fn new(factors: &[DMatrix<f64>], gamma: usize) -> Result<Self> {
        if gamma == 0 || factors.is_empty() {
            return Err(DkfError::InvalidArgument("need gamma >= 1 and at least one node".into()));
        }
        let n = factors[0].nrows();
        Ok(StochasticQws {
            gamma,
            factors_t: factors.iter().map(|y| y.transpose()).collect(),
            average: vec![DMatrix::zeros(n, n); factors.len()],
            last_sample: vec![DVector::zeros(n); factors.len()],
            samples: 0,
            freeze: false,
            quiet_steps: 0,
            frozen: false,
        })
    }

    pub fn with_freeze(mut self, freeze: bool) -> Self {
        self.freeze = freeze;
        self
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn estimates(&self) -> &[DMatrix<f64>] {
        &self.average
    }

    pub fn last_sample(&self, i: usize) -> &DVector<f64> {
        &self.last_sample[i]
    }

    /// Draws θ_i ~ N(0, I_n) per node, fuses υ̃_i = Y_iᵀθ_i for γ rounds and
    /// folds υ̃υ̃ᵀ into the running average. Returns Υ̃_{i,k}.
    pub fn step<R: Rng + ?Sized>(&mut self, network: &ConsensusNetwork, rng: &mut R) -> &[DMatrix<f64>] {
        self.step_with_weights(&network.weights().transpose(), rng)
    }

    /// As `step`, given the transposed weight matrix.
    pub fn step_with_weights<R: Rng + ?Sized>(&mut self, lt: &DMatrix<f64>, rng: &mut R) -> &[DMatrix<f64>] {
        let n = self.factors_t[0].nrows();
        let mut probes = FusionBuffer::zeros(n, 1, self.factors_t.len());
        for (i, yt) in self.factors_t.iter().enumerate() {
            let theta = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
            probes.set(i, &(yt * theta));
        }
        if self.frozen {
            return &self.average;
        }
        probes.fuse(lt, self.gamma);
        self.samples += 1;
        let k = self.samples as f64;
        let mut change = 0.0f64;
        for i in 0..probes.node_count() {
            let v = DVector::from_column_slice(probes.payload(i).as_slice());
            let next = linalg::symmetrized(&self.average[i] * ((k - 1.0) / k) + (&v * v.transpose()) / k);
            change = change.max((&next - &self.average[i]).norm());
            self.average[i] = next;
            self.last_sample[i] = v;
        }
        if self.freeze && self.samples > 1 {
            self.quiet_steps = if change < FREEZE_THRESHOLD { self.quiet_steps + 1 } else { 0 };
            self.frozen = self.quiet_steps >= FREEZE_PATIENCE;
        }
        &self.average
    }
}

/// Predicted moments of the stochastic estimate after k samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentPrediction {
    /// k/(k − r − 1), the scale of E[Υ̃†] relative to X̃†.
    pub inverse_mean_scale: f64,
    /// E‖Υ̃ − X̃‖²_F
    pub mse_forward: f64,
    /// E‖Υ̃† − X̃†‖²_F
    pub mse_inverse: f64,
    pub rank: usize,
}

pub fn stochastic_moment_predictions(x_tilde: &DMatrix<f64>, k: usize, rel_tol: f64) -> Result<MomentPrediction> {
    let n = x_tilde.nrows();
    if k <= n + 3 {
        return Err(DkfError::TooFewSamples { k, n });
    }
    linalg::check_symmetric(x_tilde, linalg::SYMMETRY_TOL)?;
    let (values, _) = linalg::sym_eigen(x_tilde);
    let cutoff = rel_tol * values.amax();
    let nonzero: Vec<f64> = values.iter().copied().filter(|l| l.abs() > cutoff && *l != 0.0).collect();
    let r = nonzero.len() as f64;
    let kf = k as f64;
    let tr: f64 = nonzero.iter().sum();
    let tr2: f64 = nonzero.iter().map(|l| l * l).sum();
    let tr_inv: f64 = nonzero.iter().map(|l| 1.0 / l).sum();
    let tr_inv2: f64 = nonzero.iter().map(|l| 1.0 / (l * l)).sum();
    let denom = (kf - r - 3.0) * (kf - r - 1.0) * (kf - r);
    let alpha1 = (kf * kf + kf * (r * r + 2.0 * r + 3.0) - (r * r * r + 4.0 * r * r + 3.0 * r)) / denom;
    let alpha2 = kf * kf / denom;
    Ok(MomentPrediction {
        inverse_mean_scale: kf / (kf - r - 1.0),
        mse_forward: (tr2 + tr * tr) / kf,
        mse_inverse: alpha1 * tr_inv2 + alpha2 * tr_inv * tr_inv,
        rank: nonzero.len(),
    })
}

/// Least-squares slope of ln(error) against k, returned as the per-step
/// contraction factor exp(slope). Nonpositive errors are skipped.
pub fn fit_decay_rate(points: &[(usize, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, e)| *e > 0.0 && e.is_finite())
        .map(|&(k, e)| (k as f64, e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some((sxy / sxx).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::TopologyKind;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn factor_examples() {
        assert_eq!(factor_info(&DMatrix::zeros(3, 3)).unwrap(), DMatrix::zeros(3, 3));
        assert_relative_eq!(factor_info(&DMatrix::identity(3, 3)).unwrap(), DMatrix::identity(3, 3), epsilon = 1e-14);
        let x = diag(&[100.0, 0.0, 0.0, 0.0]);
        let y = factor_info(&x).unwrap();
        assert_relative_eq!(y, diag(&[10.0, 0.0, 0.0, 0.0]), epsilon = 1e-12);
        assert!((y.transpose() * &y - &x).norm() < 1e-10);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(factor_info(&bad).is_err());
    }

    #[test]
    fn pseudo_inverse_examples() {
        assert_relative_eq!(pseudo_inverse(&diag(&[2.0, 0.0]), 1e-10).unwrap(), diag(&[0.5, 0.0]), epsilon = 1e-15);
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let inv = m.clone().try_inverse().unwrap();
        assert_relative_eq!(pseudo_inverse(&m, 1e-10).unwrap(), inv, epsilon = 1e-10);
        let u = DVector::from_vec(vec![0.0, 0.6, 0.8]);
        let m = &u * u.transpose();
        let p = pseudo_inverse(&m, 1e-10).unwrap();
        assert_relative_eq!(&p, &m, epsilon = 1e-12);
        assert_relative_eq!(&m * &p * &m, m, epsilon = 1e-12);
    }

    #[test]
    fn oracle_examples() {
        let net = ConsensusNetwork::from_weights(DMatrix::from_element(2, 2, 0.5)).unwrap();
        let xs = vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 2.0];
        assert_relative_eq!(exact_qws_oracle(&net, 1, &xs, 0), DMatrix::identity(2, 2) * 0.75, epsilon = 1e-15);
        let zero = vec![DMatrix::zeros(2, 2); 2];
        assert_eq!(exact_qws_oracle(&net, 3, &zero, 1), DMatrix::zeros(2, 2));

        let net = ConsensusNetwork::build_named_topology(TopologyKind::Circle, 6, 0).unwrap();
        let xs: Vec<_> = (0..6).map(|j| DMatrix::identity(2, 2) * (j as f64 + 1.0)).collect();
        let limit = xs.iter().fold(DMatrix::zeros(2, 2), |a, x| a + x) / 36.0;
        assert_relative_eq!(exact_qws_oracle(&net, 200, &xs, 2), limit, epsilon = 1e-10);
    }

    #[test]
    fn complete_graph_direct_is_exact() {
        let net = ConsensusNetwork::build_named_topology(TopologyKind::Complete, 5, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<_> = (0..5)
            .map(|_| {
                let b = DMatrix::from_fn(3, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
                &b * b.transpose()
            })
            .collect();
        let ys: Vec<_> = xs.iter().map(|x| factor_info(x).unwrap()).collect();
        for gamma in 1..=3 {
            let mut direct = DirectQws::init(&net, &ys, gamma, 11, false).unwrap();
            for _ in 0..4 {
                let est = direct.step(&net).to_vec();
                for (i, u) in est.iter().enumerate() {
                    assert!((u - exact_qws_oracle(&net, gamma, &xs, i)).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn direct_matches_closed_form() {
        let net = ConsensusNetwork::build_named_topology(TopologyKind::Line, 6, 0).unwrap();
        let xs: Vec<_> = (0..6)
            .map(|j| {
                let c = DMatrix::from_row_slice(1, 2, &[1.0, j as f64 * 0.3]);
                c.transpose() * c * (j as f64 + 1.0)
            })
            .collect();
        let ys: Vec<_> = xs.iter().map(|x| factor_info(x).unwrap()).collect();
        let gamma = 2;
        let mut direct = DirectQws::init(&net, &ys, gamma, 5, false).unwrap();
        for step in 1..=15 {
            let est = direct.step(&net).to_vec();
            let k = step * gamma;
            assert_eq!(direct.consensus_count(), k);
            // closed form requires every l_ij^(k) > 0
            if net.power(k).iter().all(|v| *v > 0.0) {
                for (i, u) in est.iter().enumerate() {
                    let cf = direct_closed_form(&net, gamma, k, &xs, i);
                    assert!((u - &cf).norm() < 1e-10 * cf.norm().max(1.0), "step {step} node {i}");
                }
            }
        }
    }

    #[test]
    fn naive_mode_rows() {
        let net = ConsensusNetwork::build_named_topology(TopologyKind::Line, 3, 0).unwrap();
        let ys = vec![DMatrix::identity(2, 2), DMatrix::zeros(2, 2), DMatrix::identity(2, 2) * 2.0];
        let d = DirectQws::init(&net, &ys, 1, 8, true).unwrap();
        assert_eq!(d.q_width(), 2);
        assert_eq!(d.q_rows()[1], DVector::zeros(2));
        let again = DirectQws::init(&net, &ys, 1, 8, true).unwrap();
        assert_eq!(d.q_rows(), again.q_rows());
        let full = DirectQws::init(&net, &ys, 1, 8, false).unwrap();
        assert_eq!(full.q_width(), 3);
        let mut naive = d;
        let mut plain = full;
        for _ in 0..40 {
            naive.step(&net);
            plain.step(&net);
        }
        let xs: Vec<_> = ys.iter().map(|y| y.transpose() * y).collect();
        for i in 0..3 {
            let truth = exact_qws_oracle(&net, 1, &xs, i);
            assert!((&naive.estimates()[i] - &truth).norm() < 1e-6);
            assert!((&plain.estimates()[i] - &truth).norm() < 1e-6);
        }
    }

    #[test]
    fn bound_examples() {
        let net = ConsensusNetwork::build_named_topology(TopologyKind::Complete, 4, 0).unwrap();
        for k in 1..5 {
            for b in direct_error_bound(&net, 1, k).unwrap() {
                assert!(b.exact.abs() < 1e-12);
                assert_eq!(b.spectral, Some(0.0));
            }
        }
        let t = 20.0 * 0.8f64.powi(30);
        assert_relative_eq!(spectral_bound(0.8, 20, 30).unwrap(), t / (1.0 - t), epsilon = 1e-15);
        assert!(spectral_bound(0.8, 20, 10).is_none());
        assert_eq!(spectral_threshold(0.8, 20), 14);
        assert!(direct_error_bound(&net, 3, 2).is_err());
    }

    #[test]
    fn moment_examples() {
        let one = DMatrix::from_element(1, 1, 2.0);
        assert_relative_eq!(stochastic_moment_predictions(&one, 5, 1e-10).unwrap().inverse_mean_scale, 5.0 / 3.0);
        let p = stochastic_moment_predictions(&DMatrix::identity(2, 2), 100, 1e-10).unwrap();
        assert_relative_eq!(p.mse_forward, 0.06, epsilon = 1e-15);
        let far = stochastic_moment_predictions(&DMatrix::identity(2, 2), 10_000_000, 1e-10).unwrap();
        assert!((far.inverse_mean_scale - 1.0).abs() < 1e-6 && far.mse_forward < 1e-6 && far.mse_inverse < 1e-6);
        assert!(matches!(
            stochastic_moment_predictions(&DMatrix::identity(2, 2), 5, 1e-10),
            Err(DkfError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn stochastic_zero_factors_stay_zero() {
        let net = ConsensusNetwork::build_named_topology(TopologyKind::Circle, 4, 0).unwrap();
        let mut s = StochasticQws::new(&vec![DMatrix::zeros(3, 3); 4], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            s.step(&net, &mut rng);
        }
        assert!(s.estimates().iter().all(|m| m.amax() == 0.0));
        assert_eq!(s.samples(), 10);
    }

    #[test]
    fn decay_rate_fit() {
        let pts: Vec<_> = (1..20).map(|k| (k, 3.0 * 0.7f64.powi(k as i32))).collect();
        assert_relative_eq!(fit_decay_rate(&pts).unwrap(), 0.7, epsilon = 1e-12);
        assert!(fit_decay_rate(&[(1, 1.0)]).is_none());
    }
}
