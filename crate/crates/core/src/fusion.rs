//! Fused measurement model seen by node i after γ consensus rounds.
//!
//! With l_ij = [L^γ]_ij and X_j = C_jᵀR_j⁻¹C_j, the fused measurement
//! ỹ_i = Σ_j l_ij C_jᵀR_j⁻¹y_j satisfies ỹ_i = C̃_i x + ṽ_i with
//! C̃_i = Σ_j l_ij X_j and Cov(ṽ_i) = R̃_i = Σ_j l_ij² X_j.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::linalg;
use crate::network::ConsensusNetwork;
use crate::system::SensorSuite;

#[derive(Debug, Clone)]
pub struct FusedModel {
    pub gamma: usize,
    /// L^γ
    pub weights: DMatrix<f64>,
    pub c_tilde: Vec<DMatrix<f64>>,
    pub r_tilde: Vec<DMatrix<f64>>,
}

impl FusedModel {
    pub fn new(network: &ConsensusNetwork, sensors: &SensorSuite, gamma: usize) -> Self {
        let weights = (*network.power(gamma)).clone();
        Self::from_weights(weights, sensors.informations(), gamma)
    }

    pub fn from_weights(weights: DMatrix<f64>, infos: &[DMatrix<f64>], gamma: usize) -> Self {
        let n = infos[0].nrows();
        let nodes = weights.nrows();
        let mut c_tilde = Vec::with_capacity(nodes);
        let mut r_tilde = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let mut c = DMatrix::zeros(n, n);
            let mut r = DMatrix::zeros(n, n);
            for (j, x) in infos.iter().enumerate() {
                let l = weights[(i, j)];
                if l != 0.0 {
                    c += x * l;
                    r += x * (l * l);
                }
            }
            c_tilde.push(linalg::symmetrized(c));
            r_tilde.push(linalg::symmetrized(r));
        }
        FusedModel { gamma, weights, c_tilde, r_tilde }
    }

    pub fn node_count(&self) -> usize {
        self.c_tilde.len()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// C̃_iᵀR̃_i†, the gain applied to ỹ_i by the modified filters.
    pub fn modified_gain(&self, i: usize, rel_tol: f64) -> DMatrix<f64> {
        self.c_tilde[i].transpose() * linalg::pinv_sym(&self.r_tilde[i], rel_tol)
    }

    /// C̃_iᵀR̃_i†C̃_i.
    pub fn modified_information(&self, i: usize, rel_tol: f64) -> DMatrix<f64> {
        linalg::symmetrized(self.modified_gain(i, rel_tol) * &self.c_tilde[i])
    }

    /// C̆_i = col_j(l_ij R_j^{-1/2} C_j); C̆_iᵀC̆_i = R̃_i.
    pub fn stacked_factor(&self, i: usize, sensors: &SensorSuite) -> Result<DMatrix<f64>> {
        let blocks = (0..sensors.node_count())
            .map(|j| {
                let r_inv_half = linalg::sqrt_psd(&linalg::inv_spd(sensors.r(j))?);
                Ok(r_inv_half * sensors.c(j) * self.weights[(i, j)])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(linalg::vstack(&blocks))
    }
}

/// One labeled payload for every node, stored column-wise: column i holds
/// node i's r×c payload flattened in column-major order. A consensus round
/// Z_i ← Σ_j l_ij Z_j is then a single product with Lᵀ.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionBuffer {
    rows: usize,
    cols: usize,
    data: DMatrix<f64>,
}

impl FusionBuffer {
    pub fn from_payloads(payloads: &[DMatrix<f64>]) -> Self {
        let (rows, cols) = payloads[0].shape();
        let mut data = DMatrix::zeros(rows * cols, payloads.len());
        for (i, p) in payloads.iter().enumerate() {
            assert_eq!(p.shape(), (rows, cols), "payload shapes differ across nodes");
            data.column_mut(i).copy_from_slice(p.as_slice());
        }
        FusionBuffer { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize, nodes: usize) -> Self {
        FusionBuffer { rows, cols, data: DMatrix::zeros(rows * cols, nodes) }
    }

    pub fn set(&mut self, i: usize, payload: &DMatrix<f64>) {
        self.data.column_mut(i).copy_from_slice(payload.as_slice());
    }

    pub fn payload(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.rows, self.cols, self.data.column(i).as_slice())
    }

    pub fn node_count(&self) -> usize {
        self.data.ncols()
    }

    /// `rounds` synchronous rounds with the transposed weight matrix `lt`.
    pub fn fuse(&mut self, lt: &DMatrix<f64>, rounds: usize) {
        if rounds == 0 {
            return;
        }
        let mut scratch = DMatrix::zeros(self.data.nrows(), self.data.ncols());
        for _ in 0..rounds {
            scratch.gemm(1.0, &self.data, lt, 0.0);
            std::mem::swap(&mut scratch, &mut self.data);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::TopologyKind;
    use crate::qws;
    use crate::system::{cyclic_sensor_types, make_tracking_model, make_tracking_sensors};

    #[test]
    fn matches_oracles_and_factor() {
        let plant = make_tracking_model(0.1).unwrap();
        let sensors = make_tracking_sensors(&plant, &cyclic_sensor_types(6)).unwrap();
        let net = ConsensusNetwork::build_named_topology(TopologyKind::Circle, 6, 0).unwrap();
        let fused = FusedModel::new(&net, &sensors, 3);
        for i in 0..6 {
            let r = qws::exact_qws_oracle(&net, 3, sensors.informations(), i);
            let c = qws::linear_fusion_oracle(&net, 3, sensors.informations(), i);
            assert!((&fused.r_tilde[i] - r).norm() < 1e-9);
            assert!((&fused.c_tilde[i] - c).norm() < 1e-9);
            let f = fused.stacked_factor(i, &sensors).unwrap();
            assert!((f.transpose() * f - &fused.r_tilde[i]).norm() < 1e-8);
        }
    }

    #[test]
    fn buffer_fusion_matches_sparse_rounds() {
        let net = ConsensusNetwork::build_named_topology(TopologyKind::Line, 5, 0).unwrap();
        let payloads: Vec<_> = (0..5).map(|i| DMatrix::from_fn(2, 3, |r, c| (i * 7 + r * 3 + c) as f64)).collect();
        let mut buf = FusionBuffer::from_payloads(&payloads);
        buf.fuse(&net.weights().transpose(), 4);
        let expected = net.fuse_rounds(payloads, 4);
        for (i, e) in expected.iter().enumerate() {
            assert!((buf.payload(i) - e).amax() < 1e-12);
        }
    }
}
