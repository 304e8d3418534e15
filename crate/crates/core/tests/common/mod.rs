//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use dkf_core::ConsensusNetwork;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// L^k by repeated multiplication.
pub fn matrix_power(l: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = l.nrows();
    (0..k).fold(DMatrix::identity(n, n), |acc, _| acc * l)
}

pub fn lu_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().lu().try_inverse().expect("invertible")
}

/// Textbook covariance-form Kalman filter on stacked measurements.
pub struct KalmanOracle {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl KalmanOracle {
    pub fn step(&mut self, y: &DVector<f64>) {
        let x_pred = &self.a * &self.x;
        let p_pred = &self.a * &self.p * self.a.transpose() + &self.q;
        let s = &self.c * &p_pred * self.c.transpose() + &self.r;
        let k = &p_pred * self.c.transpose() * lu_inverse(&s);
        self.x = &x_pred + &k * (y - &self.c * &x_pred);
        let n = self.a.nrows();
        let ikc = DMatrix::identity(n, n) - &k * &self.c;
        // Joseph form keeps the oracle symmetric.
        self.p = &ikc * &p_pred * ikc.transpose() + &k * &self.r * k.transpose();
    }
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(total, total);
    let mut o = 0;
    for b in blocks {
        out.view_mut((o, o), b.shape()).copy_from(b);
        o += b.nrows();
    }
    out
}

pub fn vstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, blocks[0].ncols());
    let mut o = 0;
    for b in blocks {
        out.view_mut((o, 0), b.shape()).copy_from(b);
        o += b.nrows();
    }
    out
}

/// B Bᵀ with B n×rank Gaussian.
pub fn random_psd<R: Rng>(rng: &mut R, n: usize, rank: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
    let m = &b * b.transpose();
    (&m + m.transpose()) * 0.5
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &(a, b) in edges {
            let w = if a == v { b } else if b == v { a } else { continue };
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Erdős–Rényi G(n, p) redrawn until connected, with Metropolis weights.
pub fn random_connected_graph<R: Rng>(rng: &mut R, n: usize, p: f64) -> ConsensusNetwork {
    loop {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        if connected(n, &edges) {
            return ConsensusNetwork::with_metropolis(n, edges).expect("valid graph");
        }
    }
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}
