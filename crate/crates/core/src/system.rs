//! Linear plant, heterogeneous sensors, and trajectory simulation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DkfError, Result};
use crate::linalg;

/// Observation matrices of the tracking sensors.
pub const POSITION_NOISE: f64 = 0.01;
pub const NAIVE_NOISE: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub x0_mean: DVector<f64>,
    pub p0: DMatrix<f64>,
    a_invertible: bool,
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>, x0_mean: DVector<f64>, p0: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || q.shape() != (n, n) || p0.shape() != (n, n) || x0_mean.len() != n {
            return Err(DkfError::InvalidArgument("plant dimensions disagree".into()));
        }
        for (name, m) in [("Q", &q), ("P0", &p0)] {
            linalg::check_symmetric(m, linalg::SYMMETRY_TOL)?;
            if linalg::min_eigenvalue(m) <= 0.0 {
                return Err(DkfError::InvalidArgument(format!("{name} must be positive definite")));
            }
        }
        let a_invertible = linalg::rank(&a, 1e-12) == n;
        Ok(PlantModel { a, q, x0_mean, p0, a_invertible })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a_invertible(&self) -> bool {
        self.a_invertible
    }

    pub fn with_initial(mut self, x0_mean: DVector<f64>, p0: DMatrix<f64>) -> Result<Self> {
        if x0_mean.len() != self.state_dim() {
            return Err(DkfError::InvalidArgument("initial mean dimension mismatch".into()));
        }
        self.x0_mean = x0_mean;
        self.p0 = p0;
        Self::new(self.a, self.q, self.x0_mean, self.p0)
    }
}

/// Constant-velocity target in the plane, state [p_x, v_x, p_y, v_y].
pub fn make_tracking_model(sampling_interval: f64) -> Result<PlantModel> {
    let t = sampling_interval;
    if !(t > 0.0) {
        return Err(DkfError::InvalidArgument("sampling interval must be positive".into()));
    }
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[1.0, t, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, t, 0.0, 0.0, 0.0, 1.0],
    );
    let g = DMatrix::from_row_slice(2, 2, &[t.powi(3) / 3.0, t.powi(2) / 2.0, t.powi(2) / 2.0, t]);
    let mut q = DMatrix::zeros(4, 4);
    q.view_mut((0, 0), (2, 2)).copy_from(&g);
    q.view_mut((2, 2), (2, 2)).copy_from(&g);
    q.view_mut((0, 2), (2, 2)).copy_from(&(&g * 0.5));
    q.view_mut((2, 0), (2, 2)).copy_from(&(&g * 0.5));
    let x0 = DVector::from_vec(vec![150.0, 0.0, 150.0, 0.0]);
    PlantModel::new(a, q, x0, DMatrix::identity(4, 4) * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum SensorType {
    /// Observes p_x.
    PositionX,
    /// Observes p_y.
    PositionY,
    /// No sensing; relays only.
    Naive,
}

impl TryFrom<u8> for SensorType {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(SensorType::PositionX),
            2 => Ok(SensorType::PositionY),
            3 => Ok(SensorType::Naive),
            other => Err(format!("unknown sensor type {other}; expected 1, 2 or 3")),
        }
    }
}

impl From<SensorType> for u8 {
    fn from(t: SensorType) -> u8 {
        match t {
            SensorType::PositionX => 1,
            SensorType::PositionY => 2,
            SensorType::Naive => 3,
        }
    }
}

/// Default node-type assignment: types 1, 2, 3 cycled over node indices.
pub fn cyclic_sensor_types(node_count: usize) -> Vec<SensorType> {
    const CYCLE: [SensorType; 3] = [SensorType::PositionX, SensorType::PositionY, SensorType::Naive];
    (0..node_count).map(|i| CYCLE[i % 3]).collect()
}

#[derive(Debug, Clone)]
pub struct SensorSuite {
    c: Vec<DMatrix<f64>>,
    r: Vec<DMatrix<f64>>,
    tags: Vec<Option<SensorType>>,
    /// C_iᵀ R_i⁻¹ C_i
    info: Vec<DMatrix<f64>>,
    /// C_iᵀ R_i⁻¹, maps a measurement to its information contribution.
    normalizer: Vec<DMatrix<f64>>,
    collectively_observable: bool,
}

impl SensorSuite {
    /// Checks each R_i > 0 and collective observability of (A, col_i C_i).
    pub fn new(a: &DMatrix<f64>, c: Vec<DMatrix<f64>>, r: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = a.nrows();
        if c.len() != r.len() || c.is_empty() {
            return Err(DkfError::InvalidArgument("need one (C_i, R_i) pair per node".into()));
        }
        let mut info = Vec::with_capacity(c.len());
        let mut normalizer = Vec::with_capacity(c.len());
        for (i, (ci, ri)) in c.iter().zip(&r).enumerate() {
            let m = ci.nrows();
            if ci.ncols() != n || ri.shape() != (m, m) {
                return Err(DkfError::InvalidArgument(format!("sensor {i} has inconsistent dimensions")));
            }
            linalg::check_symmetric(ri, linalg::SYMMETRY_TOL)?;
            let r_inv = linalg::inv_spd(ri)
                .map_err(|_| DkfError::InvalidArgument(format!("R_{i} must be positive definite")))?;
            let h = ci.transpose() * r_inv;
            info.push(linalg::symmetrized(&h * ci));
            normalizer.push(h);
        }
        let stacked = linalg::vstack(&c);
        let collectively_observable = linalg::is_observable(a, &stacked);
        if !collectively_observable {
            return Err(DkfError::CollectivelyUnobservable);
        }
        let tags = vec![None; c.len()];
        Ok(SensorSuite { c, r, tags, info, normalizer, collectively_observable })
    }

    pub fn node_count(&self) -> usize {
        self.c.len()
    }

    pub fn c(&self, i: usize) -> &DMatrix<f64> {
        &self.c[i]
    }

    pub fn r(&self, i: usize) -> &DMatrix<f64> {
        &self.r[i]
    }

    pub fn tag(&self, i: usize) -> Option<SensorType> {
        self.tags[i]
    }

    /// C_iᵀ R_i⁻¹ C_i.
    pub fn information(&self, i: usize) -> &DMatrix<f64> {
        &self.info[i]
    }

    pub fn informations(&self) -> &[DMatrix<f64>] {
        &self.info
    }

    /// C_iᵀ R_i⁻¹.
    pub fn normalizer(&self, i: usize) -> &DMatrix<f64> {
        &self.normalizer[i]
    }

    pub fn collectively_observable(&self) -> bool {
        self.collectively_observable
    }

    /// Σ_j C_jᵀ R_j⁻¹ C_j, the centralized information.
    pub fn total_information(&self) -> DMatrix<f64> {
        let n = self.info[0].nrows();
        self.info.iter().fold(DMatrix::zeros(n, n), |acc, x| acc + x)
    }

    /// Nodes with zero information (naive nodes).
    pub fn naive_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| self.info[i].amax() == 0.0).collect()
    }
}

/// Per-node (C_i, R_i) for the tracking scenario.
pub fn make_tracking_sensors(plant: &PlantModel, types: &[SensorType]) -> Result<SensorSuite> {
    if plant.state_dim() != 4 {
        return Err(DkfError::InvalidArgument("tracking sensors need the 4-state tracking model".into()));
    }
    let (c, r): (Vec<_>, Vec<_>) = types
        .iter()
        .map(|t| {
            let (row, noise) = match t {
                SensorType::PositionX => ([1.0, 0.0, 0.0, 0.0], POSITION_NOISE),
                SensorType::PositionY => ([0.0, 0.0, 1.0, 0.0], POSITION_NOISE),
                SensorType::Naive => ([0.0; 4], NAIVE_NOISE),
            };
            (DMatrix::from_row_slice(1, 4, &row), DMatrix::from_element(1, 1, noise))
        })
        .unzip();
    let mut suite = SensorSuite::new(&plant.a, c, r)?;
    suite.tags = types.iter().copied().map(Some).collect();
    Ok(suite)
}

/// Zero-mean Gaussian with a precomputed symmetric PSD factor F, FFᵀ = cov.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        linalg::check_symmetric(cov, 1e-9)?;
        Ok(GaussianSampler { factor: linalg::sqrt_psd(cov) })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.factor * z
    }
}

/// mean + F z with FFᵀ = cov; rank-deficient covariances are supported.
pub fn sample_gaussian<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    if cov.shape() != (mean.len(), mean.len()) {
        return Err(DkfError::InvalidArgument("covariance shape does not match mean".into()));
    }
    Ok(mean + GaussianSampler::new(cov)?.sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// x_0 … x_K.
    pub states: Vec<DVector<f64>>,
    /// measurements[k - 1][i] = y_{i,k} for k = 1..K.
    pub measurements: Vec<Vec<DVector<f64>>>,
    pub rng_seed: u64,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.measurements.len()
    }
}

/// Reusable noise factors for repeated simulation from one model.
#[derive(Debug, Clone)]
pub struct Simulator {
    initial: GaussianSampler,
    process: GaussianSampler,
    sensor_noise: Vec<GaussianSampler>,
}

impl Simulator {
    pub fn new(plant: &PlantModel, sensors: &SensorSuite) -> Result<Self> {
        Ok(Simulator {
            initial: GaussianSampler::new(&plant.p0)?,
            process: GaussianSampler::new(&plant.q)?,
            sensor_noise: (0..sensors.node_count())
                .map(|i| GaussianSampler::new(sensors.r(i)))
                .collect::<Result<_>>()?,
        })
    }

    pub fn run<R: Rng + ?Sized>(
        &self,
        plant: &PlantModel,
        sensors: &SensorSuite,
        steps: usize,
        rng: &mut R,
        rng_seed: u64,
    ) -> Trajectory {
        let mut states = Vec::with_capacity(steps + 1);
        let mut measurements = Vec::with_capacity(steps);
        let mut x = &plant.x0_mean + self.initial.sample(rng);
        states.push(x.clone());
        for _ in 0..steps {
            x = &plant.a * &x + self.process.sample(rng);
            let ys = (0..sensors.node_count())
                .map(|i| sensors.c(i) * &x + self.sensor_noise[i].sample(rng))
                .collect();
            measurements.push(ys);
            states.push(x.clone());
        }
        Trajectory { states, measurements, rng_seed }
    }
}

/// Ground truth and measurements from a seeded ChaCha8 stream.
pub fn simulate(plant: &PlantModel, sensors: &SensorSuite, steps: usize, rng_seed: u64) -> Result<Trajectory> {
    if steps == 0 {
        return Err(DkfError::InvalidArgument("need at least one step".into()));
    }
    let mut rng = crate::rng::trajectory_stream(rng_seed);
    Ok(Simulator::new(plant, sensors)?.run(plant, sensors, steps, &mut rng, rng_seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tracking_model_entries() {
        let p = make_tracking_model(0.1).unwrap();
        assert_relative_eq!(p.a[(0, 1)], 0.1);
        assert_relative_eq!(p.q[(0, 0)], 0.1f64.powi(3) / 3.0, epsilon = 1e-18);
        assert_relative_eq!(p.q[(0, 2)], 0.5 * 0.1f64.powi(3) / 3.0, epsilon = 1e-18);
        assert_relative_eq!(p.a.determinant(), 1.0, epsilon = 1e-14);
        assert!(p.a_invertible());
        for t in [0.01, 0.1, 1.0, 5.0] {
            let q = make_tracking_model(t).unwrap().q;
            assert!(linalg::min_eigenvalue(&q) > 0.0);
            assert!(linalg::relative_asymmetry(&q) == 0.0);
        }
        assert!(make_tracking_model(0.0).is_err());
    }

    #[test]
    fn sensor_suites() {
        let plant = make_tracking_model(0.1).unwrap();
        assert!(matches!(
            make_tracking_sensors(&plant, &[SensorType::Naive; 3]),
            Err(DkfError::CollectivelyUnobservable)
        ));
        assert!(make_tracking_sensors(&plant, &[SensorType::PositionX]).is_err());
        let s = make_tracking_sensors(&plant, &[SensorType::PositionX, SensorType::PositionY]).unwrap();
        assert!(s.collectively_observable());
        let stacked = linalg::vstack(&[s.c(0).clone(), s.c(1).clone()]);
        assert_eq!(linalg::rank(&linalg::observability_matrix(&plant.a, &stacked), 1e-8), 4);
        let s = make_tracking_sensors(
            &plant,
            &[SensorType::PositionX, SensorType::PositionY, SensorType::Naive],
        )
        .unwrap();
        assert_eq!(s.information(2), &DMatrix::zeros(4, 4));
        assert_eq!(s.naive_nodes(), vec![2]);
        assert_relative_eq!(s.information(0)[(0, 0)], 100.0, epsilon = 1e-12);
    }

    #[test]
    fn sample_gaussian_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        assert_eq!(sample_gaussian(&mean, &DMatrix::zeros(2, 2), &mut rng).unwrap(), mean);
        let u = DVector::from_vec(vec![0.6, 0.8]);
        let cov = &u * u.transpose();
        for _ in 0..100 {
            let d = sample_gaussian(&mean, &cov, &mut rng).unwrap() - &mean;
            // residual orthogonal to u must vanish
            let perp = &d - &u * u.dot(&d);
            assert!(perp.norm() < 1e-10);
        }
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(sample_gaussian(&mean, &asym, &mut rng), Err(DkfError::Asymmetric(_))));
    }

    #[test]
    fn identity_covariance_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sampler = GaussianSampler::new(&DMatrix::identity(2, 2)).unwrap();
        let count = 100_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..count {
            let z = sampler.sample(&mut rng);
            acc += &z * z.transpose();
        }
        acc /= count as f64;
        assert!((acc - DMatrix::identity(2, 2)).norm() < 0.03 * 2f64.sqrt());
    }

    #[test]
    fn simulate_is_deterministic_and_shaped() {
        let plant = make_tracking_model(0.1).unwrap();
        let s = make_tracking_sensors(&plant, &cyclic_sensor_types(5)).unwrap();
        let a = simulate(&plant, &s, 12, 4).unwrap();
        let b = simulate(&plant, &s, 12, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.states.len(), 13);
        assert_eq!(a.measurements.iter().map(Vec::len).sum::<usize>(), 5 * 12);
        assert_ne!(a, simulate(&plant, &s, 12, 5).unwrap());
        assert!(simulate(&plant, &s, 0, 1).is_err());
    }

    #[test]
    fn vanishing_noise_follows_a_powers() {
        let base = make_tracking_model(0.1).unwrap();
        let eps = 1e-12;
        let plant = PlantModel::new(
            base.a.clone(),
            DMatrix::identity(4, 4) * eps,
            base.x0_mean.clone(),
            DMatrix::identity(4, 4) * eps,
        )
        .unwrap();
        let c = vec![DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]), DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 1.0, 0.0])];
        let r = vec![DMatrix::from_element(1, 1, eps); 2];
        let s = SensorSuite::new(&plant.a, c, r).unwrap();
        let traj = simulate(&plant, &s, 30, 2).unwrap();
        let mut x = traj.states[0].clone();
        for k in 1..=30 {
            x = &plant.a * x;
            assert!((&traj.states[k] - &x).amax() < 1e-4);
        }
    }
}
