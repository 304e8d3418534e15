//! Fixed-point solvers for the steady-state equations of the filters:
//! the DARE, the harmonic-coupled Riccati equation (HCRE) and the block
//! Lyapunov equation for the actual error of the CI family.

use nalgebra::DMatrix;

use crate::error::{DkfError, Result};
use crate::fusion::FusedModel;
use crate::linalg;
use crate::system::{PlantModel, SensorSuite};

pub const SOLVER_TOL: f64 = 1e-11;
pub const SOLVER_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub pinv_rel_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: SOLVER_TOL, max_iter: SOLVER_MAX_ITER, pinv_rel_tol: 1e-10 }
    }
}

/// P = A(P⁻¹ + I)⁻¹Aᵀ + Q with information I = CᵀR⁻¹C.
#[derive(Debug, Clone)]
pub struct DareProblem {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub info: DMatrix<f64>,
}

impl DareProblem {
    pub fn new(a: &DMatrix<f64>, c: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<Self> {
        check_spd("R", r)?;
        let info = linalg::symmetrized(c.transpose() * linalg::inv_spd(r)? * c);
        Self::from_information(a, q, info)
    }

    /// Observability is checked on (A, I^{1/2}), equivalent to (A, C).
    pub fn from_information(a: &DMatrix<f64>, q: &DMatrix<f64>, info: DMatrix<f64>) -> Result<Self> {
        check_spd("Q", q)?;
        linalg::check_symmetric(&info, 1e-9)?;
        if !linalg::is_observable(a, &linalg::sqrt_psd(&info)) {
            return Err(DkfError::NodeUnobservable { node: 0 });
        }
        Ok(DareProblem { a: a.clone(), q: q.clone(), info })
    }

    /// (P⁻¹ + I)⁻¹
    pub fn posterior(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        linalg::inv_spd(&(linalg::inv_spd(p)? + &self.info))
    }

    pub fn step(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(predict(&self.a, &self.posterior(p)?, &self.q))
    }

    pub fn residual(&self, p: &DMatrix<f64>) -> Result<f64> {
        Ok((self.step(p)? - p).norm())
    }
}

fn check_spd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    linalg::check_symmetric(m, linalg::SYMMETRY_TOL)?;
    if linalg::min_eigenvalue(m) <= 0.0 {
        return Err(DkfError::InvalidArgument(format!("{name} must be positive definite")));
    }
    Ok(())
}

fn predict(a: &DMatrix<f64>, p_post: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::symmetrized(a * p_post * a.transpose() + q)
}

/// Iterates the DARR from `p0` until the Frobenius step falls below `tol`.
pub fn solve_dare(problem: &DareProblem, tol: f64, max_iter: usize, p0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_spd("P0", p0)?;
    let mut p = p0.clone();
    for _ in 0..max_iter {
        let next = problem.step(&p)?;
        let delta = (&next - &p).norm();
        p = next;
        if delta < tol {
            return Ok(p);
        }
    }
    Err(DkfError::NoConvergence(max_iter))
}

/// P_i = A(Σ_j l_ij P_j⁻¹ + I_i)⁻¹Aᵀ + Q.
#[derive(Debug, Clone)]
pub struct HcreProblem {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub weights: DMatrix<f64>,
    pub infos: Vec<DMatrix<f64>>,
}

impl HcreProblem {
    pub fn new(a: &DMatrix<f64>, q: &DMatrix<f64>, weights: DMatrix<f64>, infos: Vec<DMatrix<f64>>) -> Result<Self> {
        check_spd("Q", q)?;
        if linalg::rank(a, 1e-12) < a.nrows() {
            return Err(DkfError::InvalidArgument("HCRE requires an invertible A".into()));
        }
        let nodes = infos.len();
        if weights.shape() != (nodes, nodes) {
            return Err(DkfError::InvalidArgument("weight matrix must be N x N".into()));
        }
        for i in 0..nodes {
            let row = weights.row(i);
            if row.iter().any(|&w| w < 0.0) || (row.sum() - 1.0).abs() > 1e-9 {
                return Err(DkfError::InvalidArgument(format!("weight row {i} is not stochastic")));
            }
        }
        let roots: Vec<_> = infos.iter().map(linalg::sqrt_psd).collect();
        if !linalg::is_observable(a, &linalg::vstack(&roots)) {
            return Err(DkfError::CollectivelyUnobservable);
        }
        Ok(HcreProblem { a: a.clone(), q: q.clone(), weights, infos })
    }

    pub fn node_count(&self) -> usize {
        self.infos.len()
    }

    /// (Σ_j l_ij P_j⁻¹ + I_i)⁻¹ for every node, given the prior inverses.
    pub fn posteriors_from_inverses(&self, inverses: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
        (0..self.node_count())
            .map(|i| {
                let mut acc = self.infos[i].clone();
                for (j, inv) in inverses.iter().enumerate() {
                    let l = self.weights[(i, j)];
                    if l != 0.0 {
                        acc += inv * l;
                    }
                }
                linalg::inv_spd(&acc)
            })
            .collect()
    }

    pub fn posteriors(&self, ps: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
        let inverses = ps.iter().map(linalg::inv_spd).collect::<Result<Vec<_>>>()?;
        self.posteriors_from_inverses(&inverses)
    }

    pub fn step(&self, ps: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
        Ok(self.posteriors(ps)?.iter().map(|pp| predict(&self.a, pp, &self.q)).collect())
    }

    /// Per-node Frobenius residuals of the fixed point.
    pub fn residuals(&self, ps: &[DMatrix<f64>]) -> Result<Vec<f64>> {
        Ok(self.step(ps)?.iter().zip(ps).map(|(n, p)| (n - p).norm()).collect())
    }
}

pub fn solve_hcre(problem: &HcreProblem, tol: f64, max_iter: usize, initials: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    if initials.len() != problem.node_count() {
        return Err(DkfError::InvalidArgument("one initial matrix per node required".into()));
    }
    for p in initials {
        check_spd("P_i0", p)?;
    }
    let mut ps = initials.to_vec();
    for _ in 0..max_iter {
        let next = problem.step(&ps)?;
        let delta = next.iter().zip(&ps).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        ps = next;
        if delta < tol {
            return Ok(ps);
        }
    }
    Err(DkfError::NoConvergence(max_iter))
}

/// Solves X = 𝒜X𝒜ᵀ + K by iteration from X = 0. Requires ρ(𝒜) < 1.
pub fn solve_lyapunov(a: &DMatrix<f64>, k: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<DMatrix<f64>> {
    let rho = linalg::spectral_radius(a);
    if rho >= 1.0 {
        return Err(DkfError::Unstable(rho));
    }
    let at = a.transpose();
    let mut x = k.clone();
    for _ in 0..max_iter {
        let next = linalg::symmetrized(a * &x * &at + k);
        let delta = (&next - &x).norm();
        x = next;
        if delta < tol {
            return Ok(x);
        }
    }
    Err(DkfError::NoConvergence(max_iter))
}

/// R̆ > 0 with C̃ᵀR̆⁻¹C̃ = C̃ᵀR̃†C̃: the eigenvalues of R̃ on its range are
/// kept and the null space is padded with ones. Full-rank R̃ is returned as is.
pub fn breve_r(c_tilde: &DMatrix<f64>, r_tilde: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    linalg::check_symmetric(r_tilde, 1e-9)?;
    let n = r_tilde.nrows();
    let (values, vectors) = linalg::sym_eigen(r_tilde);
    let cutoff = rel_tol * values.amax();
    let rank = values.iter().filter(|&&l| l > cutoff && l > 0.0).count();
    if rank == n {
        return Ok(r_tilde.clone());
    }
    // columns of C̃ must lie in range(R̃)
    let projector = linalg::spectral_map(&values, &vectors, |l| if l > cutoff && l > 0.0 { 1.0 } else { 0.0 });
    let leak = (c_tilde - &projector * c_tilde).norm();
    if leak > 1e-8 * c_tilde.norm().max(1.0) {
        return Err(DkfError::InconsistentRange(format!(
            "fused observation leaves the range of the fused covariance by {leak:.3e}"
        )));
    }
    Ok(linalg::spectral_map(&values, &vectors, |l| if l > cutoff && l > 0.0 { l } else { 1.0 }))
}

/// R̆ = V diag(Σ̃², I) Vᵀ from the SVD C̆ = UΣVᵀ of the stacked factor.
pub fn breve_r_from_stacked_factor(stacked: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = stacked.ncols();
    let svd = stacked.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let top = svd.singular_values.amax();
    let mut diag = vec![1.0; n];
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s > rel_tol * top && *s > 0.0 {
            diag[k] = s * s;
        }
    }
    // rows of v_t beyond the computed singular values are absent for wide factors
    let mut v = DMatrix::<f64>::identity(n, n);
    let rows = v_t.nrows();
    if rows == n {
        v = v_t.transpose();
    } else {
        // complete the orthonormal basis from the null space of the thin factor
        let full = (v_t.transpose() * &v_t).map(|x| -x) + DMatrix::identity(n, n);
        let (_, vecs) = linalg::sym_eigen(&full);
        v.view_mut((0, 0), (n, rows)).copy_from(&v_t.transpose());
        v.view_mut((0, rows), (n, n - rows)).copy_from(&vecs.columns(rows, n - rows));
    }
    let mut scaled = v.clone();
    for k in 0..n {
        scaled.column_mut(k).scale_mut(diag[k]);
    }
    linalg::symmetrized(scaled * v.transpose())
}

/// How the fused measurement enters the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainKind {
    /// Information s·C̃_i with gain s·I on ỹ_i (CM: s = N, CI: s = 1, HCMCI: s = ω).
    Scaled(f64),
    /// Information C̃_iᵀR̃_i†C̃_i with gain C̃_iᵀR̃_i† on ỹ_i.
    Modified,
}

#[derive(Debug, Clone)]
pub struct SteadyStatePrediction {
    /// P_i, the covariance the filter reports for its prior.
    pub prior_estimated: Vec<DMatrix<f64>>,
    /// P̃_i, the actual prior error covariance.
    pub prior_actual: Vec<DMatrix<f64>>,
    pub posterior_estimated: Vec<DMatrix<f64>>,
    pub posterior_actual: Vec<DMatrix<f64>>,
    /// min eig(P_i − P̃_i)
    pub consistency_margin: Vec<f64>,
    /// 𝒜 and Γ of the block Lyapunov equation (CI family only).
    pub a_block: Option<DMatrix<f64>>,
    pub gamma_block: Option<DMatrix<f64>>,
    /// Spectral radius of 𝒜, or the largest closed-loop radius for per-node filters.
    pub spectral_radius: f64,
}

impl SteadyStatePrediction {
    pub fn posterior_trace(&self) -> Vec<f64> {
        self.posterior_actual.iter().map(|p| p.trace()).collect()
    }

    pub fn mean_posterior_trace(&self) -> f64 {
        let t = self.posterior_trace();
        t.iter().sum::<f64>() / t.len() as f64
    }
}

fn informations(fused: &FusedModel, gain: GainKind, rel_tol: f64) -> Result<Vec<DMatrix<f64>>> {
    (0..fused.node_count())
        .map(|i| match gain {
            GainKind::Scaled(s) => Ok(&fused.c_tilde[i] * s),
            GainKind::Modified => {
                let rb = breve_r(&fused.c_tilde[i], &fused.r_tilde[i], rel_tol)?;
                Ok(linalg::symmetrized(fused.c_tilde[i].transpose() * linalg::inv_spd(&rb)? * &fused.c_tilde[i]))
            }
        })
        .collect()
}

fn gain_matrix(fused: &FusedModel, gain: GainKind, i: usize, rel_tol: f64) -> DMatrix<f64> {
    let n = fused.c_tilde[i].nrows();
    match gain {
        GainKind::Scaled(s) => DMatrix::identity(n, n) * s,
        GainKind::Modified => fused.modified_gain(i, rel_tol),
    }
}

fn identity_start(plant: &PlantModel) -> DMatrix<f64> {
    plant.q.clone() + DMatrix::identity(plant.state_dim(), plant.state_dim())
}

/// Per-node filters that use only their own prior (CKF-like structure):
/// CM and Modified CM.
pub fn steady_cm_family(
    plant: &PlantModel,
    fused: &FusedModel,
    gain: GainKind,
    opts: &SolverOptions,
) -> Result<SteadyStatePrediction> {
    let infos = informations(fused, gain, opts.pinv_rel_tol)?;
    let a = &plant.a;
    let mut out = SteadyStatePrediction {
        prior_estimated: vec![],
        prior_actual: vec![],
        posterior_estimated: vec![],
        posterior_actual: vec![],
        consistency_margin: vec![],
        a_block: None,
        gamma_block: None,
        spectral_radius: 0.0,
    };
    for (i, info) in infos.into_iter().enumerate() {
        let problem = DareProblem::from_information(a, &plant.q, info).map_err(|e| match e {
            DkfError::NodeUnobservable { .. } => DkfError::NodeUnobservable { node: i },
            other => other,
        })?;
        let p = solve_dare(&problem, opts.tol, opts.max_iter, &identity_start(plant))?;
        let p_bar = problem.posterior(&p)?;
        let p_inv = linalg::inv_spd(&p)?;
        let m = gain_matrix(fused, gain, i, opts.pinv_rel_tol);
        // e⁺ = P̄(P⁻¹e⁻ − M ṽ), Cov(ṽ) = R̃
        let b = &p_bar * &p_inv;
        let noise = linalg::symmetrized(&p_bar * &m * &fused.r_tilde[i] * m.transpose() * &p_bar);
        let closed = a * &b;
        let constant = linalg::symmetrized(a * &noise * a.transpose() + &plant.q);
        out.spectral_radius = out.spectral_radius.max(linalg::spectral_radius(&closed));
        let actual = solve_lyapunov(&closed, &constant, opts.tol, opts.max_iter)?;
        let post_actual = linalg::symmetrized(&b * &actual * b.transpose() + &noise);
        out.consistency_margin.push(linalg::min_eigenvalue(&(&p - &actual)));
        out.prior_estimated.push(p);
        out.prior_actual.push(actual);
        out.posterior_estimated.push(p_bar);
        out.posterior_actual.push(post_actual);
    }
    Ok(out)
}

/// Filters that fuse priors with weights l_ij: CI, HCMCI and Modified CI.
pub fn steady_ci_family(
    plant: &PlantModel,
    sensors: &SensorSuite,
    fused: &FusedModel,
    gain: GainKind,
    opts: &SolverOptions,
) -> Result<SteadyStatePrediction> {
    let nodes = fused.node_count();
    let n = plant.state_dim();
    let infos = informations(fused, gain, opts.pinv_rel_tol)?;
    let problem = HcreProblem::new(&plant.a, &plant.q, fused.weights.clone(), infos)?;
    let ps = solve_hcre(&problem, opts.tol, opts.max_iter, &vec![identity_start(plant); nodes])?;
    let p_inv = ps.iter().map(linalg::inv_spd).collect::<Result<Vec<_>>>()?;
    let p_bar = problem.posteriors_from_inverses(&p_inv)?;

    let meas_dims: Vec<usize> = (0..nodes).map(|j| sensors.c(j).nrows()).collect();
    let offsets: Vec<usize> = meas_dims.iter().scan(0, |acc, m| { let o = *acc; *acc += m; Some(o) }).collect();
    let total_m: usize = meas_dims.iter().sum();
    let mut b = DMatrix::zeros(nodes * n, nodes * n);
    let mut g = DMatrix::zeros(nodes * n, total_m);
    for i in 0..nodes {
        let m = gain_matrix(fused, gain, i, opts.pinv_rel_tol);
        let pm = &p_bar[i] * m;
        for j in 0..nodes {
            let l = fused.weight(i, j);
            if l == 0.0 {
                continue;
            }
            b.view_mut((i * n, j * n), (n, n)).copy_from(&(&p_bar[i] * &p_inv[j] * l));
            g.view_mut((i * n, offsets[j]), (n, meas_dims[j])).copy_from(&(&pm * sensors.normalizer(j) * l));
        }
    }
    let r_diag = linalg::block_diag(&(0..nodes).map(|j| sensors.r(j).clone()).collect::<Vec<_>>());
    let big_a = linalg::block_diag(&vec![plant.a.clone(); nodes]);
    let a_block = &big_a * &b;
    let gamma_block = &big_a * &g;
    let noise_post = linalg::symmetrized(&g * &r_diag * g.transpose());
    let mut constant = linalg::symmetrized(&gamma_block * &r_diag * gamma_block.transpose());
    for i in 0..nodes {
        for j in 0..nodes {
            let mut blk = constant.view_mut((i * n, j * n), (n, n));
            blk += &plant.q;
        }
    }
    let rho = linalg::spectral_radius(&a_block);
    let big_p = solve_lyapunov(&a_block, &constant, opts.tol, opts.max_iter)?;
    let post_big = linalg::symmetrized(&b * &big_p * b.transpose() + noise_post);
    let block = |m: &DMatrix<f64>, i: usize| linalg::symmetrized(m.view((i * n, i * n), (n, n)).into_owned());
    let prior_actual: Vec<_> = (0..nodes).map(|i| block(&big_p, i)).collect();
    let posterior_actual: Vec<_> = (0..nodes).map(|i| block(&post_big, i)).collect();
    let consistency_margin = ps.iter().zip(&prior_actual).map(|(p, pa)| linalg::min_eigenvalue(&(p - pa))).collect();
    Ok(SteadyStatePrediction {
        prior_estimated: ps,
        prior_actual,
        posterior_estimated: p_bar,
        posterior_actual,
        consistency_margin,
        a_block: Some(a_block),
        gamma_block: Some(gamma_block),
        spectral_radius: rho,
    })
}

pub fn steady_modified_cm(plant: &PlantModel, fused: &FusedModel, opts: &SolverOptions) -> Result<SteadyStatePrediction> {
    steady_cm_family(plant, fused, GainKind::Modified, opts)
}

pub fn steady_cm(plant: &PlantModel, fused: &FusedModel, opts: &SolverOptions) -> Result<SteadyStatePrediction> {
    steady_cm_family(plant, fused, GainKind::Scaled(fused.node_count() as f64), opts)
}

pub fn steady_modified_ci(
    plant: &PlantModel,
    sensors: &SensorSuite,
    fused: &FusedModel,
    opts: &SolverOptions,
) -> Result<SteadyStatePrediction> {
    steady_ci_family(plant, sensors, fused, GainKind::Modified, opts)
}

/// HCMCI with weight ω; ω = 1 is plain CI.
pub fn steady_hcmci(
    plant: &PlantModel,
    sensors: &SensorSuite,
    fused: &FusedModel,
    omega: f64,
    opts: &SolverOptions,
) -> Result<SteadyStatePrediction> {
    steady_ci_family(plant, sensors, fused, GainKind::Scaled(omega), opts)
}

/// Centralized Kalman filter steady state: (prior P^C, posterior).
pub fn steady_ckf(plant: &PlantModel, sensors: &SensorSuite, opts: &SolverOptions) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let problem = DareProblem::from_information(&plant.a, &plant.q, sensors.total_information())?;
    let p = solve_dare(&problem, opts.tol, opts.max_iter, &identity_start(plant))?;
    let post = problem.posterior(&p)?;
    Ok((p, post))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderReport {
    pub pairs: usize,
    pub violations: usize,
    /// Smallest min-eigenvalue of P₁ − P₂ seen.
    pub worst_margin: f64,
}

/// Checks P(Q₁,R₁) ≥ P(Q₂,R₂) for pairs ordered so the first has the larger
/// noise; violations are margins below −`slack`.
pub fn property_order_preservation(
    pairs: &[(DareProblem, DareProblem)],
    slack: f64,
    opts: &SolverOptions,
) -> Result<OrderReport> {
    let mut report = OrderReport { pairs: pairs.len(), violations: 0, worst_margin: f64::INFINITY };
    for (big, small) in pairs {
        let n = big.a.nrows();
        let p1 = solve_dare(big, opts.tol, opts.max_iter, &DMatrix::identity(n, n))?;
        let p2 = solve_dare(small, opts.tol, opts.max_iter, &DMatrix::identity(n, n))?;
        let margin = linalg::min_eigenvalue(&(p1 - p2));
        report.worst_margin = report.worst_margin.min(margin);
        if margin < -slack {
            report.violations += 1;
        }
    }
    Ok(report)
}

pub fn property_order_preservation_hcre(
    pairs: &[(HcreProblem, HcreProblem)],
    slack: f64,
    opts: &SolverOptions,
) -> Result<OrderReport> {
    let mut report = OrderReport { pairs: pairs.len(), violations: 0, worst_margin: f64::INFINITY };
    for (big, small) in pairs {
        let n = big.a.nrows();
        let start = vec![DMatrix::identity(n, n); big.node_count()];
        let p1 = solve_hcre(big, opts.tol, opts.max_iter, &start)?;
        let p2 = solve_hcre(small, opts.tol, opts.max_iter, &start)?;
        let margin = p1
            .iter()
            .zip(&p2)
            .map(|(a, b)| linalg::min_eigenvalue(&(a - b)))
            .fold(f64::INFINITY, f64::min);
        report.worst_margin = report.worst_margin.min(margin);
        if margin < -slack {
            report.violations += 1;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub steps: usize,
    /// max_i ‖P_{i,K} − P_i‖_F against the constant-parameter solution.
    pub gap: f64,
    pub limit: Vec<DMatrix<f64>>,
    pub last: Vec<DMatrix<f64>>,
}

/// Runs the DARR with a time-varying R̀_k and compares with the DARE at the limit R.
pub fn property_convergent_parameter(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r_limit: &DMatrix<f64>,
    r_sequence: impl Fn(usize) -> DMatrix<f64>,
    steps: usize,
    opts: &SolverOptions,
) -> Result<ConvergenceReport> {
    let limit_problem = DareProblem::new(a, c, q, r_limit)?;
    let n = a.nrows();
    let limit = solve_dare(&limit_problem, opts.tol, opts.max_iter, &DMatrix::identity(n, n))?;
    let mut p = DMatrix::identity(n, n);
    for k in 1..=steps {
        let info = c.transpose() * linalg::inv_spd(&r_sequence(k))? * c;
        let post = linalg::inv_spd(&(linalg::inv_spd(&p)? + info))?;
        p = predict(a, &post, q);
    }
    Ok(ConvergenceReport { steps, gap: (&p - &limit).norm(), limit: vec![limit], last: vec![p] })
}

/// HCRR analogue: per-node R̀_{i,k} → R_i with fixed C_i and weights.
#[allow(clippy::too_many_arguments)]
pub fn property_convergent_parameter_hcre(
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
    weights: &DMatrix<f64>,
    cs: &[DMatrix<f64>],
    r_limit: &[DMatrix<f64>],
    r_sequence: impl Fn(usize) -> Vec<DMatrix<f64>>,
    steps: usize,
    opts: &SolverOptions,
) -> Result<ConvergenceReport> {
    let infos_for = |rs: &[DMatrix<f64>]| -> Result<Vec<DMatrix<f64>>> {
        cs.iter()
            .zip(rs)
            .map(|(c, r)| Ok(linalg::symmetrized(c.transpose() * linalg::inv_spd(r)? * c)))
            .collect()
    };
    let problem = HcreProblem::new(a, q, weights.clone(), infos_for(r_limit)?)?;
    let n = a.nrows();
    let start = vec![DMatrix::identity(n, n); cs.len()];
    let limit = solve_hcre(&problem, opts.tol, opts.max_iter, &start)?;
    let mut ps = start;
    for k in 1..=steps {
        let stepper = HcreProblem { infos: infos_for(&r_sequence(k))?, ..problem.clone() };
        ps = stepper.step(&ps)?;
    }
    let gap = ps.iter().zip(&limit).map(|(p, l)| (p - l).norm()).fold(0.0, f64::max);
    Ok(ConvergenceReport { steps, gap, limit, last: ps })
}
