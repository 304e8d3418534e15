//! Dense symmetric-matrix helpers shared by every module.
//!
//! Everything here works on `DMatrix<f64>`; the problem sizes are desk scale
//! (state dimension 4, networks of a few dozen nodes).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{DkfError, Result};

/// Relative eigenvalue floor used when inverting information matrices.
pub const INVERSE_FLOOR: f64 = 1e-12;

/// Relative asymmetry accepted before a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

/// max |m_ij - m_ji| divided by max(1, max |m_ij|).
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    if m.nrows() != m.ncols() {
        return f64::INFINITY;
    }
    let scale = m.amax().max(1.0);
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

pub fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    let asym = relative_asymmetry(m);
    if asym > tol {
        Err(DkfError::Asymmetric(asym))
    } else {
        Ok(())
    }
}

/// Eigendecomposition of the symmetric part of `m`, eigenvalues ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrized(m.clone()));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(k));
    }
    (values, vectors)
}

/// V diag(f(λ)) Vᵀ.
pub fn spectral_map(values: &DVector<f64>, vectors: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let n = values.len();
    let mut scaled = vectors.clone();
    for k in 0..n {
        let s = f(values[k]);
        scaled.column_mut(k).scale_mut(s);
    }
    symmetrized(&scaled * vectors.transpose())
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let (values, _) = sym_eigen(m);
    values[0]
}

pub fn max_abs_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let (values, _) = sym_eigen(m);
    values.amax()
}

/// Moore–Penrose inverse of a symmetric matrix; eigenvalues with
/// |λ| <= rel_tol · max|λ| are treated as zero.
pub fn pinv_sym(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen(m);
    let cutoff = rel_tol * values.amax();
    spectral_map(&values, &vectors, |l| if l.abs() <= cutoff || l == 0.0 { 0.0 } else { 1.0 / l })
}

/// Inverse of a symmetric positive definite matrix via eigendecomposition.
/// Eigenvalues are floored at `INVERSE_FLOOR · λ_max`; a non-positive
/// smallest eigenvalue is reported as singular.
pub fn inv_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen(m);
    let n = values.len();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let top = values[n - 1];
    if !(values[0] > 0.0) || !top.is_finite() {
        return Err(DkfError::Singular(format!(
            "smallest eigenvalue {:.3e} of a {n}x{n} matrix is not positive",
            values[0]
        )));
    }
    let floor = INVERSE_FLOOR * top;
    Ok(spectral_map(&values, &vectors, |l| 1.0 / l.max(floor)))
}

/// Inverse of an SPD matrix through its Cholesky factor, falling back to
/// `inv_spd` when the factorization fails. Used in the per-step filter
/// updates where the eigen route dominates the run time.
pub fn inv_spd_fast(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match m.clone().cholesky() {
        Some(chol) => Ok(symmetrized(chol.inverse())),
        None => inv_spd(m),
    }
}

/// Symmetric PSD square root. Eigenvalues at round-off level
/// (below n·ε·max|λ|) and negative ones are clamped to zero, so a rank-deficient
/// input gets an exactly rank-deficient root.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen(m);
    let cutoff = values.len() as f64 * f64::EPSILON * values.amax();
    spectral_map(&values, &vectors, |l| if l <= cutoff { 0.0 } else { l.sqrt() })
}

/// Rank from singular values with threshold `rel_tol · σ_max`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let top = sv.amax();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

/// col(C, CA, …, CA^{n-1}).
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = c.nrows();
    let mut obs = DMatrix::zeros(m * n, n);
    let mut block = c.clone();
    for k in 0..n {
        obs.view_mut((k * m, 0), (m, n)).copy_from(&block);
        block = &block * a;
    }
    obs
}

/// Rank test on the observability matrix with threshold 1e-8 · σ_max.
pub fn is_observable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    c.nrows() > 0 && rank(&observability_matrix(a, c), 1e-8) == a.nrows()
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().amax()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn vstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), b.shape()).copy_from(b);
        r += b.nrows();
    }
    out
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != m) {
        return Err(DkfError::InvalidArgument("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pinv_of_rank_one() {
        let u = DVector::from_vec(vec![0.6, 0.8]);
        let m = &u * u.transpose();
        let p = pinv_sym(&m, 1e-10);
        assert_relative_eq!(p, m, epsilon = 1e-12);
    }

    #[test]
    fn inv_spd_rejects_singular() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(inv_spd(&m), Err(DkfError::Singular(_))));
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let inv = inv_spd(&m).unwrap();
        assert_relative_eq!(&m * inv, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn sqrt_psd_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let r = sqrt_psd(&m);
        assert_relative_eq!(&r * &r, m, epsilon = 1e-12);
    }

    #[test]
    fn observability_of_double_integrator() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(is_observable(&a, &DMatrix::from_row_slice(1, 2, &[1.0, 0.0])));
        assert!(!is_observable(&a, &DMatrix::from_row_slice(1, 2, &[0.0, 1.0])));
    }

    #[test]
    fn eigenvalues_sorted_ascending() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0, 2.0]));
        let (v, _) = sym_eigen(&m);
        assert_eq!(v.as_slice(), &[-1.0, 2.0, 3.0]);
    }
}
