//! Dense linear-algebra helpers shared by the spectral, equilibrium and
//! sampling code.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

const EIGEN_MAX_ITER: usize = 0;

/// Eigenvalues ascending with matching eigenvector columns.
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Symmetric eigendecomposition of `(m + mᵀ)/2`, eigenvalues sorted ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SymEigen> {
    let sym = symmetric_part(m);
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(Error::EigenSolverFailure)?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SymEigen { values, vectors })
}

/// Eigenvalues only of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let sym = symmetric_part(m);
    let mut v: Vec<f64> = SymmetricEigen::try_new(sym, f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(Error::EigenSolverFailure)?
        .eigenvalues
        .iter()
        .copied()
        .collect();
    v.sort_by(f64::total_cmp);
    Ok(DVector::from_vec(v))
}

pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    Ok(sym_eigenvalues(m)?[0])
}

/// Eigenvalues of a general square matrix, sorted by descending real part.
pub fn general_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(Error::EigenSolverFailure)?;
    let mut v: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::EigenSolverFailure);
    }
    sort_desc_by_real(&mut v);
    Ok(v)
}

pub fn sort_desc_by_real(v: &mut [Complex64]) {
    v.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
}

pub fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Realness cutoff used when filtering computed eigenvalues.
pub fn is_numerically_real(z: Complex64) -> bool {
    z.im.abs() <= 1e-9 * (1.0 + z.norm())
}

/// Moore–Penrose pseudo-inverse of a symmetric matrix. Eigenvalues with
/// magnitude at most `rel_cutoff · max|λ|` are treated as zero.
pub fn sym_pinv(m: &DMatrix<f64>, rel_cutoff: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = sym_eigen(m)?;
    let smax = eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cut = rel_cutoff * smax;
    let mut out = DMatrix::zeros(n, n);
    if smax == 0.0 {
        return Ok(out);
    }
    for k in 0..n {
        let l = eig.values[k];
        if l.abs() > cut {
            let v = eig.vectors.column(k);
            out.ger(1.0 / l, &v, &v, 1.0);
        }
    }
    Ok(out)
}

/// Square-root factor `B` with `B Bᵀ ≈ m`, built from the spectral
/// decomposition with negative eigenvalues clamped at zero.
pub struct PsdFactor {
    pub factor: DMatrix<f64>,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

pub fn psd_factor(m: &DMatrix<f64>) -> Result<PsdFactor> {
    let n = m.nrows();
    if n == 0 {
        return Ok(PsdFactor {
            factor: DMatrix::zeros(0, 0),
            min_eigenvalue: 0.0,
            max_eigenvalue: 0.0,
        });
    }
    let eig = sym_eigen(m)?;
    let mut factor = eig.vectors.clone();
    for k in 0..n {
        let s = eig.values[k].max(0.0).sqrt();
        factor.column_mut(k).scale_mut(s);
    }
    Ok(PsdFactor {
        factor,
        min_eigenvalue: eig.values[0],
        max_eigenvalue: eig.values[n - 1],
    })
}

/// Unit vector spanning the numerical null space of `m` (right singular
/// vector of the smallest singular value) and that singular value.
pub fn null_vector(m: &DMatrix<f64>) -> Result<(DVector<f64>, f64)> {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.ok_or(Error::EigenSolverFailure)?;
    let (k, smin) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, s)| (k, *s))
        .ok_or(Error::EigenSolverFailure)?;
    Ok((v_t.row(k).transpose(), smin))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

pub fn is_exactly_symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_singular_projector() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = sym_pinv(&m, 1e-10).unwrap();
        let expect = DMatrix::from_element(2, 2, 0.25);
        assert!(max_abs_diff(&p, &expect) < 1e-14);
        assert_eq!(sym_pinv(&DMatrix::zeros(3, 3), 1e-10).unwrap(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn factor_reproduces_matrix() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, 0.1]);
        let m = &b * b.transpose();
        let f = psd_factor(&m).unwrap();
        assert!(max_abs_diff(&(&f.factor * f.factor.transpose()), &m) < 1e-12);
        assert!(f.min_eigenvalue.abs() < 1e-12);
    }

    #[test]
    fn general_eigenvalues_of_rotation() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let ev = general_eigenvalues(&m).unwrap();
        assert!(ev.iter().all(|z| (z.im.abs() - 1.0).abs() < 1e-12 && z.re.abs() < 1e-12));
        assert!(!is_numerically_real(ev[0]));
    }

    #[test]
    fn null_vector_of_rank_deficient() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let (v, s) = null_vector(&m).unwrap();
        assert!(s < 1e-14);
        assert!((v[0] - v[1]).abs() < 1e-12);
    }
}
