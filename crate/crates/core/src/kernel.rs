//! Bivariate kernels on a weighted grid and their spectral theory.
//!
//! A [`Kernel`] stores the raw values `K(tᵢ, tⱼ)`. Spectral quantities refer
//! to the ν-weighted integral operator `(𝐊φ)(s) = ∫ K(s,t) φ(t) dν(t)`,
//! discretized as `A = K·W` with `W = diag(w)`. Because
//! `W^{1/2} A W^{-1/2} = W^{1/2} K W^{1/2} =: S`, eigenvalues of `A` and `S`
//! coincide, and Rayleigh quotients `⟨φ, 𝐊φ⟩/‖φ‖²` over `L₂(ν)` are
//! Euclidean Rayleigh quotients of `S`.
//!
//! Positive semidefiniteness is a property of the unweighted value matrix:
//! the definition quantifies over arbitrary finite node selections.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{ensure_same_grid, GridFunction, MeasureGrid};
use crate::linalg;

/// Bivariate real function sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    grid: Arc<MeasureGrid>,
    values: DMatrix<f64>,
    undirected: bool,
}

impl Kernel {
    /// Wraps a value matrix. The kernel is flagged undirected iff the
    /// matrix is exactly symmetric.
    pub fn from_matrix(grid: Arc<MeasureGrid>, values: DMatrix<f64>) -> Result<Self> {
        let undirected = linalg::is_exactly_symmetric(&values);
        Self::with_flag(grid, values, undirected)
    }

    /// Wraps a value matrix with an explicit `undirected` flag, which must be
    /// consistent with exact symmetry when set.
    pub fn with_flag(grid: Arc<MeasureGrid>, values: DMatrix<f64>, undirected: bool) -> Result<Self> {
        let n = grid.len();
        if values.nrows() != n || values.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "kernel matrix is {}x{}, grid has {n} nodes",
                values.nrows(),
                values.ncols()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("kernel entry ({}, {})", k % n, k / n)));
        }
        if undirected && !linalg::is_exactly_symmetric(&values) {
            return Err(Error::InvalidInput(
                "kernel flagged undirected but its matrix is not symmetric".into(),
            ));
        }
        Ok(Self { grid, values, undirected })
    }

    /// Symmetrizes `(K + Kᵀ)/2` exactly and flags the result undirected.
    pub fn symmetrized(grid: Arc<MeasureGrid>, values: DMatrix<f64>) -> Result<Self> {
        let n = values.nrows();
        let mut v = values;
        for i in 0..n {
            for j in 0..i {
                let a = 0.5 * (v[(i, j)] + v[(j, i)]);
                v[(i, j)] = a;
                v[(j, i)] = a;
            }
        }
        Self::with_flag(grid, v, true)
    }

    pub fn from_fn(grid: Arc<MeasureGrid>, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let n = grid.len();
        Self::from_matrix(grid, DMatrix::from_fn(n, n, &mut f))
    }

    /// `K(s,t) = r` for all pairs, diagonal included.
    pub fn constant(grid: Arc<MeasureGrid>, r: f64) -> Result<Self> {
        let n = grid.len();
        Self::with_flag(grid, DMatrix::from_element(n, n, r), true)
    }

    /// `K(s,t) = r/(1 − w_s)` for `s ≠ t` and 0 on the diagonal, so every row
    /// integrates to exactly `r` over the other agents. This is the finite
    /// grid analogue of a constant structure under which an agent's own
    /// idiosyncratic noise never enters its local aggregate.
    pub fn offdiagonal_constant(grid: Arc<MeasureGrid>, r: f64) -> Result<Self> {
        let n = grid.len();
        if n < 2 {
            return Err(Error::InvalidInput(
                "an off-diagonal kernel needs at least two nodes".into(),
            ));
        }
        let w = grid.weights().to_vec();
        let values = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { r / (1.0 - w[i]) });
        let undirected = linalg::is_exactly_symmetric(&values);
        Self::with_flag(grid, values, undirected)
    }

    /// Uni-directional structure `R(s,t) = r·1{s < t}` in node order.
    pub fn unidirectional(grid: Arc<MeasureGrid>, r: f64) -> Result<Self> {
        let n = grid.len();
        let values = DMatrix::from_fn(n, n, |i, j| if i < j { r } else { 0.0 });
        Self::with_flag(grid, values, n == 1 || r == 0.0)
    }

    /// `R(s,t) = r·q(s)·q(t)`.
    pub fn separable(grid: Arc<MeasureGrid>, r: f64, q: &[f64]) -> Result<Self> {
        let n = grid.len();
        if q.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: q.len() });
        }
        Self::with_flag(grid, DMatrix::from_fn(n, n, |i, j| r * (q[i] * q[j])), true)
    }

    /// Network structure `R(s,t) = r̄·1{(s,t) ∈ G}` from a directed edge list.
    pub fn graph(grid: Arc<MeasureGrid>, edges: &[(usize, usize)], rbar: f64) -> Result<Self> {
        let n = grid.len();
        let mut values = DMatrix::zeros(n, n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidInput(format!("edge ({i}, {j}) outside grid of {n} nodes")));
            }
            values[(i, j)] = rbar;
        }
        Self::from_matrix(grid, values)
    }

    /// `K(s,t) = 1{s = t}`.
    pub fn identity_diagonal(grid: Arc<MeasureGrid>) -> Result<Self> {
        let n = grid.len();
        Self::with_flag(grid, DMatrix::identity(n, n), true)
    }

    pub fn grid(&self) -> &Arc<MeasureGrid> {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn is_undirected(&self) -> bool {
        self.undirected
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.values.diagonal()
    }

    /// Entrywise product `(K∘R)(s,t) = K(s,t) R(s,t)`.
    pub fn hadamard(&self, other: &Kernel) -> Result<Kernel> {
        ensure_same_grid(&self.grid, &other.grid, "hadamard product operands")?;
        let v = self.values.component_mul(&other.values);
        Kernel::with_flag(self.grid.clone(), v, self.undirected && other.undirected)
    }

    pub fn scaled(&self, c: f64) -> Result<Kernel> {
        Kernel::with_flag(self.grid.clone(), &self.values * c, self.undirected)
    }

    /// `A` with `Aᵢⱼ = K(tᵢ,tⱼ)·wⱼ`.
    pub fn operator_matrix(&self) -> DMatrix<f64> {
        let w = self.grid.weights();
        let mut a = self.values.clone();
        for (j, mut col) in a.column_iter_mut().enumerate() {
            col.scale_mut(w[j]);
        }
        a
    }

    /// `S = W^{1/2} K W^{1/2}`, similar to the operator matrix.
    pub fn symmetric_similarity(&self) -> DMatrix<f64> {
        let sw: Vec<f64> = self.grid.weights().iter().map(|w| w.sqrt()).collect();
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| sw[i] * self.values[(i, j)] * sw[j])
    }

    /// Applies the integral operator: `(𝐊φ)(tᵢ) = Σⱼ K(tᵢ,tⱼ) wⱼ φ(tⱼ)`.
    pub fn apply(&self, phi: &GridFunction) -> Result<GridFunction> {
        ensure_same_grid(&self.grid, phi.grid(), "kernel and function")?;
        let wphi = phi.values().component_mul(&self.grid.weight_vector());
        GridFunction::from_vector(self.grid.clone(), &self.values * wphi)
    }

    /// Operator eigenvalues sorted by descending real part.
    pub fn eigenvalues(&self) -> Result<Vec<Complex64>> {
        if self.undirected {
            let mut v: Vec<Complex64> = linalg::sym_eigenvalues(&self.symmetric_similarity())?
                .iter()
                .map(|&x| Complex64::new(x, 0.0))
                .collect();
            linalg::sort_desc_by_real(&mut v);
            Ok(v)
        } else {
            linalg::general_eigenvalues(&self.operator_matrix())
        }
    }

    /// Real eigenvalues under the realness cutoff, descending.
    pub fn real_eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(self
            .eigenvalues()?
            .into_iter()
            .filter(|z| linalg::is_numerically_real(*z))
            .map(|z| z.re)
            .collect())
    }

    /// Extreme real Rayleigh quotients `(inf, sup)` of the operator over
    /// `L₂(ν)`: the extreme eigenvalues of the symmetric part of `S`.
    pub fn numerical_range_bounds(&self) -> Result<(f64, f64)> {
        let ev = linalg::sym_eigenvalues(&self.symmetric_similarity())?;
        Ok((ev[0], ev[ev.len() - 1]))
    }

    /// Hilbert–Schmidt norm `(∬ K² dν dν)^{1/2}`, an upper bound for the
    /// operator norm.
    pub fn operator_norm_bound(&self) -> f64 {
        self.symmetric_similarity().norm()
    }

    /// Exact operator norm on `L₂(ν)`: the largest singular value of `S`.
    pub fn spectral_norm(&self) -> f64 {
        self.symmetric_similarity()
            .singular_values()
            .iter()
            .fold(0.0f64, |a, &b| a.max(b))
    }

    /// `maxᵢ |K(tᵢ,tᵢ)|`.
    pub fn diag_sup(&self) -> f64 {
        self.values.diagonal().amax()
    }

    /// `⟨φ, 𝐊φ⟩` together with its two normalizations `/‖φ‖²` and `/‖φ‖`.
    pub fn rayleigh_quotients(&self, phi: &GridFunction) -> Result<RayleighQuotients> {
        let kphi = self.apply(phi)?;
        let form = phi.inner_product(&kphi)?;
        let norm = phi.norm();
        if norm == 0.0 {
            return Err(Error::Domain("Rayleigh quotient of the zero function".into()));
        }
        Ok(RayleighQuotients {
            form,
            by_norm_sq: form / (norm * norm),
            by_norm: form / norm,
        })
    }

    /// (R1) holds iff the numerical range lies below `1 − margin`.
    pub fn check_r1(&self, margin: f64) -> Result<bool> {
        Ok(self.numerical_range_bounds()?.1 < 1.0 - margin)
    }

    /// (R2) holds iff every numerically real eigenvalue is below 1.
    pub fn check_r2(&self) -> Result<bool> {
        Ok(r2_from_eigenvalues(&self.eigenvalues()?))
    }

    pub fn spectral_report(&self) -> Result<SpectralReport> {
        let eigenvalues = self.eigenvalues()?;
        let (inf, sup) = self.numerical_range_bounds()?;
        Ok(SpectralReport {
            r2_holds: r2_from_eigenvalues(&eigenvalues),
            eigenvalues,
            numerical_range_sup: sup,
            numerical_range_inf: inf,
            operator_norm_bound: self.operator_norm_bound(),
            spectral_norm: self.spectral_norm(),
            diag_sup: self.diag_sup(),
            r1_holds: sup < 1.0,
        })
    }

    /// Default PSD tolerance `1e−8 · max diagonal`.
    pub fn default_psd_tol(&self) -> f64 {
        1e-8 * self.values.diagonal().max().max(0.0)
    }

    /// Smallest eigenvalue of the raw value matrix.
    pub fn min_gram_eigenvalue(&self) -> Result<f64> {
        if !self.undirected {
            return Err(Error::DirectedKernel("the positive semidefiniteness check"));
        }
        linalg::min_sym_eigenvalue(&self.values)
    }

    /// PSD test on the unweighted value matrix. `tol = None` uses
    /// [`Kernel::default_psd_tol`].
    pub fn check_psd(&self, tol: Option<f64>) -> Result<bool> {
        let tol = tol.unwrap_or_else(|| self.default_psd_tol());
        Ok(self.min_gram_eigenvalue()? >= -tol)
    }

    /// `max_{s,t} K(s,t) − √(K(s,s) K(t,t))`. Non-positive for PSD kernels.
    pub fn cauchy_schwarz_audit(&self) -> Result<f64> {
        if !self.undirected {
            return Err(Error::DirectedKernel("the Cauchy-Schwarz audit"));
        }
        let d = self.values.diagonal();
        let n = self.len();
        let mut worst = f64::NEG_INFINITY;
        for j in 0..n {
            for i in 0..n {
                let bound = (d[i].max(0.0) * d[j].max(0.0)).sqrt();
                worst = worst.max(self.values[(i, j)] - bound);
            }
        }
        Ok(worst)
    }
}

fn r2_from_eigenvalues(ev: &[Complex64]) -> bool {
    ev.iter()
        .filter(|z| linalg::is_numerically_real(**z))
        .all(|z| z.re < 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RayleighQuotients {
    pub form: f64,
    pub by_norm_sq: f64,
    pub by_norm: f64,
}

/// Spectral summary of a kernel's integral operator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    #[serde(serialize_with = "ser_complex")]
    pub eigenvalues: Vec<Complex64>,
    pub numerical_range_sup: f64,
    pub numerical_range_inf: f64,
    /// Hilbert–Schmidt norm of the operator.
    pub operator_norm_bound: f64,
    pub spectral_norm: f64,
    pub diag_sup: f64,
    pub r1_holds: bool,
    pub r2_holds: bool,
}

fn ser_complex<S: serde::Serializer>(v: &[Complex64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for z in v {
        seq.serialize_element(&[z.re, z.im])?;
    }
    seq.end()
}

impl SpectralReport {
    pub fn max_real_part(&self) -> f64 {
        self.eigenvalues.first().map_or(f64::NEG_INFINITY, |z| z.re)
    }

    pub fn min_real_part(&self) -> f64 {
        self.eigenvalues.last().map_or(f64::INFINITY, |z| z.re)
    }
}

/// Result of the Hadamard-product eigenvalue bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HadamardBound {
    /// Largest real eigenvalue of `𝐊∘𝐑`; `−∞` when none is real.
    pub max_real_eig: f64,
    /// `maxᵢ K(tᵢ,tᵢ)`.
    pub bound: f64,
    pub holds: bool,
}

/// Bounds the real eigenvalues of `K∘R` by the diagonal sup of `K`, given
/// `K` undirected PSD and `R` satisfying (R1).
pub fn hadamard_eigen_bound(k: &Kernel, r: &Kernel) -> Result<HadamardBound> {
    ensure_same_grid(&k.grid, &r.grid, "hadamard bound operands")?;
    if !k.is_undirected() {
        return Err(Error::DirectedKernel("the Hadamard eigenvalue bound"));
    }
    let min_eig = k.min_gram_eigenvalue()?;
    if min_eig < -k.default_psd_tol() {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min_eig });
    }
    let (_, sup) = r.numerical_range_bounds()?;
    if sup >= 1.0 {
        return Err(Error::NumericalRangeViolated { sup });
    }
    let prod = k.hadamard(r)?;
    let max_real_eig = prod
        .real_eigenvalues()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let bound = k.diag_sup();
    let holds = if bound > 0.0 {
        max_real_eig < bound
    } else {
        max_real_eig <= 1e-12
    };
    Ok(HadamardBound { max_real_eig, bound, holds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ugrid(n: usize) -> Arc<MeasureGrid> {
        MeasureGrid::uniform(n).unwrap().into_shared()
    }

    #[test]
    fn operator_matrix_examples() {
        let k = Kernel::constant(ugrid(5), 0.5).unwrap();
        assert!(k.operator_matrix().iter().all(|&a| (a - 0.1).abs() < 1e-16));

        let id = Kernel::identity_diagonal(ugrid(4)).unwrap();
        assert_eq!(id.operator_matrix(), DMatrix::identity(4, 4) * 0.25);

        let g = ugrid(1000);
        let q = GridFunction::from_fn(g.clone(), |t| t).unwrap();
        let k = Kernel::separable(g, 1.0, q.values().as_slice()).unwrap();
        let kq = k.apply(&q).unwrap();
        let diff = (kq.values() - q.values() / 3.0).amax();
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn constant_kernel_spectrum() {
        for r in [-2.0, 0.5, 3.0] {
            let ev = Kernel::constant(ugrid(20), r).unwrap().eigenvalues().unwrap();
            let nonzero: Vec<_> = ev.iter().filter(|z| z.norm() > 1e-10).collect();
            assert_eq!(nonzero.len(), 1);
            assert!((nonzero[0].re - r).abs() < 1e-12);
        }
        let ones = vec![1.0; 30];
        let k = Kernel::separable(ugrid(30), -2.0, &ones).unwrap();
        assert!((k.eigenvalues().unwrap().last().unwrap().re + 2.0).abs() < 1e-12);
    }

    #[test]
    fn unidirectional_spectrum_and_range() {
        for n in [100, 200, 400] {
            let k = Kernel::unidirectional(ugrid(n), 5.0).unwrap();
            assert!(!k.is_undirected());
            let ev = k.eigenvalues().unwrap();
            let lmax = ev.iter().fold(0.0f64, |a, z| a.max(z.norm()));
            assert!(lmax <= 10.0 * 5.0 / n as f64, "n={n} |λ|={lmax}");
            assert!(k.check_r2().unwrap());
            assert!(!k.check_r1(0.0).unwrap());

            let r = 1.0;
            let k = Kernel::unidirectional(ugrid(n), r).unwrap();
            let (_, sup) = k.numerical_range_bounds().unwrap();
            let nf = n as f64;
            assert!(sup > 0.0 && sup < r);
            assert!(sup <= r / 2.0);
            assert!(sup >= r * (nf - 1.0) / (2.0 * nf) - 1e-12);
            let one = GridFunction::constant(ugrid(n), 1.0).unwrap();
            let q = k.rayleigh_quotients(&one).unwrap();
            assert!((q.by_norm_sq - r * (nf - 1.0) / (2.0 * nf)).abs() < 1e-12);
            assert!((q.by_norm_sq - q.by_norm).abs() < 1e-13);
        }
    }

    #[test]
    fn numerical_range_examples() {
        let (inf, sup) = Kernel::constant(ugrid(10), 0.7).unwrap().numerical_range_bounds().unwrap();
        assert!(inf.abs() < 1e-12 && (sup - 0.7).abs() < 1e-12);
        let (inf, sup) = Kernel::constant(ugrid(10), -0.7).unwrap().numerical_range_bounds().unwrap();
        assert!((inf + 0.7).abs() < 1e-12 && sup.abs() < 1e-12);
        let g = ugrid(50);
        let q: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let k = Kernel::separable(g, -1.5, &q).unwrap();
        assert!(k.numerical_range_bounds().unwrap().1 <= 1e-12);
    }

    #[test]
    fn r1_r2_examples() {
        assert!(Kernel::constant(ugrid(8), 0.5).unwrap().check_r1(0.0).unwrap());
        assert!(!Kernel::constant(ugrid(8), 1.0).unwrap().check_r1(0.0).unwrap());
        assert!(!Kernel::constant(ugrid(8), 2.0).unwrap().check_r2().unwrap());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = ugrid(25);
        let k = Kernel::from_fn(g, |_, _| rng.random_range(-0.99..0.99)).unwrap();
        assert!(k.check_r1(0.0).unwrap());

        let k = Kernel::constant(ugrid(8), 0.9).unwrap();
        assert_eq!(k.check_r1(0.0).unwrap(), k.check_r2().unwrap());
    }

    #[test]
    fn psd_examples() {
        assert!(Kernel::constant(ugrid(6), 1.0).unwrap().check_psd(None).unwrap());
        let corr = |c: f64| {
            Kernel::from_fn(ugrid(6), move |i, j| if i == j { 1.0 } else { c }).unwrap()
        };
        for lambda in [1.0, 1.5, 4.0] {
            assert!(corr(1.0 / lambda).check_psd(None).unwrap());
        }
        assert!(!corr(2.0).check_psd(None).unwrap());
        let dir = Kernel::unidirectional(ugrid(3), 1.0).unwrap();
        assert!(matches!(dir.check_psd(None), Err(Error::DirectedKernel(_))));
        assert_eq!(Kernel::constant(ugrid(4), 1.0).unwrap().cauchy_schwarz_audit().unwrap(), 0.0);
    }

    #[test]
    fn hadamard_examples() {
        let g = ugrid(10);
        let k = Kernel::constant(g.clone(), 1.0).unwrap();
        let r = Kernel::constant(g.clone(), 0.5).unwrap();
        let h = hadamard_eigen_bound(&k, &r).unwrap();
        assert!((h.max_real_eig - 0.5).abs() < 1e-12 && h.bound == 1.0 && h.holds);

        let id = Kernel::identity_diagonal(g.clone()).unwrap();
        let r = Kernel::from_fn(g.clone(), |i, j| 0.05 * (i + 2 * j) as f64 / 10.0).unwrap();
        let r = Kernel::symmetrized(g.clone(), r.into_values()).unwrap();
        let h = hadamard_eigen_bound(&id, &r).unwrap();
        let expect = (0..10).map(|i| 0.1 * r.get(i, i)).fold(f64::NEG_INFINITY, f64::max);
        assert!((h.max_real_eig - expect).abs() < 1e-14);
        assert!(h.holds);

        let g2 = MeasureGrid::uniform(2).unwrap().into_shared();
        let k = Kernel::constant(g2.clone(), 1.0).unwrap();
        let r = Kernel::from_matrix(g2, DMatrix::from_row_slice(2, 2, &[0.5, 0.9, 0.9, 0.5])).unwrap();
        assert!(r.check_r1(0.0).unwrap());
        let h = hadamard_eigen_bound(&k, &r).unwrap();
        // 2×2 operator [[.25,.45],[.45,.25]] has eigenvalues 0.7 and −0.2.
        assert!((h.max_real_eig - 0.7).abs() < 1e-12 && h.holds);

        let bad = Kernel::constant(g.clone(), 1.2).unwrap();
        assert!(matches!(
            hadamard_eigen_bound(&k_const(&g), &bad),
            Err(Error::NumericalRangeViolated { .. })
        ));
        let not_psd = Kernel::from_fn(g.clone(), |i, j| if i == j { 1.0 } else { 2.0 }).unwrap();
        assert!(matches!(
            hadamard_eigen_bound(&not_psd, &Kernel::constant(g, 0.1).unwrap()),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
    }

    fn k_const(g: &Arc<MeasureGrid>) -> Kernel {
        Kernel::constant(g.clone(), 1.0).unwrap()
    }

    fn random_kernel(seed: u64, n: usize, symmetric: bool) -> Kernel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let masses: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let g = MeasureGrid::from_masses(None, masses).unwrap().into_shared();
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
        if symmetric {
            Kernel::symmetrized(g, m).unwrap()
        } else {
            Kernel::from_matrix(g, m).unwrap()
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn spectra_of_operator_and_similarity_agree(seed in any::<u64>(), n in 2usize..20) {
            let k = random_kernel(seed, n, false);
            let mut a = linalg::general_eigenvalues(&k.operator_matrix()).unwrap();
            let mut s = linalg::general_eigenvalues(&k.symmetric_similarity()).unwrap();
            linalg::sort_desc_by_real(&mut a);
            linalg::sort_desc_by_real(&mut s);
            let key = |z: &Complex64| (z.re * 1e6).round() as i64;
            a.sort_by_key(|z| (key(z), (z.im * 1e6).round() as i64));
            s.sort_by_key(|z| (key(z), (z.im * 1e6).round() as i64));
            for (x, y) in a.iter().zip(&s) {
                prop_assert!((x - y).norm() <= 1e-9 * (1.0 + x.norm()));
            }
        }

        #[test]
        fn numerical_range_chain(seed in any::<u64>(), n in 1usize..25, sym in any::<bool>()) {
            let k = random_kernel(seed, n, sym);
            let rep = k.spectral_report().unwrap();
            let tol = 1e-9 * (1.0 + rep.operator_norm_bound);
            for z in rep.eigenvalues.iter().filter(|z| linalg::is_numerically_real(**z)) {
                prop_assert!(z.re <= rep.numerical_range_sup + tol);
                prop_assert!(z.re >= rep.numerical_range_inf - tol);
            }
            prop_assert!(rep.numerical_range_sup <= rep.spectral_norm + tol);
            prop_assert!(rep.numerical_range_inf >= -rep.spectral_norm - tol);
            prop_assert!(rep.spectral_norm <= rep.operator_norm_bound + tol);
            if sym {
                prop_assert!((rep.max_real_part() - rep.numerical_range_sup).abs() <= tol);
                prop_assert!((rep.min_real_part() - rep.numerical_range_inf).abs() <= tol);
            }
        }

        #[test]
        fn psd_closed_under_sum_and_schur_product(seed in any::<u64>(), n in 1usize..15) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = MeasureGrid::uniform(n).unwrap().into_shared();
            let mut psd = || {
                let b = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
                Kernel::symmetrized(g.clone(), &b * b.transpose()).unwrap()
            };
            let (a, b) = (psd(), psd());
            let sum = Kernel::symmetrized(g.clone(), a.values() + b.values()).unwrap();
            let prod = a.hadamard(&b).unwrap();
            prop_assert!(sum.check_psd(None).unwrap());
            prop_assert!(prod.check_psd(Some(1e-12 + prod.default_psd_tol())).unwrap());
            prop_assert!(a.cauchy_schwarz_audit().unwrap() <= 1e-10);
        }

        #[test]
        fn hadamard_bound_for_correlation_kernels(seed in any::<u64>(), n in 2usize..15) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = MeasureGrid::uniform(n).unwrap().into_shared();
            let b = DMatrix::from_fn(n, 4, |_, _| rng.random_range(-1.0..1.0f64));
            let c = &b * b.transpose();
            let corr = DMatrix::from_fn(n, n, |i, j| c[(i, j)] / (c[(i, i)] * c[(j, j)]).sqrt());
            let k = Kernel::symmetrized(g.clone(), corr).unwrap();
            let raw = Kernel::from_fn(g.clone(), |_, _| rng.random_range(-3.0..3.0)).unwrap();
            let (_, sup) = raw.numerical_range_bounds().unwrap();
            let r = if sup >= 0.95 { raw.scaled(0.95 / sup).unwrap() } else { raw };
            let h = hadamard_eigen_bound(&k, &r).unwrap();
            prop_assert!(h.holds, "{:?}", h);
        }
    }
}
