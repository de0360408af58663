//! Monte Carlo verification of the aggregation calculus and of solved
//! equilibria.
//!
//! Draws of a Gaussian vector `N(μ, C)` are `μ + B z` with `B` the spectral
//! square root of `C` (negative eigenvalues clamped at zero) and `z` standard
//! normal. Draws are produced in fixed-size chunks; chunk `k` uses a
//! ChaCha8 generator seeded with `seed` on stream `k`, so results do not
//! depend on how chunks are scheduled across threads.
//!
//! Stacked vectors are laid out as `[θ-block (s entries), process (n entries)]`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{
    solve_linear_equilibrium, solve_mean, BasicGame, GaussianInfo, LinearEquilibrium,
};
use crate::grid::{GridFunction, MeasureGrid};
use crate::kernel::Kernel;
use crate::linalg;

pub const GENERATOR_ID: &str = "chacha8-stream-per-chunk/standard-normal/spectral-factor";
pub const CHUNK: usize = 4096;
pub const DEFAULT_DRAWS: usize = 100_000;
pub const DEFAULT_TOL_SE: f64 = 4.0;

/// Gaussian sampler with a precomputed square-root factor.
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor_t: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::LengthMismatch { expected: mean.len(), actual: cov.nrows() });
        }
        let f = linalg::psd_factor(cov)?;
        let scale = f.max_eigenvalue.max(0.0);
        if f.min_eigenvalue < -1e-6 * scale {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: f.min_eigenvalue });
        }
        if f.min_eigenvalue < -1e-8 * scale {
            log::warn!(
                "clamping covariance eigenvalue {:e} (largest {:e}) to zero",
                f.min_eigenvalue,
                f.max_eigenvalue
            );
        }
        Ok(Self { mean, factor_t: f.factor.transpose() })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Draw rows `[start, start + len)` of chunk `k`.
    fn chunk(&self, seed: u64, k: usize, len: usize) -> DMatrix<f64> {
        let dim = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut z = DMatrix::zeros(len, dim);
        for i in 0..len {
            for j in 0..dim {
                z[(i, j)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let mut x = z * &self.factor_t;
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        x
    }

    /// Applies `f` to every chunk of `draws` rows and returns the results in
    /// chunk order.
    pub fn map_chunks<T: Send>(
        &self,
        draws: usize,
        seed: u64,
        f: impl Fn(&DMatrix<f64>) -> T + Sync + Send,
    ) -> Vec<T> {
        let chunks = draws.div_ceil(CHUNK);
        crate::with_thread_cap(|| {
            (0..chunks)
                .into_par_iter()
                .map(|k| {
                    let len = CHUNK.min(draws - k * CHUNK);
                    f(&self.chunk(seed, k, len))
                })
                .collect()
        })
    }
}

/// `d` joint draws of a stacked Gaussian vector.
#[derive(Debug, Clone)]
pub struct ProcessSample {
    /// `d × (s + n)`.
    pub draws: DMatrix<f64>,
    pub theta_dim: usize,
    pub seed: u64,
    pub generator_id: String,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl ProcessSample {
    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    pub fn process_dim(&self) -> usize {
        self.draws.ncols() - self.theta_dim
    }

    /// Weighted aggregate `Σ w_t f(t)` of every draw.
    pub fn aggregates(&self, grid: &MeasureGrid) -> Result<DVector<f64>> {
        self.check_grid(grid)?;
        let w = grid.weight_vector();
        Ok(self.draws.columns(self.theta_dim, grid.len()) * w)
    }

    fn check_grid(&self, grid: &MeasureGrid) -> Result<()> {
        if grid.len() != self.process_dim() {
            return Err(Error::LengthMismatch { expected: self.process_dim(), actual: grid.len() });
        }
        Ok(())
    }
}

pub fn sample_gaussian(mean: &DVector<f64>, cov: &DMatrix<f64>, d: usize, seed: u64) -> Result<ProcessSample> {
    sample_process(mean, cov, 0, d, seed)
}

pub fn sample_process(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    theta_dim: usize,
    d: usize,
    seed: u64,
) -> Result<ProcessSample> {
    if theta_dim > mean.len() {
        return Err(Error::InvalidInput("theta block larger than the stacked vector".into()));
    }
    let sampler = GaussianSampler::new(mean.clone(), cov)?;
    let chunks = sampler.map_chunks(d, seed, |c| c.clone());
    let mut draws = DMatrix::zeros(d, mean.len());
    let mut row = 0;
    for c in chunks {
        draws.rows_mut(row, c.nrows()).copy_from(&c);
        row += c.nrows();
    }
    Ok(ProcessSample {
        draws,
        theta_dim,
        seed,
        generator_id: GENERATOR_ID.to_string(),
        mean: mean.clone(),
        cov: cov.clone(),
    })
}

/// Statistic compared with its target in units of standard error.
#[derive(Debug, Clone, Serialize)]
pub struct StochasticCheck {
    pub name: String,
    pub statistic: f64,
    pub target: f64,
    pub standard_error: f64,
    pub tol_se: f64,
    pub pass: bool,
}

impl StochasticCheck {
    fn new(name: &str, statistic: f64, target: f64, standard_error: f64, tol_se: f64) -> Self {
        let floor = 1e-12 * (1.0 + target.abs());
        let pass = (statistic - target).abs() <= tol_se * standard_error + floor;
        Self { name: name.into(), statistic, target, standard_error, tol_se, pass }
    }

    pub fn z_score(&self) -> f64 {
        if self.standard_error > 0.0 {
            (self.statistic - self.target) / self.standard_error
        } else {
            0.0
        }
    }
}

/// Deterministic identity checked to a fixed tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct ExactCheck {
    pub name: String,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

impl ExactCheck {
    fn new(name: &str, residual: f64, tol: f64) -> Self {
        Self { name: name.into(), residual, tol, pass: residual <= tol }
    }
}

fn process_block(sample: &ProcessSample) -> (DVector<f64>, DMatrix<f64>) {
    let s = sample.theta_dim;
    let n = sample.process_dim();
    (sample.mean.rows(s, n).into_owned(), sample.cov.view((s, s), (n, n)).into_owned())
}

fn mean_var(v: &DVector<f64>) -> (f64, f64) {
    let d = v.len() as f64;
    let mean = v.sum() / d;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d - 1.0);
    (mean, var)
}

/// Empirical variance of `∫ f dν` against `∬ Cov[f(s), f(t)] dν dν`.
pub fn verify_aggregate_variance(sample: &ProcessSample, grid: &MeasureGrid, tol_se: f64) -> Result<StochasticCheck> {
    let agg = sample.aggregates(grid)?;
    let (_, var) = mean_var(&agg);
    let (_, c) = process_block(sample);
    let w = grid.weight_vector();
    let target = (w.transpose() * c * &w)[(0, 0)];
    let se = target.abs() * (2.0 / (sample.len() as f64 - 1.0)).sqrt();
    Ok(StochasticCheck::new("aggregate_variance", var, target, se, tol_se))
}

/// Empirical mean of `∫ f dν` against `∫ E f dν`.
pub fn verify_aggregate_mean(sample: &ProcessSample, grid: &MeasureGrid, tol_se: f64) -> Result<StochasticCheck> {
    let agg = sample.aggregates(grid)?;
    let (mean, _) = mean_var(&agg);
    let (mu, c) = process_block(sample);
    let w = grid.weight_vector();
    let target = w.dot(&mu);
    let var = (w.transpose() * c * &w)[(0, 0)];
    let se = (var.max(0.0) / sample.len() as f64).sqrt();
    Ok(StochasticCheck::new("aggregate_mean", mean, target, se, tol_se))
}

/// `Cov[aᵀX, ∫ f dν]` computed aggregate-first against
/// `∫ Cov[aᵀX, f(t)] dν` computed node by node, for the stacked vector `X`.
pub fn verify_covariance_exchange(
    cov: &DMatrix<f64>,
    theta_dim: usize,
    grid: &MeasureGrid,
    a: &DVector<f64>,
) -> Result<ExactCheck> {
    let n = grid.len();
    if cov.nrows() != theta_dim + n || a.len() != cov.nrows() {
        return Err(Error::LengthMismatch { expected: theta_dim + n, actual: cov.nrows() });
    }
    let mut agg = DVector::zeros(cov.nrows());
    agg.rows_mut(theta_dim, n).copy_from(&grid.weight_vector());
    let lhs = (a.transpose() * cov * agg)[(0, 0)];
    let rhs: f64 = (0..n)
        .map(|t| grid.weights()[t] * a.dot(&cov.column(theta_dim + t)))
        .sum();
    Ok(ExactCheck::new("covariance_exchange", (lhs - rhs).abs(), 1e-12 * (1.0 + lhs.abs())))
}

/// For every draw, `E[∫ f | X_c]` against `∫ E[f(t) | X_c] dν` where `c`
/// indexes conditioning entries of the stacked vector.
pub fn verify_conditional_fubini(
    sample: &ProcessSample,
    grid: &MeasureGrid,
    cond: &[usize],
) -> Result<ExactCheck> {
    sample.check_grid(grid)?;
    let dim = sample.cov.nrows();
    if let Some(c) = cond.iter().find(|&&c| c >= dim) {
        return Err(Error::InvalidInput(format!("conditioning index {c} out of range")));
    }
    let s = sample.theta_dim;
    let n = grid.len();
    let k = cond.len();
    let w = grid.weight_vector();
    let cc = DMatrix::from_fn(k, k, |i, j| sample.cov[(cond[i], cond[j])]);
    let p = linalg::sym_pinv(&cc, 1e-10)?;
    let fc = DMatrix::from_fn(n, k, |t, j| sample.cov[(s + t, cond[j])]);
    // Node-wise regression coefficients and their aggregate-first counterpart.
    let b = &fc * &p;
    let agg_coef = p * (fc.transpose() * &w);
    let mu_f = sample.mean.rows(s, n);
    let mu_c = DVector::from_iterator(k, cond.iter().map(|&c| sample.mean[c]));
    let agg_mean = w.dot(&mu_f);
    let mut worst = 0.0f64;
    let mut scale = 1.0f64;
    for row in sample.draws.row_iter() {
        let dev = DVector::from_iterator(k, cond.iter().map(|&c| row[c])) - &mu_c;
        let lhs = agg_mean + agg_coef.dot(&dev);
        let node = &mu_f + &b * &dev;
        let rhs = w.dot(&node);
        worst = worst.max((lhs - rhs).abs());
        scale = scale.max(lhs.abs());
    }
    Ok(ExactCheck::new("conditional_fubini", worst, 1e-9 * scale))
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeAudit {
    pub node: usize,
    /// Mean and standard deviation of `f(t) − E_t[F(t) + θ(t)]`.
    pub residual_mean: f64,
    pub residual_sd: f64,
    /// Regression check: mean of `F(t) + θ(t) − f(t)` and its largest
    /// covariance with the agent's own signal, both in standard errors.
    pub regression_mean_se: f64,
    pub regression_cov_se: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BrAuditReport {
    pub nodes: Vec<NodeAudit>,
    pub draws: usize,
    pub tol_se: f64,
    pub pass: bool,
}

impl BrAuditReport {
    pub fn failing_nodes(&self) -> Vec<usize> {
        self.nodes.iter().filter(|a| !a.pass).map(|a| a.node).collect()
    }
}

#[derive(Clone)]
struct Moments {
    n: f64,
    sum_r: Vec<f64>,
    sum_r2: Vec<f64>,
    sum_u: Vec<f64>,
    sum_u2: Vec<f64>,
    sum_ux: Vec<f64>,
    sum_x: Vec<f64>,
    sum_x2: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize, dim: usize) -> Self {
        Self {
            n: 0.0,
            sum_r: vec![0.0; n],
            sum_r2: vec![0.0; n],
            sum_u: vec![0.0; n],
            sum_u2: vec![0.0; n],
            sum_ux: vec![0.0; dim],
            sum_x: vec![0.0; dim],
            sum_x2: vec![0.0; dim],
        }
    }

    fn add(&mut self, o: &Moments) {
        self.n += o.n;
        let pairs = [
            (&mut self.sum_r, &o.sum_r),
            (&mut self.sum_r2, &o.sum_r2),
            (&mut self.sum_u, &o.sum_u),
            (&mut self.sum_u2, &o.sum_u2),
            (&mut self.sum_ux, &o.sum_ux),
            (&mut self.sum_x, &o.sum_x),
            (&mut self.sum_x2, &o.sum_x2),
        ];
        for (a, b) in pairs {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Monte Carlo audit of the best-response property of a linear profile.
///
/// For every draw of `(θ, x)` and agent `t` it forms
/// * the residual `f(t) − E_t[F(t) + θ(t)]`, with the conditional
///   expectation from the Gaussian conditioning formula; and
/// * the prediction error `u(t) = F(t) + θ(t) − f(t)`, which must have mean
///   zero and be uncorrelated with `x(t)` when `f(t)` is the best response.
///
/// Agent `t` passes when the residual's mean and standard deviation are
/// below `tol_se · Sd f(t)/√d` (plus a `1e−9` floor) and the regression
/// statistics of `u(t)` are within `tol_se` standard errors of zero.
pub fn best_response_audit(
    eq: &LinearEquilibrium,
    game: &BasicGame,
    info: &GaussianInfo,
    d: usize,
    seed: u64,
    tol_se: f64,
) -> Result<BrAuditReport> {
    let n = game.len();
    if eq.loadings.len() != n || info.grid().len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: eq.loadings.len() });
    }
    if d < 2 {
        return Err(Error::InvalidInput("the audit needs at least two draws".into()));
    }
    let dim = info.total_signal_dim();
    let xx = info.signal_block();
    let xth = info.cross_block();
    let mu_x = info.signal_mean();
    let a = game.payoff().operator_matrix();
    let stacked_c = eq.stacked_loadings();
    // Mean of each action and the linear map x(t) − μ(t) ↦ E_t[F(t) + θ(t)].
    let f_mean: Vec<f64> = (0..n)
        .map(|t| {
            let rg = info.signal_range(t);
            eq.intercepts.get(t) + eq.loadings[t].dot(&mu_x.rows(rg.start, rg.len()))
        })
        .collect();
    let mut rhs_const = vec![0.0; n];
    let mut rhs_coef = Vec::with_capacity(n);
    for t in 0..n {
        let rg = info.signal_range(t);
        let sig = xx.view((rg.start, rg.start), (rg.len(), rg.len())).into_owned();
        let p = linalg::sym_pinv(&sig, crate::game::PINV_CUTOFF)?;
        rhs_const[t] = (0..n).map(|s| a[(t, s)] * f_mean[s]).sum::<f64>() + game.state_mean().get(t);
        // Cov[x(t), F(t) + θ(t)]
        let mut cov = DVector::zeros(rg.len());
        for (j, k) in rg.clone().enumerate() {
            let mut acc = xth[(k, t)];
            for s in 0..n {
                if a[(t, s)] != 0.0 {
                    let rs = info.signal_range(s);
                    let mut cf = 0.0;
                    for l in rs.clone() {
                        cf += xx[(k, l)] * stacked_c[l];
                    }
                    acc += a[(t, s)] * cf;
                }
            }
            cov[j] = acc;
        }
        rhs_coef.push(p * cov);
    }

    let mut mean = DVector::zeros(n + dim);
    mean.rows_mut(0, n).copy_from(game.state_mean().values());
    mean.rows_mut(n, dim).copy_from(mu_x);
    let sampler = GaussianSampler::new(mean, info.joint_cov())?;
    let owners = info.owners();
    let parts = sampler.map_chunks(d, seed, |chunk| {
        let mut m = Moments::zeros(n, dim);
        let mut f = DVector::zeros(n);
        for row in chunk.row_iter() {
            m.n += 1.0;
            for t in 0..n {
                let rg = info.signal_range(t);
                let mut v = eq.intercepts.get(t);
                for (j, k) in rg.enumerate() {
                    v += eq.loadings[t][j] * row[n + k];
                }
                f[t] = v;
            }
            let mut u_t = vec![0.0; n];
            for t in 0..n {
                let rg = info.signal_range(t);
                let mut rhs = rhs_const[t];
                for (j, k) in rg.enumerate() {
                    rhs += rhs_coef[t][j] * (row[n + k] - mu_x[k]);
                }
                let res = f[t] - rhs;
                m.sum_r[t] += res;
                m.sum_r2[t] += res * res;
                let agg: f64 = (0..n).map(|s| a[(t, s)] * f[s]).sum();
                let u = agg + row[t] - f[t];
                u_t[t] = u;
                m.sum_u[t] += u;
                m.sum_u2[t] += u * u;
            }
            for k in 0..dim {
                let x = row[n + k];
                m.sum_x[k] += x;
                m.sum_x2[k] += x * x;
                m.sum_ux[k] += u_t[owners[k]] * x;
            }
        }
        m
    });
    let mut tot = Moments::zeros(n, dim);
    for p in &parts {
        tot.add(p);
    }
    let dn = tot.n;
    let xi = eq.induced_action_cov.values();
    let mut nodes = Vec::with_capacity(n);
    for t in 0..n {
        let r_mean = tot.sum_r[t] / dn;
        let r_sd = ((tot.sum_r2[t] / dn - r_mean * r_mean).max(0.0) * dn / (dn - 1.0)).sqrt();
        let sd_f = xi[(t, t)].max(0.0).sqrt();
        let scale = 1.0 + f_mean[t].abs() + sd_f;
        let threshold = tol_se * sd_f / dn.sqrt() + 1e-9 * scale;

        let u_mean = tot.sum_u[t] / dn;
        let u_var = (tot.sum_u2[t] / dn - u_mean * u_mean).max(0.0) * dn / (dn - 1.0);
        let u_sd = u_var.sqrt();
        let floor = 1e-9 * (1.0 + u_sd + u_mean.abs());
        let mean_se = (u_mean.abs() - floor).max(0.0) / (u_sd / dn.sqrt()).max(f64::MIN_POSITIVE);
        let mut cov_se = 0.0f64;
        for k in info.signal_range(t) {
            let x_mean = tot.sum_x[k] / dn;
            let x_sd = ((tot.sum_x2[k] / dn - x_mean * x_mean).max(0.0)).sqrt();
            let cov = tot.sum_ux[k] / dn - u_mean * x_mean;
            let se = u_sd * x_sd / dn.sqrt();
            let excess = (cov.abs() - 1e-9 * (1.0 + u_sd) * (1.0 + x_sd)).max(0.0);
            let z = if excess == 0.0 { 0.0 } else { excess / se.max(f64::MIN_POSITIVE) };
            cov_se = cov_se.max(z);
        }
        let pass = r_mean.abs() <= threshold
            && r_sd <= threshold
            && mean_se <= tol_se
            && cov_se <= tol_se;
        nodes.push(NodeAudit {
            node: t,
            residual_mean: r_mean,
            residual_sd: r_sd,
            regression_mean_se: mean_se,
            regression_cov_se: cov_se,
            threshold,
            pass,
        });
    }
    let pass = nodes.iter().all(|a| a.pass);
    Ok(BrAuditReport { nodes, draws: d, tol_se, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct DuplicateReport {
    pub lambda: f64,
    /// Eigenvector normalized to `‖φ‖ = 1` in `L₂(ν)` before scaling.
    pub eigenvector: Vec<f64>,
    /// Off-diagonal signal correlation.
    pub correlation: f64,
    /// The state mean was moved to zero because the mean equation is singular.
    pub state_mean_shifted: bool,
    pub base_audit: BrAuditReport,
    pub duplicate_audit: BrAuditReport,
    /// `‖f − g‖` in `L₂(ν ⊗ P)`.
    pub distance: f64,
    pub pass: bool,
}

/// Builds a second equilibrium `g = f + s·φ·x` from a real eigenvalue
/// `λ ≥ 1` of the payoff operator with eigenvector `φ`, and audits both.
///
/// Signals are standard normal, independent of the state, with
/// `Cov[x(s), x(t)] = c` for `s ≠ t`. With `δ = w_t R(t,t)` constant on the
/// support of `φ`, `c = (1 − δ)/(λ − δ)` makes `E_t[(𝐑 φx)(t)] = φ(t) x(t)`
/// hold exactly on the grid; as `δ → 0` it tends to `1/λ`.
pub fn duplicate_equilibria(
    game: &BasicGame,
    scale: f64,
    d: usize,
    seed: u64,
    tol_se: f64,
) -> Result<DuplicateReport> {
    let n = game.len();
    let ev = game.payoff().real_eigenvalues()?;
    let largest = ev.first().copied();
    let lambda = match largest {
        Some(l) if l >= 1.0 - 1e-9 => l,
        _ => return Err(Error::NoRealEigenvalueAtLeastOne { largest }),
    };
    let a = game.payoff().operator_matrix();
    let (mut phi, _) = linalg::null_vector(&(&a - DMatrix::identity(n, n) * lambda))?;
    let w = game.grid().weight_vector();
    let norm = phi.iter().zip(w.iter()).map(|(p, w)| w * p * p).sum::<f64>().sqrt();
    phi /= norm;
    if let Some(first) = phi.iter().find(|p| p.abs() > 1e-12) {
        if *first < 0.0 {
            phi = -phi;
        }
    }
    let pmax = phi.amax();
    let support: Vec<usize> = (0..n).filter(|&t| phi[t].abs() > 1e-9 * pmax).collect();
    let delta = w[support[0]] * game.payoff().get(support[0], support[0]);
    if support
        .iter()
        .any(|&t| (w[t] * game.payoff().get(t, t) - delta).abs() > 1e-12 * (1.0 + delta.abs()))
    {
        return Err(Error::InvalidInput(
            "w(t)·R(t,t) must be constant on the eigenvector's support".into(),
        ));
    }
    let c = (1.0 - delta) / (lambda - delta);
    if !(c.is_finite() && c <= 1.0 + 1e-12 && c >= -1.0 / (n.max(2) - 1) as f64) {
        return Err(Error::InvalidInput(format!("signal correlation {c} is not admissible")));
    }
    let c = c.min(1.0);

    let (game, shifted) = match solve_mean(game) {
        Ok(_) => (game.clone(), false),
        Err(Error::SingularMeanEquation) => {
            (game.with_state_mean(GridFunction::constant(game.grid().clone(), 0.0)?)?, true)
        }
        Err(e) => return Err(e),
    };
    let phi_mean = if shifted {
        GridFunction::constant(game.grid().clone(), 0.0)?
    } else {
        solve_mean(&game)?
    };

    let mut joint = DMatrix::zeros(2 * n, 2 * n);
    joint.view_mut((0, 0), (n, n)).copy_from(game.state_cov().values());
    for s in 0..n {
        for t in 0..n {
            joint[(n + s, n + t)] = if s == t { 1.0 } else { c };
        }
    }
    let info = GaussianInfo::new(game.grid().clone(), vec![1; n], DVector::zeros(n), joint)?;
    let zero = vec![DVector::zeros(1); n];
    let base = LinearEquilibrium::from_coefficients(&info, phi_mean.clone(), zero)?;
    let dup_loadings = (0..n).map(|t| DVector::from_element(1, scale * phi[t])).collect();
    let dup = LinearEquilibrium::from_coefficients(&info, phi_mean, dup_loadings)?;
    let base_audit = best_response_audit(&base, &game, &info, d, seed, tol_se)?;
    let duplicate_audit = best_response_audit(&dup, &game, &info, d, seed.wrapping_add(1), tol_se)?;
    let distance = scale.abs();
    Ok(DuplicateReport {
        lambda,
        eigenvector: phi.iter().copied().collect(),
        correlation: c,
        state_mean_shifted: shifted,
        pass: base_audit.pass && duplicate_audit.pass && distance > 0.0,
        base_audit,
        duplicate_audit,
        distance,
    })
}

/// Parameters of the symmetric game `aᵢ = r E_i[A] + s E_i[θ] + k` with a
/// private signal `xᵢ = θ + εᵢ` and a public signal `y = θ + η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BmParams {
    pub mu_theta: f64,
    pub var_theta: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub r: f64,
    pub s: f64,
    pub k: f64,
}

impl Default for BmParams {
    fn default() -> Self {
        Self { mu_theta: 0.0, var_theta: 1.0, var_x: 1.0, var_y: 1.0, r: 0.5, s: 0.5, k: 0.0 }
    }
}

impl BmParams {
    fn validate(&self) -> Result<()> {
        if !(self.r < 1.0) {
            return Err(Error::Domain(format!("the example needs r < 1, got {}", self.r)));
        }
        for (name, v) in [("var_theta", self.var_theta), ("var_x", self.var_x), ("var_y", self.var_y)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Posterior weights `(λx, λy)` of the two signals in `E[θ | x, y]`.
    pub fn signal_weights(&self) -> (f64, f64) {
        let (pt, px, py) = (1.0 / self.var_theta, 1.0 / self.var_x, 1.0 / self.var_y);
        let tot = pt + px + py;
        (px / tot, py / tot)
    }
}

/// `aᵢ = α₀ + αx xᵢ + αy y` with volatility `V = Var A` and dispersion
/// `D = Var(aᵢ − A)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BmSolution {
    pub alpha0: f64,
    pub alpha_x: f64,
    pub alpha_y: f64,
    pub volatility: f64,
    pub dispersion: f64,
}

/// Matching coefficients: with `E_i θ = (1−λx−λy)μ + λx xᵢ + λy y` and
/// `A = α₀ + αx θ + αy y`,
///
/// ```text
/// αx = (r αx + s) λx
/// αy = (r αx + s) λy + r αy
/// α₀ = r α₀ + k + (r αx + s)(1 − λx − λy) μ
/// ```
pub fn bm_example_equilibrium(p: &BmParams) -> Result<BmSolution> {
    p.validate()?;
    let (lx, ly) = p.signal_weights();
    let r = p.r;
    let m = DMatrix::from_row_slice(3, 3, &[
        1.0 - r * lx, 0.0, 0.0,
        -r * ly, 1.0 - r, 0.0,
        -r * (1.0 - lx - ly) * p.mu_theta, 0.0, 1.0 - r,
    ]);
    let rhs = DVector::from_row_slice(&[
        p.s * lx,
        p.s * ly,
        p.k + p.s * (1.0 - lx - ly) * p.mu_theta,
    ]);
    let sol = m.lu().solve(&rhs).ok_or(Error::SingularEquilibriumSystem)?;
    let (ax, ay, a0) = (sol[0], sol[1], sol[2]);
    Ok(BmSolution {
        alpha0: a0,
        alpha_x: ax,
        alpha_y: ay,
        volatility: (ax + ay).powi(2) * p.var_theta + ay * ay * p.var_y,
        dispersion: ax * ax * p.var_x,
    })
}

/// The example on `n` agents: the payoff term `s θ + k` becomes the state,
/// local aggregates exclude the agent itself (off-diagonal constant
/// structure), and signals keep the raw `θ`.
pub struct BmDiscretization {
    pub game: BasicGame,
    pub info: GaussianInfo,
    pub equilibrium: LinearEquilibrium,
    pub solution: BmSolution,
}

pub fn bm_discretized(p: &BmParams, n: usize) -> Result<BmDiscretization> {
    p.validate()?;
    let grid = MeasureGrid::uniform(n)?.into_shared();
    let payoff = Kernel::offdiagonal_constant(grid.clone(), p.r)?;
    let game = BasicGame::common_state(payoff, p.s * p.mu_theta + p.k, p.s * p.s * p.var_theta)?;
    let dim = 2 * n;
    let mut joint = DMatrix::zeros(n + dim, n + dim);
    let st = p.s * p.s * p.var_theta;
    let cross = p.s * p.var_theta;
    for i in 0..n {
        for j in 0..n {
            joint[(i, j)] = st;
        }
    }
    for t in 0..n {
        for s in 0..n {
            // x(t) and y with θ-block
            joint[(n + 2 * t, s)] = cross;
            joint[(n + 2 * t + 1, s)] = cross;
            joint[(s, n + 2 * t)] = cross;
            joint[(s, n + 2 * t + 1)] = cross;
        }
        for u in 0..n {
            let base = p.var_theta;
            joint[(n + 2 * t, n + 2 * u)] = base + if t == u { p.var_x } else { 0.0 };
            joint[(n + 2 * t + 1, n + 2 * u + 1)] = base + p.var_y;
            joint[(n + 2 * t, n + 2 * u + 1)] = base;
            joint[(n + 2 * t + 1, n + 2 * u)] = base;
        }
    }
    let mean = DVector::from_element(dim, p.mu_theta);
    let info = GaussianInfo::new(grid, vec![2; n], mean, joint)?;
    let eq = solve_linear_equilibrium(&game, &info)?;
    let c = &eq.loadings[0];
    let alpha_x = c[0];
    let alpha_y = c[1];
    let solution = BmSolution {
        alpha0: eq.intercepts.get(0),
        alpha_x,
        alpha_y,
        volatility: eq.induced_action_cov.get(0, 1),
        dispersion: eq.induced_action_cov.get(0, 0) - eq.induced_action_cov.get(0, 1),
    };
    Ok(BmDiscretization { game, info, equilibrium: eq, solution })
}

/// Mean and covariance of `[θ, y, x₀, a₀ … a_{n−1}]` under the closed-form
/// equilibrium, with a θ-block of size 3.
pub fn bm_joint_process(p: &BmParams, n: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sol = bm_example_equilibrium(p)?;
    let dim = 3 + 2 * n;
    // Latent layout: θ, η, ε₀ … ε_{n−1}.
    let mut lat_mean = DVector::zeros(n + 2);
    lat_mean[0] = p.mu_theta;
    let mut lat_sd = DVector::zeros(n + 2);
    lat_sd[0] = p.var_theta.sqrt();
    lat_sd[1] = p.var_y.sqrt();
    for i in 0..n {
        lat_sd[2 + i] = p.var_x.sqrt();
    }
    let mut l = DMatrix::zeros(dim, n + 2);
    let mut mean = DVector::zeros(dim);
    l[(0, 0)] = 1.0;
    l[(1, 0)] = 1.0;
    l[(1, 1)] = 1.0;
    l[(2, 0)] = 1.0;
    l[(2, 2)] = 1.0;
    mean[0] = p.mu_theta;
    mean[1] = p.mu_theta;
    mean[2] = p.mu_theta;
    for j in 0..n {
        // x_j = θ + ε_j with x₀ shared with the conditioning block
        let row = 3 + j;
        l[(row, 0)] = sol.alpha_x + sol.alpha_y;
        l[(row, 1)] = sol.alpha_y;
        l[(row, 2 + j)] = sol.alpha_x;
        mean[row] = sol.alpha0 + (sol.alpha_x + sol.alpha_y) * p.mu_theta;
    }
    let _ = lat_mean;
    let scaled = DMatrix::from_fn(dim, n + 2, |i, j| l[(i, j)] * lat_sd[j]);
    let cov = &scaled * scaled.transpose();
    let cov = linalg::symmetric_part(&cov);
    Ok((mean.rows(0, 3 + n).into_owned(), cov.view((0, 0), (3 + n, 3 + n)).into_owned()))
}
