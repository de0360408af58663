//! Basic games, Gaussian information structures and linear equilibria.
//!
//! Agent `t` best responds with `f(t) = E_t[F(t)] + E_t[θ(t)]`, where
//! `F(t) = ∫ R(t,t′) f(t′) dν(t′)` is its local aggregate. Under jointly
//! Gaussian states and signals we look for equilibria in the linear class
//! `f(t) = φ(t) + c(t)ᵀ (x(t) − E x(t))`. Taking expectations pins down the
//! mean `φ` through `(I − 𝐑)φ = E θ`; matching the coefficients on
//! `x(t) − E x(t)` gives
//!
//! ```text
//! c(t) = Σ_t⁺ ( Σ_{t′} w_{t′} R(t,t′) Cov[x(t), x(t′)] c(t′) + Cov[x(t), θ(t)] )
//! ```
//!
//! with `Σ_t⁺` the pseudo-inverse of the own-signal covariance.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{ensure_same_grid, GridFunction, MeasureGrid};
use crate::kernel::Kernel;
use crate::linalg;

/// Relative eigenvalue cutoff of the own-signal pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Coefficient count above which [`SolverKind::Auto`] switches to iteration.
pub const DIRECT_SOLVE_LIMIT: usize = 10_000;

/// The pair of a state process and a payoff structure.
#[derive(Debug, Clone)]
pub struct BasicGame {
    grid: Arc<MeasureGrid>,
    payoff: Kernel,
    state_mean: GridFunction,
    state_cov: Kernel,
}

impl BasicGame {
    pub fn new(payoff: Kernel, state_mean: GridFunction, state_cov: Kernel) -> Result<Self> {
        let grid = payoff.grid().clone();
        ensure_same_grid(&grid, state_mean.grid(), "payoff and state mean")?;
        ensure_same_grid(&grid, state_cov.grid(), "payoff and state covariance")?;
        if !state_cov.check_psd(None)? {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: state_cov.min_gram_eigenvalue()?,
            });
        }
        Ok(Self { grid, payoff, state_mean, state_cov })
    }

    /// Game whose agents all face the same state `θ ~ N(mean, var)`.
    pub fn common_state(payoff: Kernel, mean: f64, var: f64) -> Result<Self> {
        if !(var >= 0.0) || !var.is_finite() {
            return Err(Error::Domain(format!("state variance must be non-negative, got {var}")));
        }
        let grid = payoff.grid().clone();
        let state_mean = GridFunction::constant(grid.clone(), mean)?;
        let state_cov = Kernel::constant(grid, var)?;
        Self::new(payoff, state_mean, state_cov)
    }

    pub fn grid(&self) -> &Arc<MeasureGrid> {
        &self.grid
    }

    pub fn payoff(&self) -> &Kernel {
        &self.payoff
    }

    pub fn state_mean(&self) -> &GridFunction {
        &self.state_mean
    }

    pub fn state_cov(&self) -> &Kernel {
        &self.state_cov
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// `(mean, variance)` when the state is common to all agents.
    pub fn common_state_params(&self) -> Option<(f64, f64)> {
        let c = self.state_cov.values();
        let v = c[(0, 0)];
        let scale = 1e-12 * (1.0 + v.abs());
        let m = self.state_mean.get(0);
        let mean_ok = self
            .state_mean
            .values()
            .iter()
            .all(|x| (x - m).abs() <= 1e-12 * (1.0 + m.abs()));
        (mean_ok && c.iter().all(|x| (x - v).abs() <= scale)).then_some((m, v))
    }

    pub fn with_state_mean(&self, state_mean: GridFunction) -> Result<Self> {
        Self::new(self.payoff.clone(), state_mean, self.state_cov.clone())
    }
}

/// Joint Gaussian law of the states `{θ(t)}` and all agents' signals.
///
/// `joint_cov` is ordered as `[θ(t₀) … θ(t_{n−1}), x(t₀) …, x(t_{n−1}) …]`,
/// where agent `t`'s signal occupies `signal_dims[t]` consecutive entries.
#[derive(Debug, Clone)]
pub struct GaussianInfo {
    grid: Arc<MeasureGrid>,
    signal_dims: Vec<usize>,
    offsets: Vec<usize>,
    signal_mean: DVector<f64>,
    joint_cov: DMatrix<f64>,
}

impl GaussianInfo {
    /// Validated constructor from an explicit joint covariance.
    pub fn new(
        grid: Arc<MeasureGrid>,
        signal_dims: Vec<usize>,
        signal_mean: DVector<f64>,
        joint_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let info = Self::assemble(grid, signal_dims, signal_mean, joint_cov)?;
        let min = linalg::min_sym_eigenvalue(&info.joint_cov)?;
        let scale = info.joint_cov.diagonal().max().max(0.0);
        if min < -1e-8 * scale {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
        }
        Ok(info)
    }

    fn assemble(
        grid: Arc<MeasureGrid>,
        signal_dims: Vec<usize>,
        signal_mean: DVector<f64>,
        joint_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let n = grid.len();
        if signal_dims.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: signal_dims.len() });
        }
        if signal_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidInput("every agent needs at least one signal component".into()));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &signal_dims {
            offsets.push(offsets.last().unwrap() + d);
        }
        let total = offsets[n];
        if signal_mean.len() != total {
            return Err(Error::LengthMismatch { expected: total, actual: signal_mean.len() });
        }
        if joint_cov.nrows() != n + total || joint_cov.ncols() != n + total {
            return Err(Error::InvalidInput(format!(
                "joint covariance must be {0}x{0}, got {1}x{2}",
                n + total,
                joint_cov.nrows(),
                joint_cov.ncols()
            )));
        }
        if joint_cov.iter().chain(signal_mean.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("information structure".into()));
        }
        let asym = (&joint_cov - joint_cov.transpose()).amax();
        if asym > 1e-12 * (1.0 + joint_cov.amax()) {
            return Err(Error::InvalidInput(format!("joint covariance is not symmetric ({asym:e})")));
        }
        let joint_cov = linalg::symmetric_part(&joint_cov);
        Ok(Self { grid, signal_dims, offsets, signal_mean, joint_cov })
    }

    /// Signals `x = L θ + e` with `e ~ N(0, noise_cov)` independent of the
    /// states; `loading` is `D × n`.
    pub fn from_linear_signals(
        game: &BasicGame,
        signal_dims: Vec<usize>,
        loading: &DMatrix<f64>,
        noise_cov: &DMatrix<f64>,
    ) -> Result<Self> {
        let n = game.len();
        let total: usize = signal_dims.iter().sum();
        if loading.nrows() != total || loading.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "loading matrix must be {total}x{n}, got {}x{}",
                loading.nrows(),
                loading.ncols()
            )));
        }
        if noise_cov.nrows() != total || noise_cov.ncols() != total {
            return Err(Error::InvalidInput(format!("noise covariance must be {total}x{total}")));
        }
        let min = linalg::min_sym_eigenvalue(noise_cov)?;
        if min < -1e-8 * noise_cov.diagonal().max().max(0.0) {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
        }
        let st = game.state_cov().values();
        let cross = loading * st;
        let xx = &cross * loading.transpose() + noise_cov;
        let mut joint = DMatrix::zeros(n + total, n + total);
        joint.view_mut((0, 0), (n, n)).copy_from(st);
        joint.view_mut((n, 0), (total, n)).copy_from(&cross);
        joint.view_mut((0, n), (n, total)).copy_from(&cross.transpose());
        joint.view_mut((n, n), (total, total)).copy_from(&linalg::symmetric_part(&xx));
        let mean = loading * game.state_mean().values();
        Self::assemble(game.grid().clone(), signal_dims, mean, joint)
    }

    /// Uninformative signals (`x(t) ≡ 0`).
    pub fn no_info(game: &BasicGame) -> Result<Self> {
        let n = game.len();
        Self::from_linear_signals(game, vec![1; n], &DMatrix::zeros(n, n), &DMatrix::zeros(n, n))
    }

    /// Every agent observes its own state exactly.
    pub fn full_info(game: &BasicGame) -> Result<Self> {
        let n = game.len();
        Self::from_linear_signals(game, vec![1; n], &DMatrix::identity(n, n), &DMatrix::zeros(n, n))
    }

    /// `x(t) = θ(t) + η` with a single noise term shared by everyone.
    pub fn public(game: &BasicGame, noise_var: f64) -> Result<Self> {
        check_var(noise_var)?;
        let n = game.len();
        let noise = DMatrix::from_element(n, n, noise_var);
        Self::from_linear_signals(game, vec![1; n], &DMatrix::identity(n, n), &noise)
    }

    /// `x(t) = θ(t) + ε(t)` with independent noise.
    pub fn private_iid(game: &BasicGame, noise_var: f64) -> Result<Self> {
        check_var(noise_var)?;
        let n = game.len();
        let noise = DMatrix::identity(n, n) * noise_var;
        Self::from_linear_signals(game, vec![1; n], &DMatrix::identity(n, n), &noise)
    }

    /// Agents in `nodes` observe their state exactly, the rest observe nothing.
    pub fn targeted(game: &BasicGame, nodes: &[usize]) -> Result<Self> {
        let n = game.len();
        let mut l = DMatrix::zeros(n, n);
        for &i in nodes {
            if i >= n {
                return Err(Error::InvalidInput(format!("node {i} outside grid of {n} nodes")));
            }
            l[(i, i)] = 1.0;
        }
        Self::from_linear_signals(game, vec![1; n], &l, &DMatrix::zeros(n, n))
    }

    /// `x(t) = a·θ(t) + b·ε(t)` with independent standard normal `ε`.
    pub fn scaled_private(game: &BasicGame, a: f64, b: f64) -> Result<Self> {
        let n = game.len();
        let noise = DMatrix::identity(n, n) * (b * b);
        Self::from_linear_signals(game, vec![1; n], &(DMatrix::identity(n, n) * a), &noise)
    }

    /// Two signals per agent: a private `θ(t) + ε(t)` and a public `θ(t) + η`.
    pub fn private_and_public(game: &BasicGame, var_private: f64, var_public: f64) -> Result<Self> {
        check_var(var_private)?;
        check_var(var_public)?;
        let n = game.len();
        let mut l = DMatrix::zeros(2 * n, n);
        let mut noise = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            l[(2 * i, i)] = 1.0;
            l[(2 * i + 1, i)] = 1.0;
            noise[(2 * i, 2 * i)] = var_private;
            for j in 0..n {
                noise[(2 * i + 1, 2 * j + 1)] = var_public;
            }
        }
        Self::from_linear_signals(game, vec![2; n], &l, &noise)
    }

    pub fn grid(&self) -> &Arc<MeasureGrid> {
        &self.grid
    }

    pub fn signal_dims(&self) -> &[usize] {
        &self.signal_dims
    }

    pub fn total_signal_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Index range of agent `t`'s signal inside the stacked signal vector.
    pub fn signal_range(&self, t: usize) -> std::ops::Range<usize> {
        self.offsets[t]..self.offsets[t + 1]
    }

    /// Owning agent of each stacked signal component.
    pub fn owners(&self) -> Vec<usize> {
        let mut v = Vec::with_capacity(self.total_signal_dim());
        for (t, &d) in self.signal_dims.iter().enumerate() {
            v.extend(std::iter::repeat_n(t, d));
        }
        v
    }

    pub fn signal_mean(&self) -> &DVector<f64> {
        &self.signal_mean
    }

    pub fn joint_cov(&self) -> &DMatrix<f64> {
        &self.joint_cov
    }

    pub fn theta_block(&self) -> DMatrix<f64> {
        let n = self.grid.len();
        self.joint_cov.view((0, 0), (n, n)).into_owned()
    }

    /// `Cov[x, x]`, `D × D`.
    pub fn signal_block(&self) -> DMatrix<f64> {
        let n = self.grid.len();
        let d = self.total_signal_dim();
        self.joint_cov.view((n, n), (d, d)).into_owned()
    }

    /// `Cov[x, θ]`, `D × n`.
    pub fn cross_block(&self) -> DMatrix<f64> {
        let n = self.grid.len();
        let d = self.total_signal_dim();
        self.joint_cov.view((n, 0), (d, n)).into_owned()
    }

    fn check_against(&self, game: &BasicGame) -> Result<()> {
        ensure_same_grid(&self.grid, game.grid(), "information structure and game")?;
        let diff = linalg::max_abs_diff(&self.theta_block(), game.state_cov().values());
        if diff > 1e-10 * (1.0 + game.state_cov().values().amax()) {
            return Err(Error::InvalidInput(format!(
                "state block of the information structure differs from the game's state covariance by {diff:e}"
            )));
        }
        Ok(())
    }
}

fn check_var(v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("variance must be non-negative, got {v}")))
    }
}

/// Solution of `(I − 𝐑)φ = E θ`.
pub fn solve_mean(game: &BasicGame) -> Result<GridFunction> {
    let ev = game.payoff().eigenvalues()?;
    if ev
        .iter()
        .any(|z| linalg::is_numerically_real(*z) && (z.re - 1.0).abs() <= 1e-9)
    {
        return Err(Error::SingularMeanEquation);
    }
    let a = game.payoff().operator_matrix();
    let n = a.nrows();
    let system = DMatrix::identity(n, n) - &a;
    let mu = game.state_mean().values();
    let phi = system.lu().solve(mu).ok_or(Error::SingularMeanEquation)?;
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularMeanEquation);
    }
    GridFunction::from_vector(game.grid().clone(), phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Direct,
    FixedPoint,
    Auto,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub solver: SolverKind,
    /// Initial loadings for the fixed-point solver, one vector per agent.
    pub initial: Option<Vec<DVector<f64>>>,
    pub tol: f64,
    pub max_iter: usize,
    /// Refuse to solve when the payoff violates (R1).
    pub require_r1: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            solver: SolverKind::Auto,
            initial: None,
            tol: 1e-12,
            max_iter: 100_000,
            require_r1: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveDiagnostics {
    pub solver: SolverKind,
    pub iterations: usize,
    /// Best-response residual of the loadings in the induced `L₂` norm.
    pub residual: f64,
    /// `max_t |φ(t) − (𝐑φ)(t) − E θ(t)|`.
    pub mean_residual: f64,
}

/// Linear equilibrium `f(t) = b(t) + c(t)ᵀ x(t)` with its induced moments.
#[derive(Debug, Clone)]
pub struct LinearEquilibrium {
    pub intercepts: GridFunction,
    pub loadings: Vec<DVector<f64>>,
    /// `Cov[f(s), f(t)]`.
    pub induced_action_cov: Kernel,
    /// `Cov[f(t), θ(t)]`.
    pub induced_action_state_cov: GridFunction,
    /// `E[f(t)]`.
    pub induced_mean: GridFunction,
    /// `Var[θ(t)]` per agent.
    pub state_var: Vec<f64>,
    pub diagnostics: Option<SolveDiagnostics>,
}

impl LinearEquilibrium {
    /// Builds a strategy profile from explicit coefficients and computes the
    /// moments it induces under `info`.
    pub fn from_coefficients(
        info: &GaussianInfo,
        intercepts: GridFunction,
        loadings: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let n = info.grid.len();
        ensure_same_grid(&info.grid, intercepts.grid(), "intercepts and information structure")?;
        if loadings.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: loadings.len() });
        }
        for (t, c) in loadings.iter().enumerate() {
            if c.len() != info.signal_dims[t] {
                return Err(Error::LengthMismatch { expected: info.signal_dims[t], actual: c.len() });
            }
        }
        let stacked = stack(&loadings, info.total_signal_dim());
        let xx = info.signal_block();
        let xth = info.cross_block();
        let y = &xx * expand(info, &stacked);
        let mut xi = DMatrix::zeros(n, n);
        for s in 0..n {
            let r = info.signal_range(s);
            for t in 0..n {
                xi[(s, t)] = loadings[s].dot(&y.view((r.start, t), (r.len(), 1)).column(0));
            }
        }
        let zeta: Vec<f64> = (0..n)
            .map(|t| {
                let r = info.signal_range(t);
                loadings[t].dot(&xth.view((r.start, t), (r.len(), 1)).column(0))
            })
            .collect();
        let mean: Vec<f64> = (0..n)
            .map(|t| {
                let r = info.signal_range(t);
                intercepts.get(t) + loadings[t].dot(&info.signal_mean.rows(r.start, r.len()))
            })
            .collect();
        let theta = info.theta_block();
        let grid = info.grid.clone();
        Ok(Self {
            induced_action_cov: Kernel::symmetrized(grid.clone(), xi)?,
            induced_action_state_cov: GridFunction::new(grid.clone(), zeta)?,
            induced_mean: GridFunction::new(grid, mean)?,
            state_var: theta.diagonal().iter().copied().collect(),
            intercepts,
            loadings,
            diagnostics: None,
        })
    }

    pub fn grid(&self) -> &Arc<MeasureGrid> {
        self.intercepts.grid()
    }

    /// Stacked loadings vector (length `D`).
    pub fn stacked_loadings(&self) -> DVector<f64> {
        stack(&self.loadings, self.loadings.iter().map(|c| c.len()).sum())
    }

    /// Rows `node, intercept, loadings…, var, cov_theta` for CSV export.
    pub fn export_rows(&self) -> Vec<Vec<f64>> {
        let xi = self.induced_action_cov.values();
        (0..self.loadings.len())
            .map(|t| {
                let mut row = vec![t as f64, self.intercepts.get(t)];
                row.extend(self.loadings[t].iter());
                row.push(xi[(t, t)]);
                row.push(self.induced_action_state_cov.get(t));
                row
            })
            .collect()
    }
}

fn stack(loadings: &[DVector<f64>], total: usize) -> DVector<f64> {
    let mut v = DVector::zeros(total);
    let mut k = 0;
    for c in loadings {
        v.rows_mut(k, c.len()).copy_from(c);
        k += c.len();
    }
    v
}

/// `D × n` matrix whose column `t` holds `c(t)` on agent `t`'s rows.
fn expand(info: &GaussianInfo, stacked: &DVector<f64>) -> DMatrix<f64> {
    let n = info.grid.len();
    let mut m = DMatrix::zeros(info.total_signal_dim(), n);
    for t in 0..n {
        for k in info.signal_range(t) {
            m[(k, t)] = stacked[k];
        }
    }
    m
}

/// Precomputed pieces of the coefficient fixed point `c = P (H c + g)`.
struct CoefficientSystem {
    ranges: Vec<std::ops::Range<usize>>,
    sigma: Vec<DMatrix<f64>>,
    pinv: Vec<DMatrix<f64>>,
    /// `H[k,l] = Cov[x_k, x_l] · R(o(k), o(l)) · w_{o(l)}`.
    h: DMatrix<f64>,
    g: DVector<f64>,
    weights: Vec<f64>,
}

impl CoefficientSystem {
    fn new(game: &BasicGame, info: &GaussianInfo) -> Result<Self> {
        let n = game.len();
        let owners = info.owners();
        let xx = info.signal_block();
        let xth = info.cross_block();
        let r = game.payoff().values();
        let w = game.grid().weights();
        let dim = info.total_signal_dim();
        let h = DMatrix::from_fn(dim, dim, |k, l| xx[(k, l)] * r[(owners[k], owners[l])] * w[owners[l]]);
        let mut g = DVector::zeros(dim);
        let mut ranges = Vec::with_capacity(n);
        let mut sigma = Vec::with_capacity(n);
        let mut pinv = Vec::with_capacity(n);
        for t in 0..n {
            let rg = info.signal_range(t);
            for k in rg.clone() {
                g[k] = xth[(k, t)];
            }
            let s = xx.view((rg.start, rg.start), (rg.len(), rg.len())).into_owned();
            let p = linalg::sym_pinv(&s, PINV_CUTOFF).map_err(|_| Error::SingularSignalCov { node: t })?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::SingularSignalCov { node: t });
            }
            ranges.push(rg);
            sigma.push(s);
            pinv.push(p);
        }
        Ok(Self { ranges, sigma, pinv, h, g, weights: w.to_vec() })
    }

    fn dim(&self) -> usize {
        self.g.len()
    }

    /// Applies the block-diagonal pseudo-inverse.
    fn apply_p(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (rg, p) in self.ranges.iter().zip(&self.pinv) {
            let seg = p * v.rows(rg.start, rg.len());
            out.rows_mut(rg.start, rg.len()).copy_from(&seg);
        }
        out
    }

    fn map(&self, c: &DVector<f64>) -> DVector<f64> {
        self.apply_p(&(&self.h * c + &self.g))
    }

    /// `(Σ_t w_t c_tᵀ Σ_t c_t)^{1/2}`: the `L₂(ν ⊗ P)` norm of the induced
    /// centred actions.
    fn induced_norm(&self, c: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for ((rg, sig), w) in self.ranges.iter().zip(&self.sigma).zip(&self.weights) {
            let seg = c.rows(rg.start, rg.len());
            s += w * seg.dot(&(sig * seg));
        }
        s.max(0.0).sqrt()
    }

    /// Projects each agent's coefficients onto the range of its signal
    /// covariance; the complement does not affect actions.
    fn project(&self, c: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(c.len());
        for ((rg, sig), p) in self.ranges.iter().zip(&self.sigma).zip(&self.pinv) {
            let seg = p * (sig * c.rows(rg.start, rg.len()));
            out.rows_mut(rg.start, rg.len()).copy_from(&seg);
        }
        out
    }

    fn solve_direct(&self) -> Result<DVector<f64>> {
        let dim = self.dim();
        let mut a = DMatrix::identity(dim, dim);
        for (rg, p) in self.ranges.iter().zip(&self.pinv) {
            let block = p * self.h.rows(rg.start, rg.len());
            let mut rows = a.rows_mut(rg.start, rg.len());
            rows -= block;
        }
        let rhs = self.apply_p(&self.g);
        let lu = a.clone().lu();
        let u = lu.u();
        let diag = u.diagonal();
        let (dmin, dmax) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
        if dim > 0 && dmin <= 1e-13 * dmax.max(1.0) {
            return Err(Error::SingularEquilibriumSystem);
        }
        let c = lu.solve(&rhs).ok_or(Error::SingularEquilibriumSystem)?;
        let res = (&a * &c - &rhs).amax();
        if c.iter().any(|v| !v.is_finite()) || res > 1e-8 * (1.0 + c.amax()) {
            return Err(Error::SingularEquilibriumSystem);
        }
        Ok(c)
    }

    fn solve_fixed_point(
        &self,
        start: DVector<f64>,
        step: f64,
        tol: f64,
        max_iter: usize,
    ) -> Result<(DVector<f64>, usize)> {
        let mut c = self.project(&start);
        let mut last = f64::INFINITY;
        for it in 0..max_iter {
            let delta = self.map(&c) - &c;
            let res = self.induced_norm(&delta);
            let size = self.induced_norm(&c);
            if !res.is_finite() || !size.is_finite() {
                return Err(Error::NoConvergence { iterations: it, last_step: res });
            }
            if res <= tol * (1.0 + size) {
                return Ok((c, it));
            }
            c.axpy(step, &delta, 1.0);
            last = res;
        }
        Err(Error::NoConvergence { iterations: max_iter, last_step: last })
    }
}

/// Step size of the relaxed iteration `c ← c + τ (T c − c)`. Plain iteration
/// contracts when `‖𝐑‖ < 1`. Otherwise `I − T` is strongly monotone with
/// modulus `1 − sup Φ(𝐑)` and Lipschitz constant `1 + ‖𝐑‖` in the induced
/// norm, and the damped step below converges whenever (R1) holds.
fn relaxation_step(payoff: &Kernel) -> Result<f64> {
    let norm = payoff.spectral_norm();
    if norm < 1.0 {
        return Ok(1.0);
    }
    let (_, sup) = payoff.numerical_range_bounds()?;
    if sup < 1.0 {
        let mu = 1.0 - sup;
        let lip = 1.0 + norm;
        Ok(mu / (lip * lip))
    } else {
        Ok(1.0)
    }
}

/// Solves for the linear equilibrium with default options.
pub fn solve_linear_equilibrium(game: &BasicGame, info: &GaussianInfo) -> Result<LinearEquilibrium> {
    solve_linear_equilibrium_with(game, info, &SolveOptions::default())
}

pub fn solve_linear_equilibrium_with(
    game: &BasicGame,
    info: &GaussianInfo,
    opts: &SolveOptions,
) -> Result<LinearEquilibrium> {
    info.check_against(game)?;
    if opts.require_r1 {
        let (_, sup) = game.payoff().numerical_range_bounds()?;
        if sup >= 1.0 {
            return Err(Error::NumericalRangeViolated { sup });
        }
    }
    let phi = solve_mean(game)?;
    let sys = CoefficientSystem::new(game, info)?;
    let solver = match opts.solver {
        SolverKind::Auto if sys.dim() <= DIRECT_SOLVE_LIMIT => SolverKind::Direct,
        SolverKind::Auto => SolverKind::FixedPoint,
        s => s,
    };
    let (c, iterations) = match solver {
        SolverKind::Direct => (sys.solve_direct()?, 0),
        _ => {
            let start = match &opts.initial {
                Some(init) => {
                    if init.len() != game.len() {
                        return Err(Error::LengthMismatch { expected: game.len(), actual: init.len() });
                    }
                    stack(init, sys.dim())
                }
                None => DVector::zeros(sys.dim()),
            };
            if start.len() != sys.dim() {
                return Err(Error::LengthMismatch { expected: sys.dim(), actual: start.len() });
            }
            let step = relaxation_step(game.payoff())?;
            sys.solve_fixed_point(start, step, opts.tol, opts.max_iter)?
        }
    };
    let residual = sys.induced_norm(&(sys.map(&c) - &c));
    let loadings: Vec<DVector<f64>> = sys
        .ranges
        .iter()
        .map(|rg| c.rows(rg.start, rg.len()).into_owned())
        .collect();
    let intercepts: Vec<f64> = (0..game.len())
        .map(|t| {
            let rg = &sys.ranges[t];
            phi.get(t) - loadings[t].dot(&info.signal_mean.rows(rg.start, rg.len()))
        })
        .collect();
    let intercepts = GridFunction::new(game.grid().clone(), intercepts)?;
    let mut eq = LinearEquilibrium::from_coefficients(info, intercepts, loadings)?;
    let mean_residual = mean_residuals(game, &eq.induced_mean)?
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    eq.diagnostics = Some(SolveDiagnostics { solver, iterations, residual, mean_residual });
    Ok(eq)
}

fn mean_residuals(game: &BasicGame, mean: &GridFunction) -> Result<Vec<f64>> {
    let agg = game.payoff().apply(mean)?;
    Ok((0..game.len())
        .map(|t| mean.get(t) - agg.get(t) - game.state_mean().get(t))
        .collect())
}

/// Residuals of the first- and second-moment restrictions
/// `E f(t) = ∫R E f + E θ(t)` and `Var f(t) = ∫R Cov[f(t), f(·)] + Cov[f(t), θ(t)]`.
#[derive(Debug, Clone, Serialize)]
pub struct MomentRestrictionReport {
    pub mean_residuals: Vec<f64>,
    pub variance_residuals: Vec<f64>,
    pub max_mean_residual: f64,
    pub max_variance_residual: f64,
    pub pass: bool,
}

pub fn verify_moment_restrictions(
    eq: &LinearEquilibrium,
    game: &BasicGame,
    tol: f64,
) -> Result<MomentRestrictionReport> {
    ensure_same_grid(eq.grid(), game.grid(), "equilibrium and game")?;
    let mean_residuals = mean_residuals(game, &eq.induced_mean)?;
    let xi = eq.induced_action_cov.values();
    let a = game.payoff().operator_matrix();
    let n = game.len();
    let variance_residuals: Vec<f64> = (0..n)
        .map(|t| {
            let agg: f64 = (0..n).map(|s| a[(t, s)] * xi[(t, s)]).sum();
            xi[(t, t)] - agg - eq.induced_action_state_cov.get(t)
        })
        .collect();
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let max_mean_residual = max_abs(&mean_residuals);
    let max_variance_residual = max_abs(&variance_residuals);
    Ok(MomentRestrictionReport {
        pass: max_mean_residual <= tol && max_variance_residual <= tol,
        mean_residuals,
        variance_residuals,
        max_mean_residual,
        max_variance_residual,
    })
}

/// Residual of `Sd f = Corr[f, θ] / (1 − r·Corr[f, f′]) · Sd θ` for an
/// equilibrium that is symmetric across agents with a common state.
pub fn symmetric_moment_identity(eq: &LinearEquilibrium, r: f64) -> Result<f64> {
    let n = eq.loadings.len();
    if n < 2 {
        return Err(Error::InvalidInput("symmetry needs at least two agents".into()));
    }
    let xi = eq.induced_action_cov.values();
    let d = xi[(0, 0)];
    let o = xi[(0, 1)];
    let z = eq.induced_action_state_cov.get(0);
    let v = eq.state_var[0];
    let tol = 1e-9 * (1.0 + xi.amax() + v.abs());
    for s in 0..n {
        if (xi[(s, s)] - d).abs() > tol
            || (eq.induced_action_state_cov.get(s) - z).abs() > tol
            || (eq.state_var[s] - v).abs() > tol
        {
            return Err(Error::InvalidInput(format!("agent {s} breaks the symmetry")));
        }
        for t in 0..n {
            if s != t && (xi[(s, t)] - o).abs() > tol {
                return Err(Error::InvalidInput(format!("pair ({s}, {t}) breaks the symmetry")));
            }
        }
    }
    if d <= 0.0 {
        return Ok(0.0);
    }
    let sd = d.sqrt();
    let corr_ff = o / d;
    // Corr[f, θ]·Sd θ = Cov[f, θ]/Sd f, which stays defined when Var θ = 0.
    Ok(sd - (z / sd) / (1.0 - r * corr_ff))
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

    fn const_game(n: usize, r: f64, mean: f64, var: f64) -> BasicGame {
        BasicGame::common_state(Kernel::constant(ugrid(n), r).unwrap(), mean, var).unwrap()
    }

    #[test]
    fn solve_mean_examples() {
        let phi = solve_mean(&const_game(10, 0.5, 1.0, 1.0)).unwrap();
        // Σ_k 0.5^k = 2
        assert!(phi.values().iter().all(|v| (v - 2.0).abs() < 1e-12));

        let g = ugrid(12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = Kernel::from_fn(g.clone(), |_, _| rng.random_range(-0.9..0.9)).unwrap();
        let game = BasicGame::common_state(r, 0.0, 1.0).unwrap();
        assert!(solve_mean(&game).unwrap().max_abs() == 0.0);

        assert!(matches!(solve_mean(&const_game(5, 1.0, 1.0, 1.0)), Err(Error::SingularMeanEquation)));
    }

    #[test]
    fn no_information_equilibrium_is_the_mean() {
        let game = const_game(8, 0.3, 1.5, 2.0);
        let eq = solve_linear_equilibrium(&game, &GaussianInfo::no_info(&game).unwrap()).unwrap();
        let phi = solve_mean(&game).unwrap();
        assert!((eq.intercepts.values() - phi.values()).amax() < 1e-12);
        assert!(eq.loadings.iter().all(|c| c.amax() == 0.0));
        assert!(eq.induced_action_cov.values().amax() == 0.0);
        let rep = verify_moment_restrictions(&eq, &game, 1e-10).unwrap();
        assert!(rep.pass && rep.max_variance_residual == 0.0);
        assert_eq!(symmetric_moment_identity(&eq, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn full_information_common_state() {
        for r in [-2.0, 0.0, 0.5, 0.9] {
            let game = const_game(20, r, 0.0, 1.0);
            let eq = solve_linear_equilibrium(&game, &GaussianInfo::full_info(&game).unwrap()).unwrap();
            for c in &eq.loadings {
                assert!((c[0] - 1.0 / (1.0 - r)).abs() < 1e-10, "r={r} c={}", c[0]);
            }
            assert!(symmetric_moment_identity(&eq, r).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn perturbed_loadings_break_the_restrictions() {
        let game = const_game(10, 0.5, 0.0, 1.0);
        let info = GaussianInfo::private_iid(&game, 1.0).unwrap();
        let eq = solve_linear_equilibrium(&game, &info).unwrap();
        assert!(verify_moment_restrictions(&eq, &game, 1e-8).unwrap().pass);
        let mut l = eq.loadings.clone();
        l[3][0] += 0.01;
        let bad = LinearEquilibrium::from_coefficients(&info, eq.intercepts.clone(), l).unwrap();
        assert!(!verify_moment_restrictions(&bad, &game, 1e-8).unwrap().pass);
    }

    #[test]
    fn singular_equilibrium_system_is_reported() {
        let game = BasicGame::common_state(Kernel::constant(ugrid(4), 1.0).unwrap(), 0.0, 1.0).unwrap();
        let info = GaussianInfo::full_info(&game).unwrap();
        let sys = CoefficientSystem::new(&game, &info).unwrap();
        assert!(matches!(sys.solve_direct(), Err(Error::SingularEquilibriumSystem)));
    }

    #[test]
    fn fixed_point_diverges_outside_r1() {
        let game = const_game(6, 1.5, 0.0, 1.0);
        let info = GaussianInfo::full_info(&game).unwrap();
        let opts = SolveOptions { solver: SolverKind::FixedPoint, max_iter: 2_000, ..Default::default() };
        let res = solve_linear_equilibrium_with(&game, &info, &opts);
        assert!(matches!(res, Err(Error::NoConvergence { .. })), "{:?}", res.map(|e| e.diagnostics));
        let strict = SolveOptions { require_r1: true, ..Default::default() };
        assert!(matches!(
            solve_linear_equilibrium_with(&game, &info, &strict),
            Err(Error::NumericalRangeViolated { .. })
        ));
    }

    #[test]
    fn rejects_inconsistent_state_block() {
        let g1 = const_game(5, 0.5, 0.0, 1.0);
        let g2 = const_game(5, 0.5, 0.0, 2.0);
        let info = GaussianInfo::full_info(&g1).unwrap();
        assert!(solve_linear_equilibrium(&g2, &info).is_err());
    }

    fn random_setup(seed: u64, n: usize) -> (BasicGame, GaussianInfo) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let masses: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        let g = MeasureGrid::from_masses(None, masses).unwrap().into_shared();
        let raw = Kernel::from_fn(g.clone(), |_, _| rng.random_range(-1.5..1.5)).unwrap();
        let (_, sup) = raw.numerical_range_bounds().unwrap();
        let payoff = if sup > 0.7 { raw.scaled(0.7 / sup).unwrap() } else { raw };
        let b = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let st = Kernel::symmetrized(g.clone(), &b * b.transpose() + DMatrix::identity(n, n) * 0.1).unwrap();
        let mean = GridFunction::new(g, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let game = BasicGame::new(payoff, mean, st).unwrap();
        let dims: Vec<usize> = (0..n).map(|_| rng.random_range(1..3)).collect();
        let dtot: usize = dims.iter().sum();
        let l = DMatrix::from_fn(dtot, n, |_, _| rng.random_range(-1.0..1.0));
        let e = DMatrix::from_fn(dtot, dtot + 1, |_, _| rng.random_range(-0.5..0.5));
        let info = GaussianInfo::from_linear_signals(&game, dims, &l, &(&e * e.transpose())).unwrap();
        (game, info)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn direct_and_iterative_solutions_coincide(seed in any::<u64>(), n in 2usize..12) {
            let (game, info) = random_setup(seed, n);
            let direct = solve_linear_equilibrium_with(
                &game, &info, &SolveOptions { solver: SolverKind::Direct, ..Default::default() }).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let init = info.signal_dims().iter()
                .map(|&d| DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0)))
                .collect();
            let fp = solve_linear_equilibrium_with(&game, &info, &SolveOptions {
                solver: SolverKind::FixedPoint, initial: Some(init), ..Default::default()
            }).unwrap();
            let diff = (direct.stacked_loadings() - fp.stacked_loadings()).amax();
            prop_assert!(diff <= 1e-7, "diff {diff}");
            prop_assert!(direct.diagnostics.as_ref().unwrap().residual <= 1e-8);
        }

        #[test]
        fn induced_moments_are_consistent(seed in any::<u64>(), n in 2usize..12) {
            let (game, info) = random_setup(seed, n);
            let eq = solve_linear_equilibrium(&game, &info).unwrap();
            let phi = solve_mean(&game).unwrap();
            prop_assert!((eq.induced_mean.values() - phi.values()).amax() <= 1e-8);
            prop_assert!(verify_moment_restrictions(&eq, &game, 1e-8).unwrap().pass);
            prop_assert!(eq.induced_action_cov.check_psd(Some(1e-9)).unwrap());

            // Var[∫f] recomputed from the stacked covariance of the signals.
            let w = game.grid().weight_vector();
            let mut lam = DMatrix::zeros(n, info.total_signal_dim());
            for t in 0..n {
                for (j, k) in info.signal_range(t).enumerate() {
                    lam[(t, k)] = eq.loadings[t][j];
                }
            }
            let direct = (w.transpose() * &lam * info.signal_block() * lam.transpose() * &w)[(0, 0)];
            let fub = (w.transpose() * eq.induced_action_cov.values() * &w)[(0, 0)];
            prop_assert!((direct - fub).abs() <= 1e-10 * (1.0 + direct.abs()));
        }
    }
}
