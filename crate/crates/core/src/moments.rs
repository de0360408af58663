//! Equilibrium moments `(ξ, ζ)`: obedience, positivity, the feasibility
//! bounds under a constant payoff structure, the designer's objective and
//! the canonical signals that implement a feasible moment.
//!
//! Double integrals are quadratures over all node pairs, diagonal included:
//! `∬ξ = Σᵢⱼ wᵢwⱼ ξᵢⱼ`. For bounded `ξ` the diagonal contributes `O(1/n)`,
//! so continuum formulas built from distinct representative agents are
//! matched up to that order.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{solve_mean, BasicGame, GaussianInfo, LinearEquilibrium};
use crate::grid::{ensure_same_grid, GridFunction, MeasureGrid};
use crate::kernel::Kernel;
use crate::linalg;

/// Candidate action covariance `ξ`, action–state covariance `ζ` and the
/// variance of a common state.
#[derive(Debug, Clone)]
pub struct EquilibriumMoment {
    xi: Kernel,
    zeta: GridFunction,
    state_var: f64,
}

impl EquilibriumMoment {
    pub fn new(xi: Kernel, zeta: GridFunction, state_var: f64) -> Result<Self> {
        ensure_same_grid(xi.grid(), zeta.grid(), "xi and zeta")?;
        if !xi.is_undirected() {
            return Err(Error::DirectedKernel("an equilibrium moment"));
        }
        if !state_var.is_finite() || state_var < 0.0 {
            return Err(Error::Domain(format!("state variance must be non-negative, got {state_var}")));
        }
        let scale = 1e-12 * (1.0 + xi.values().amax());
        if let Some(i) = xi.diagonal().iter().position(|&d| d < -scale) {
            return Err(Error::InvalidInput(format!("xi has a negative diagonal entry at node {i}")));
        }
        if state_var == 0.0 && zeta.max_abs() > 1e-12 {
            return Err(Error::InvalidInput("zeta must vanish when the state is deterministic".into()));
        }
        Ok(Self { xi, zeta, state_var })
    }

    pub fn zero(grid: Arc<MeasureGrid>, state_var: f64) -> Result<Self> {
        Self::new(Kernel::constant(grid.clone(), 0.0)?, GridFunction::constant(grid, 0.0)?, state_var)
    }

    /// Moments induced by a solved equilibrium of a common-state game.
    pub fn from_equilibrium(eq: &LinearEquilibrium) -> Result<Self> {
        let v = eq.state_var[0];
        if eq.state_var.iter().any(|s| (s - v).abs() > 1e-12 * (1.0 + v.abs())) {
            return Err(Error::InvalidInput(
                "equilibrium moments need a common state variance".into(),
            ));
        }
        Self::new(eq.induced_action_cov.clone(), eq.induced_action_state_cov.clone(), v)
    }

    pub fn grid(&self) -> &Arc<MeasureGrid> {
        self.xi.grid()
    }

    pub fn xi(&self) -> &Kernel {
        &self.xi
    }

    pub fn zeta(&self) -> &GridFunction {
        &self.zeta
    }

    pub fn state_var(&self) -> f64 {
        self.state_var
    }

    /// `∬ ξ dν dν`, diagonal included.
    pub fn double_integral(&self) -> f64 {
        let w = self.grid().weight_vector();
        (w.transpose() * self.xi.values() * &w)[(0, 0)]
    }

    /// `∫ ξ(t,t) dν`.
    pub fn diagonal_integral(&self) -> f64 {
        self.grid()
            .weights()
            .iter()
            .zip(self.xi.diagonal().iter())
            .map(|(w, d)| w * d)
            .sum()
    }

    /// `∫ ζ dν`.
    pub fn zeta_integral(&self) -> f64 {
        self.zeta.integrate()
    }

    /// `[[ξ, ζ], [ζᵀ, Var θ]]`.
    pub fn bordered_matrix(&self) -> DMatrix<f64> {
        let n = self.xi.len();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(self.xi.values());
        for i in 0..n {
            m[(i, n)] = self.zeta.get(i);
            m[(n, i)] = self.zeta.get(i);
        }
        m[(n, n)] = self.state_var;
        m
    }

    /// Default positivity tolerance `1e−8 · trace` of the bordered matrix.
    pub fn default_positivity_tol(&self) -> f64 {
        1e-8 * (self.xi.diagonal().sum() + self.state_var).max(0.0)
    }

    /// Default obedience tolerance `1e−8 · (1 + max|ξ|)`.
    pub fn default_obedience_tol(&self) -> f64 {
        1e-8 * (1.0 + self.xi.values().amax())
    }
}

/// Per-node residuals `ξ(t,t) − Σ w R(t,·) ξ(t,·) − ζ(t)`.
pub fn obedience_residuals(m: &EquilibriumMoment, r: &Kernel) -> Result<Vec<f64>> {
    ensure_same_grid(m.grid(), r.grid(), "moment and payoff")?;
    let a = r.operator_matrix();
    let xi = m.xi.values();
    let n = xi.nrows();
    Ok((0..n)
        .map(|t| {
            let agg: f64 = (0..n).map(|s| a[(t, s)] * xi[(t, s)]).sum();
            xi[(t, t)] - agg - m.zeta.get(t)
        })
        .collect())
}

/// Largest absolute obedience residual.
pub fn check_obedience(m: &EquilibriumMoment, r: &Kernel) -> Result<f64> {
    Ok(obedience_residuals(m, r)?
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs())))
}

pub fn is_obedient(m: &EquilibriumMoment, r: &Kernel) -> Result<bool> {
    Ok(check_obedience(m, r)? <= m.default_obedience_tol())
}

/// Smallest eigenvalue of the bordered matrix.
pub fn positivity_min_eigenvalue(m: &EquilibriumMoment) -> Result<f64> {
    linalg::min_sym_eigenvalue(&m.bordered_matrix())
}

/// Bordered-matrix positivity test; `None` uses the default tolerance.
pub fn check_positivity(m: &EquilibriumMoment, tol: Option<f64>) -> Result<bool> {
    let tol = tol.unwrap_or_else(|| m.default_positivity_tol());
    Ok(positivity_min_eigenvalue(m)? >= -tol)
}

/// Positivity through the Schur complement `κ = ξ − ζζᵀ / Var θ`.
pub fn check_positivity_schur(m: &EquilibriumMoment, tol: Option<f64>) -> Result<bool> {
    let tol = tol.unwrap_or_else(|| m.default_positivity_tol());
    let v = m.state_var;
    if v <= 0.0 {
        if m.zeta.max_abs() > tol.sqrt().max(1e-12) {
            return Ok(false);
        }
        return Ok(linalg::min_sym_eigenvalue(m.xi.values())? >= -tol);
    }
    let z = m.zeta.values();
    let kappa = m.xi.values() - z * z.transpose() / v;
    // κ's smallest eigenvalue can undershoot the bordered one by up to the
    // factor 1 + ‖ζ‖²/Var θ, so the tolerance is stretched accordingly.
    let stretch = 1.0 + z.norm_squared() / v;
    Ok(linalg::min_sym_eigenvalue(&kappa)? >= -tol * stretch)
}

/// Slacks of `(∫ζ)² ≤ Var θ·∬ξ`, `∬ξ ≤ ∫ξ(t,t)` and `∬ξ ≤ Var θ/(1−r)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsReport {
    pub cauchy: f64,
    pub diagonal: f64,
    pub amplification: f64,
    pub pass: bool,
}

impl BoundsReport {
    pub fn min_slack(&self) -> f64 {
        self.cauchy.min(self.diagonal).min(self.amplification)
    }
}

/// Feasibility bounds of a moment under the constant payoff structure `r`.
/// The slack of the first inequality is `∬ξ − (∫ζ)²/Var θ` (zero when the
/// state is deterministic).
pub fn bounds_check(m: &EquilibriumMoment, r: f64) -> Result<BoundsReport> {
    bounds_check_with_tol(m, r, 1e-9)
}

pub fn bounds_check_with_tol(m: &EquilibriumMoment, r: f64, tol: f64) -> Result<BoundsReport> {
    if !(r < 1.0) {
        return Err(Error::Domain(format!("bounds need r < 1, got {r}")));
    }
    let k = Kernel::constant(m.grid().clone(), r)?;
    let ob = check_obedience(m, &k)?;
    if ob > m.default_obedience_tol() {
        return Err(Error::InfeasibleMoment(format!("obedience residual {ob:e}")));
    }
    if !check_positivity(m, None)? {
        return Err(Error::InfeasibleMoment("positivity fails".into()));
    }
    let s = m.double_integral();
    let z = m.zeta_integral();
    let v = m.state_var;
    let cauchy = if v > 0.0 { s - z * z / v } else { s };
    let diagonal = m.diagonal_integral() - s;
    let amplification = v / ((1.0 - r) * (1.0 - r)) - s;
    let scale = tol * (1.0 + s.abs() + v / ((1.0 - r) * (1.0 - r)));
    Ok(BoundsReport {
        cauchy,
        diagonal,
        amplification,
        pass: cauchy >= -scale && diagonal >= -scale && amplification >= -scale,
    })
}

/// Designer weights of `V(ξ, ζ) = u ∬ξ + v ∫ξ(t,t) + w ∫ζ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignObjective {
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

impl DesignObjective {
    pub fn new(u: f64, v: f64, w: f64) -> Self {
        Self { u, v, w }
    }

    /// Weights with the given `(α, β)` at payoff `r`: `v = 0`, `w = α`,
    /// `u = rα − β`.
    pub fn from_alpha_beta(alpha: f64, beta: f64, r: f64) -> Self {
        Self { u: r * alpha - beta, v: 0.0, w: alpha }
    }

    /// `α = v + w`.
    pub fn alpha(&self) -> f64 {
        self.v + self.w
    }

    /// `β = r·w − u`.
    pub fn beta(&self, r: f64) -> f64 {
        r * self.w - self.u
    }
}

pub fn objective_value(m: &EquilibriumMoment, obj: &DesignObjective) -> f64 {
    obj.u * m.double_integral() + obj.v * m.diagonal_integral() + obj.w * m.zeta_integral()
}

/// Information structure whose signals are the equilibrium actions
/// themselves: `x(t)` has mean `φ(t)`, `Cov[x(s), x(t)] = ξ(s,t)` and
/// `Cov[θ, x(t)] = ζ(t)`.
pub fn construct_canonical_signals(m: &EquilibriumMoment, game: &BasicGame) -> Result<GaussianInfo> {
    ensure_same_grid(m.grid(), game.grid(), "moment and game")?;
    let (_, var) = game.common_state_params().ok_or_else(|| {
        Error::InfeasibleMoment("canonical signals need a common state".into())
    })?;
    if (var - m.state_var).abs() > 1e-12 * (1.0 + var) {
        return Err(Error::InfeasibleMoment(format!(
            "moment state variance {} differs from the game's {var}",
            m.state_var
        )));
    }
    let ob = check_obedience(m, game.payoff())?;
    if ob > m.default_obedience_tol() {
        return Err(Error::InfeasibleMoment(format!("obedience residual {ob:e}")));
    }
    if !check_positivity(m, None)? {
        return Err(Error::InfeasibleMoment("positivity fails".into()));
    }
    if !game.payoff().check_r2()? {
        return Err(Error::InfeasibleMoment("payoff structure violates (R2)".into()));
    }
    let phi = solve_mean(game)?;
    let n = game.len();
    let mut joint = DMatrix::zeros(2 * n, 2 * n);
    joint.view_mut((0, 0), (n, n)).copy_from(game.state_cov().values());
    joint.view_mut((n, n), (n, n)).copy_from(m.xi.values());
    for s in 0..n {
        for t in 0..n {
            joint[(s, n + t)] = m.zeta.get(t);
            joint[(n + t, s)] = m.zeta.get(t);
        }
    }
    let mean = DVector::from_iterator(n, phi.values().iter().copied());
    GaussianInfo::new(game.grid().clone(), vec![1; n], mean, joint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::solve_linear_equilibrium;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ugrid(n: usize) -> Arc<MeasureGrid> {
        MeasureGrid::uniform(n).unwrap().into_shared()
    }

    /// Indicator-block moment on the first `k` nodes, written out directly.
    fn block_moment(n: usize, k: usize, r: f64) -> EquilibriumMoment {
        let g = ugrid(n);
        let m = k as f64 / n as f64;
        let a = 1.0 / (1.0 - r * m);
        let xi = Kernel::from_fn(g.clone(), |i, j| if i < k && j < k { a * a } else { 0.0 }).unwrap();
        let zeta = GridFunction::new(g, (0..n).map(|i| if i < k { a } else { 0.0 }).collect()).unwrap();
        EquilibriumMoment::new(xi, zeta, 1.0).unwrap()
    }

    #[test]
    fn obedience_examples() {
        let m = block_moment(10, 5, 0.5);
        assert!((m.xi().get(0, 0) - 16.0 / 9.0).abs() < 1e-15);
        let r = Kernel::constant(ugrid(10), 0.5).unwrap();
        assert!(check_obedience(&m, &r).unwrap() <= 1e-12);
        let zero = EquilibriumMoment::zero(ugrid(10), 1.0).unwrap();
        assert_eq!(check_obedience(&zero, &r).unwrap(), 0.0);

        // Two-level moment under the off-diagonal structure.
        let g = ugrid(50);
        let xi = Kernel::from_fn(g.clone(), |i, j| if i == j { 8.0 / 9.0 } else { 4.0 / 9.0 }).unwrap();
        let sym = EquilibriumMoment::new(xi, GridFunction::constant(g.clone(), 2.0 / 3.0).unwrap(), 1.0).unwrap();
        let off = Kernel::offdiagonal_constant(g, 0.5).unwrap();
        assert!(check_obedience(&sym, &off).unwrap() <= 1e-12);
    }

    #[test]
    fn positivity_examples() {
        assert!(check_positivity(&block_moment(10, 5, 0.5), None).unwrap());
        let g = ugrid(1);
        let bad = EquilibriumMoment::new(
            Kernel::constant(g.clone(), 0.0).unwrap(),
            GridFunction::constant(g, 1.0).unwrap(),
            1.0,
        )
        .unwrap();
        assert!(!check_positivity(&bad, None).unwrap());
        assert!(!check_positivity_schur(&bad, None).unwrap());
    }

    #[test]
    fn bounds_examples() {
        let full = block_moment(10, 10, 0.5);
        let b = bounds_check(&full, 0.5).unwrap();
        assert!(b.amplification.abs() < 1e-12 && b.pass);
        assert!((full.double_integral() - 4.0).abs() < 1e-12);

        let half = block_moment(10, 5, 0.5);
        let b = bounds_check(&half, 0.5).unwrap();
        assert!(b.cauchy.abs() < 1e-12 && b.pass);
        assert!((half.zeta_integral().powi(2) - 4.0 / 9.0).abs() < 1e-12);

        let zero = EquilibriumMoment::zero(ugrid(10), 1.0).unwrap();
        let b = bounds_check(&zero, 0.5).unwrap();
        assert_eq!((b.cauchy, b.diagonal, b.amplification), (0.0, 0.0, 4.0));

        let g = ugrid(1);
        let bad = EquilibriumMoment::new(
            Kernel::constant(g.clone(), 0.0).unwrap(),
            GridFunction::constant(g, 1.0).unwrap(),
            1.0,
        )
        .unwrap();
        assert!(matches!(bounds_check(&bad, 0.5), Err(Error::InfeasibleMoment(_))));
    }

    #[test]
    fn objective_examples() {
        for (k, r) in [(3usize, 0.5), (10, -1.0), (7, 0.9)] {
            let m = block_moment(10, k, r);
            let mass = k as f64 / 10.0;
            let v = objective_value(&m, &DesignObjective::new(0.0, 0.0, 1.0));
            assert!((v - mass / (1.0 - r * mass)).abs() < 1e-12);
        }
        let zero = EquilibriumMoment::zero(ugrid(4), 1.0).unwrap();
        assert_eq!(objective_value(&zero, &DesignObjective::new(1.0, 2.0, 3.0)), 0.0);

        let obj = DesignObjective::from_alpha_beta(0.7, -0.2, 0.3);
        assert!((obj.alpha() - 0.7).abs() < 1e-15 && (obj.beta(0.3) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn canonical_signals_round_trip_for_targeted_moment() {
        let n = 12;
        let r = 0.5;
        let m = block_moment(n, 4, r);
        let game = BasicGame::common_state(Kernel::constant(ugrid(n), r).unwrap(), 0.0, 1.0).unwrap();
        let info = construct_canonical_signals(&m, &game).unwrap();
        let eq = solve_linear_equilibrium(&game, &info).unwrap();
        for t in 0..n {
            let expect = if t < 4 { 1.0 } else { 0.0 };
            assert!((eq.loadings[t][0] - expect).abs() < 1e-8);
        }
        let back = EquilibriumMoment::from_equilibrium(&eq).unwrap();
        assert!(linalg::max_abs_diff(back.xi().values(), m.xi().values()) < 1e-8);
        assert!((back.zeta().values() - m.zeta().values()).amax() < 1e-8);

        let zero = EquilibriumMoment::zero(ugrid(n), 1.0).unwrap();
        let info = construct_canonical_signals(&zero, &game).unwrap();
        let eq = solve_linear_equilibrium(&game, &info).unwrap();
        assert_eq!(eq.induced_action_cov.values().amax(), 0.0);

        let bad = block_moment(n, 4, 0.2);
        assert!(matches!(construct_canonical_signals(&bad, &game), Err(Error::InfeasibleMoment(_))));
    }

    fn random_moment(seed: u64, n: usize) -> EquilibriumMoment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = ugrid(n);
        let k = rng.random_range(1..=n + 1);
        let b = DMatrix::from_fn(n + 1, k, |_, _| rng.random_range(-1.0..1.0));
        let mut full: DMatrix<f64> = &b * b.transpose();
        // Half the samples get an indefinite perturbation.
        if rng.random_bool(0.5) {
            let i = rng.random_range(0..=n);
            let j = rng.random_range(0..=n);
            let d = rng.random_range(0.5..2.0);
            full[(i, j)] += d;
            if i != j {
                full[(j, i)] += d;
            } else {
                full[(i, i)] -= 3.0 * d;
            }
        }
        let v = full[(n, n)].max(0.05);
        full[(n, n)] = v;
        let xi = Kernel::symmetrized(g.clone(), full.view((0, 0), (n, n)).into_owned()).unwrap();
        let diag_ok = xi.diagonal().iter().all(|d| *d >= 0.0);
        let xi = if diag_ok {
            xi
        } else {
            Kernel::symmetrized(g.clone(), &b.rows(0, n) * b.rows(0, n).transpose()).unwrap()
        };
        let zeta = GridFunction::new(g, (0..n).map(|i| full[(i, n)]).collect()).unwrap();
        EquilibriumMoment::new(xi, zeta, v).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn bordered_and_schur_positivity_agree(seed in any::<u64>(), n in 1usize..8) {
            let m = random_moment(seed, n);
            let min = positivity_min_eigenvalue(&m).unwrap();
            // Skip knife-edge cases where the two routes legitimately round differently.
            prop_assume!(min.abs() > 1e-6);
            prop_assert_eq!(check_positivity(&m, None).unwrap(), check_positivity_schur(&m, None).unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn solver_moments_are_feasible(seed in any::<u64>(), n in 2usize..15, r in -3.0f64..0.95) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = ugrid(n);
            let game = BasicGame::common_state(Kernel::constant(g, r).unwrap(), 0.0, 1.0).unwrap();
            let l = DMatrix::from_fn(n, n, |i, j| if i == j { rng.random_range(0.0..1.5) } else { 0.0 });
            let e = DMatrix::from_fn(n, n + 1, |_, _| rng.random_range(-0.7..0.7));
            let info = GaussianInfo::from_linear_signals(&game, vec![1; n], &l, &(&e * e.transpose())).unwrap();
            let eq = solve_linear_equilibrium(&game, &info).unwrap();
            let m = EquilibriumMoment::from_equilibrium(&eq).unwrap();
            let k = Kernel::constant(ugrid(n), r).unwrap();
            prop_assert!(is_obedient(&m, &k).unwrap());
            prop_assert!(check_positivity(&m, None).unwrap());
            prop_assert!(bounds_check(&m, r).unwrap().pass);

            // Round trip through the canonical signals.
            let info2 = construct_canonical_signals(&m, &game).unwrap();
            let eq2 = solve_linear_equilibrium(&game, &info2).unwrap();
            let back = EquilibriumMoment::from_equilibrium(&eq2).unwrap();
            prop_assert!(linalg::max_abs_diff(back.xi().values(), m.xi().values()) <= 1e-8);
            prop_assert!((back.zeta().values() - m.zeta().values()).amax() <= 1e-8);
        }
    }
}
