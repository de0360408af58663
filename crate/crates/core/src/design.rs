//! Optimal information disclosure with a common normalized state
//! (`E θ = 0`, `Var θ = 1`) and a constant payoff structure `r < 1`.
//!
//! Targeted disclosure reveals `θ` exactly to a set of agents of measure
//! `m` and nothing to the rest. Its value
//! `V_tg(m) = (αm − βm²)/(1 − rm)²` depends only on `α = v + w` and
//! `β = rw − u`, and its maximizer falls into one of three regimes:
//!
//! * T1 (`α ≤ 0`, `α ≤ β`): no disclosure;
//! * T2 (`α > 0`, `β > (1+r)α/2`): partial disclosure `m* = α/(2β − rα)`;
//! * T3 (`α ≥ β`, `β ≤ (1+r)α/2`): full disclosure.
//!
//! On the knife edge `α = β ≤ 0` both `m = 0` and `m = 1` are optimal.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{solve_linear_equilibrium, BasicGame, GaussianInfo};
use crate::grid::{GridFunction, MeasureGrid};
use crate::kernel::Kernel;
use crate::moments::{objective_value, DesignObjective, EquilibriumMoment};

/// Tolerance of the regime inequalities.
pub const REGIME_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DisclosurePolicy {
    Targeted { nodes: Vec<usize> },
    Symmetric { m: f64 },
    Public { z: f64 },
}

impl DisclosurePolicy {
    pub fn validate(&self, grid: &MeasureGrid) -> Result<()> {
        match self {
            DisclosurePolicy::Targeted { nodes } => {
                if let Some(i) = nodes.iter().find(|&&i| i >= grid.len()) {
                    return Err(Error::InvalidInput(format!("node {i} outside the grid")));
                }
                Ok(())
            }
            DisclosurePolicy::Symmetric { m } => unit_interval("m", *m),
            DisclosurePolicy::Public { z } => unit_interval("z", *z),
        }
    }
}

fn unit_interval(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must lie in [0, 1], got {x}")))
    }
}

fn check_r(r: f64) -> Result<()> {
    if r < 1.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("payoff must satisfy r < 1, got {r}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    T1,
    T2,
    T3,
    #[serde(rename = "boundary")]
    Boundary,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::T1 => "T1",
            Regime::T2 => "T2",
            Regime::T3 => "T3",
            Regime::Boundary => "boundary",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeReport {
    pub regime: Regime,
    /// Optimal measure of informed agents. On the knife edge, where `0` and
    /// `1` both attain the optimum, this reports `0`.
    pub m_star: f64,
    pub v_star: f64,
}

/// `(αm − βm²)/(1 − rm)²`.
pub fn targeted_value_ab(m: f64, r: f64, alpha: f64, beta: f64) -> f64 {
    let d = 1.0 - r * m;
    (alpha * m - beta * m * m) / (d * d)
}

pub fn targeted_value(m: f64, r: f64, obj: &DesignObjective) -> Result<f64> {
    unit_interval("m", m)?;
    check_r(r)?;
    Ok(targeted_value_ab(m, r, obj.alpha(), obj.beta(r)))
}

pub fn classify_regime(r: f64, alpha: f64, beta: f64) -> Regime {
    let tol = REGIME_TOL * (1.0 + alpha.abs() + beta.abs());
    if (alpha - beta).abs() <= tol && alpha <= tol {
        Regime::Boundary
    } else if alpha <= 0.0 && alpha <= beta {
        Regime::T1
    } else if alpha > 0.0 && beta > 0.5 * (1.0 + r) * alpha {
        Regime::T2
    } else {
        Regime::T3
    }
}

pub fn optimal_targeted_ab(r: f64, alpha: f64, beta: f64) -> Result<RegimeReport> {
    check_r(r)?;
    let regime = classify_regime(r, alpha, beta);
    let (m_star, v_star) = match regime {
        Regime::T1 | Regime::Boundary => (0.0, 0.0),
        Regime::T2 => (alpha / (2.0 * beta - r * alpha), alpha * alpha / (4.0 * beta - 4.0 * r * alpha)),
        Regime::T3 => (1.0, (alpha - beta) / ((1.0 - r) * (1.0 - r))),
    };
    Ok(RegimeReport { regime, m_star, v_star })
}

pub fn optimal_targeted(r: f64, obj: &DesignObjective) -> Result<RegimeReport> {
    optimal_targeted_ab(r, obj.alpha(), obj.beta(r))
}

/// Brute-force maximization of `V_tg` over `points` equally spaced values
/// of `m ∈ [0, 1]`. Returns `(argmax index, m, value)`; ties keep the
/// smallest index.
pub fn grid_scan(r: f64, alpha: f64, beta: f64, points: usize) -> (usize, f64, f64) {
    assert!(points >= 2);
    const LANES: usize = 8;
    let h = 1.0 / (points - 1) as f64;
    let mut best_v = f64::NEG_INFINITY;
    let mut best_i = 0usize;
    let mut i = 0usize;
    let mut buf = [0.0f64; LANES];
    while i + LANES <= points {
        for (k, b) in buf.iter_mut().enumerate() {
            *b = targeted_value_ab((i + k) as f64 * h, r, alpha, beta);
        }
        let mut lane_best = buf[0];
        for &b in &buf[1..] {
            lane_best = lane_best.max(b);
        }
        if lane_best > best_v {
            let k = buf.iter().position(|&b| b == lane_best).unwrap();
            best_v = lane_best;
            best_i = i + k;
        }
        i += LANES;
    }
    while i < points {
        let v = targeted_value_ab(i as f64 * h, r, alpha, beta);
        if v > best_v {
            best_v = v;
            best_i = i;
        }
        i += 1;
    }
    (best_i, best_i as f64 * h, best_v)
}

/// Equilibrium moment of targeted disclosure to `nodes`:
/// `ξ = 1{s,t∈M}/(1−rm)²`, `ζ = 1{t∈M}/(1−rm)`.
pub fn targeted_equilibrium_moment(
    nodes: &[usize],
    r: f64,
    grid: Arc<MeasureGrid>,
) -> Result<EquilibriumMoment> {
    check_r(r)?;
    let n = grid.len();
    let mut member = vec![false; n];
    for &i in nodes {
        if i >= n {
            return Err(Error::InvalidInput(format!("node {i} outside grid of {n} nodes")));
        }
        member[i] = true;
    }
    let m: f64 = (0..n).filter(|&i| member[i]).map(|i| grid.weights()[i]).sum();
    let a = 1.0 / (1.0 - r * m);
    let xi = Kernel::with_flag(
        grid.clone(),
        DMatrix::from_fn(n, n, |i, j| if member[i] && member[j] { a * a } else { 0.0 }),
        true,
    )?;
    let zeta = GridFunction::new(grid, member.iter().map(|&b| if b { a } else { 0.0 }).collect())?;
    EquilibriumMoment::new(xi, zeta, 1.0)
}

/// Symmetric disclosure: every agent sees
/// `x(t) = a·θ + b·ε(t)` with `a = m/(1−rm)` and `b = √(m(1−m))/(1−rm)`.
#[derive(Debug, Clone)]
pub struct SymmetricDisclosure {
    /// `ξ(t,t) = m/(1−rm)²`, `ξ(s,t) = m²/(1−rm)²` for `s ≠ t`,
    /// `ζ = m/(1−rm)`.
    pub moment: EquilibriumMoment,
    pub xi_diag: f64,
    pub xi_off: f64,
    pub zeta: f64,
    pub signal_coefficients: (f64, f64),
}

pub fn symmetric_moment(m: f64, r: f64, grid: Arc<MeasureGrid>) -> Result<SymmetricDisclosure> {
    unit_interval("m", m)?;
    check_r(r)?;
    let d = 1.0 - r * m;
    let xi_diag = m / (d * d);
    let xi_off = m * m / (d * d);
    let zeta = m / d;
    let n = grid.len();
    let xi = Kernel::with_flag(
        grid.clone(),
        DMatrix::from_fn(n, n, |i, j| if i == j { xi_diag } else { xi_off }),
        true,
    )?;
    let moment = EquilibriumMoment::new(xi, GridFunction::constant(grid, zeta)?, 1.0)?;
    Ok(SymmetricDisclosure {
        moment,
        xi_diag,
        xi_off,
        zeta,
        signal_coefficients: (m / d, (m * (1.0 - m)).sqrt() / d),
    })
}

/// Objective of the symmetric moment on uniform grids of the given sizes,
/// extrapolated to `n → ∞` in the step `1/n`. Returns the extrapolated
/// value and the raw values.
pub fn symmetric_value_extrapolated(
    m: f64,
    r: f64,
    obj: &DesignObjective,
    sizes: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if sizes.is_empty() {
        return Err(Error::InvalidInput("need at least one grid size".into()));
    }
    let mut values = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let g = MeasureGrid::uniform(n)?.into_shared();
        values.push(objective_value(&symmetric_moment(m, r, g)?.moment, obj));
    }
    let h: Vec<f64> = sizes.iter().map(|&n| 1.0 / n as f64).collect();
    Ok((extrapolate_to_zero(&h, &values), values))
}

/// Neville extrapolation of the interpolating polynomial in `h` to `h = 0`.
pub fn extrapolate_to_zero(h: &[f64], values: &[f64]) -> f64 {
    let mut p = values.to_vec();
    let k = p.len();
    for level in 1..k {
        for i in 0..k - level {
            let (hi, hj) = (h[i], h[i + level]);
            p[i] = (hi * p[i + 1] - hj * p[i]) / (hi - hj);
        }
    }
    p[0]
}

/// Optimal public disclosure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PublicReport {
    /// Optimal explained variance `Var(E[θ|x])`; `None` on the boundary
    /// `α = β`, where every `z` is optimal.
    pub z_star: Option<f64>,
    pub v_pub: f64,
    pub boundary: bool,
}

/// Public disclosure with explained variance `z` yields
/// `f = E[θ|x]/(1−r)` and value `(α − β)z/(1−r)²`.
pub fn public_optimum(r: f64, obj: &DesignObjective) -> Result<PublicReport> {
    check_r(r)?;
    let alpha = obj.alpha();
    let beta = obj.beta(r);
    let slope = (alpha - beta) / ((1.0 - r) * (1.0 - r));
    let tol = REGIME_TOL * (1.0 + alpha.abs() + beta.abs());
    if (alpha - beta).abs() <= tol {
        return Ok(PublicReport { z_star: None, v_pub: 0.0, boundary: true });
    }
    let z = if alpha > beta { 1.0 } else { 0.0 };
    Ok(PublicReport { z_star: Some(z), v_pub: slope.max(0.0), boundary: false })
}

/// Moment of public disclosure with explained variance `z`:
/// `ξ ≡ z/(1−r)²`, `ζ ≡ z/(1−r)`.
pub fn public_moment(z: f64, r: f64, grid: Arc<MeasureGrid>) -> Result<EquilibriumMoment> {
    unit_interval("z", z)?;
    check_r(r)?;
    let d = 1.0 - r;
    EquilibriumMoment::new(
        Kernel::constant(grid.clone(), z / (d * d))?,
        GridFunction::constant(grid, z / d)?,
        1.0,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    RandomStructure,
    Targeted,
    SymmetricSignals,
    Public,
    Optimum,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditOptions {
    pub n: usize,
    /// Also evaluate the optimal targeted moment itself.
    pub include_optimum: bool,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self { n: 100, include_optimum: false }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub v_star: f64,
    /// `max(V − V*_tg)` over the samples; `−∞` for an empty audit.
    pub max_excess: f64,
    pub worst_kind: Option<SampleKind>,
    pub samples: usize,
}

/// Draws feasible equilibrium moments constructively and reports how far
/// their objective exceeds the optimal targeted value.
pub fn global_optimality_audit(
    r: f64,
    obj: &DesignObjective,
    samples: usize,
    seed: u64,
) -> Result<AuditReport> {
    global_optimality_audit_with(r, obj, samples, seed, &AuditOptions::default())
}

pub fn global_optimality_audit_with(
    r: f64,
    obj: &DesignObjective,
    samples: usize,
    seed: u64,
    opts: &AuditOptions,
) -> Result<AuditReport> {
    check_r(r)?;
    let v_star = optimal_targeted(r, obj)?.v_star;
    let grid = MeasureGrid::uniform(opts.n)?.into_shared();
    let game = BasicGame::common_state(Kernel::constant(grid.clone(), r)?, 0.0, 1.0)?;
    let values: Vec<(f64, SampleKind)> = crate::with_thread_cap(|| {
        (0..samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                audit_sample(&game, r, obj, i, &mut rng)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut max_excess = f64::NEG_INFINITY;
    let mut worst_kind = None;
    for (v, kind) in values {
        if v - v_star > max_excess {
            max_excess = v - v_star;
            worst_kind = Some(kind);
        }
    }
    let mut total = samples;
    if opts.include_optimum {
        let rep = optimal_targeted(r, obj)?;
        // A two-agent population with masses (m*, 1 − m*) realizes the
        // optimal informed measure exactly.
        let (g2, nodes) = if rep.m_star > 0.0 && rep.m_star < 1.0 {
            (MeasureGrid::new(None, vec![rep.m_star, 1.0 - rep.m_star])?, vec![0])
        } else if rep.m_star >= 1.0 {
            (MeasureGrid::uniform(1)?, vec![0])
        } else {
            (MeasureGrid::uniform(1)?, vec![])
        };
        let v = objective_value(&targeted_equilibrium_moment(&nodes, r, g2.into_shared())?, obj);
        if v - v_star > max_excess {
            max_excess = v - v_star;
            worst_kind = Some(SampleKind::Optimum);
        }
        total += 1;
    }
    Ok(AuditReport { v_star, max_excess, worst_kind, samples: total })
}

fn audit_sample(
    game: &BasicGame,
    r: f64,
    obj: &DesignObjective,
    i: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, SampleKind)> {
    let n = game.len();
    let grid = game.grid().clone();
    match i % 4 {
        0 => {
            // Mixture of exact, private-noise and public-noise signals with
            // random precision per agent.
            let informed = rng.random_range(0.0..=1.0);
            let mut l = DMatrix::zeros(n, n);
            let mut noise = DMatrix::zeros(n, n);
            let public = rng.random_range(0.0..2.0f64).powi(2) * rng.random_range(0.0..1.0);
            for t in 0..n {
                if rng.random_bool(informed) {
                    l[(t, t)] = rng.random_range(0.2..2.0);
                    noise[(t, t)] = rng.random_range(0.0..2.0f64).powi(3);
                }
            }
            for s in 0..n {
                for t in 0..n {
                    if l[(s, s)] != 0.0 && l[(t, t)] != 0.0 {
                        noise[(s, t)] += public;
                    }
                }
            }
            let info = GaussianInfo::from_linear_signals(game, vec![1; n], &l, &noise)?;
            let eq = solve_linear_equilibrium(game, &info)?;
            let m = EquilibriumMoment::from_equilibrium(&eq)?;
            Ok((objective_value(&m, obj), SampleKind::RandomStructure))
        }
        1 => {
            let p = rng.random_range(0.0..=1.0);
            let nodes: Vec<usize> = (0..n).filter(|_| rng.random_bool(p)).collect();
            let m = targeted_equilibrium_moment(&nodes, r, grid)?;
            Ok((objective_value(&m, obj), SampleKind::Targeted))
        }
        2 => {
            let m: f64 = rng.random_range(0.0..=1.0);
            let d = 1.0 - r * m;
            let info = GaussianInfo::scaled_private(game, m / d, (m * (1.0 - m)).sqrt() / d)?;
            let eq = solve_linear_equilibrium(game, &info)?;
            let mo = EquilibriumMoment::from_equilibrium(&eq)?;
            Ok((objective_value(&mo, obj), SampleKind::SymmetricSignals))
        }
        _ => {
            let z = rng.random_range(0.0..=1.0);
            let m = public_moment(z, r, grid)?;
            Ok((objective_value(&m, obj), SampleKind::Public))
        }
    }
}

/// Cournot market with demand slope `γ`; the designer weighs producer
/// surplus by `λ` and consumer surplus by `1 − λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CournotReport {
    pub lambda: f64,
    pub gamma: f64,
    pub r: f64,
    pub objective: DesignObjective,
    pub alpha: f64,
    pub beta: f64,
    /// `γ ≤ 4/λ − 3` (always when `λ = 0`).
    pub full_disclosure: bool,
    pub regime: Regime,
    pub m_star: f64,
    /// Agreement of the market condition with the general regime
    /// classification.
    pub consistent: bool,
}

pub fn cournot_policy(lambda: f64, gamma: f64) -> Result<CournotReport> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    let r = -gamma;
    let objective = DesignObjective::new(1.0 - lambda - lambda * gamma, -lambda / 2.0, lambda);
    let full_disclosure = lambda == 0.0 || gamma <= 4.0 / lambda - 3.0;
    let m_star = if full_disclosure {
        1.0
    } else {
        lambda / (lambda * gamma - 4.0 * (1.0 - lambda))
    };
    let rep = optimal_targeted(r, &objective)?;
    let consistent = (rep.regime == Regime::T3) == full_disclosure
        && (rep.m_star - m_star).abs() <= 1e-12 * (1.0 + m_star.abs());
    Ok(CournotReport {
        lambda,
        gamma,
        r,
        alpha: objective.alpha(),
        beta: objective.beta(r),
        objective,
        full_disclosure,
        regime: rep.regime,
        m_star,
        consistent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagramCell {
    pub alpha: f64,
    pub beta: f64,
    pub regime: Regime,
    pub m_star: f64,
    pub v_star: f64,
}

/// Regime raster over `[α₀, α₁] × [β₀, β₁]` with `resolution` points per
/// axis, endpoints included.
pub fn regime_diagram(
    r: f64,
    alpha_range: (f64, f64),
    beta_range: (f64, f64),
    resolution: usize,
) -> Result<Vec<DiagramCell>> {
    check_r(r)?;
    if resolution < 2 {
        return Err(Error::InvalidInput("resolution must be at least 2".into()));
    }
    let lin = |(a, b): (f64, f64), i: usize| a + (b - a) * i as f64 / (resolution - 1) as f64;
    let mut out = Vec::with_capacity(resolution * resolution);
    for j in 0..resolution {
        let beta = lin(beta_range, j);
        for i in 0..resolution {
            let alpha = lin(alpha_range, i);
            let rep = optimal_targeted_ab(r, alpha, beta)?;
            out.push(DiagramCell { alpha, beta, regime: rep.regime, m_star: rep.m_star, v_star: rep.v_star });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{bounds_check, check_obedience, check_positivity};
    use proptest::prelude::*;
    use rand::Rng;

    fn ab(alpha: f64, beta: f64, r: f64) -> DesignObjective {
        DesignObjective::from_alpha_beta(alpha, beta, r)
    }

    #[test]
    fn targeted_value_examples() {
        for r in [-3.0, 0.0, 0.9] {
            assert_eq!(targeted_value(0.0, r, &ab(1.3, -0.4, r)).unwrap(), 0.0);
        }
        assert!((targeted_value(0.5, 0.0, &ab(1.0, 0.0, 0.0)).unwrap() - 0.5).abs() < 1e-15);
        let (_, _, scan) = grid_scan(0.0, 1.0, 0.0, 1001);
        assert!((scan - 1.0).abs() < 1e-12);
        assert!((targeted_value(1.0, 0.5, &ab(1.0, 0.5, 0.5)).unwrap() - 2.0).abs() < 1e-12);
        assert!(targeted_value(1.2, 0.5, &ab(1.0, 0.5, 0.5)).is_err());
        assert!(targeted_value(0.5, 1.0, &ab(1.0, 0.5, 0.5)).is_err());
    }

    #[test]
    fn regime_examples() {
        let rep = optimal_targeted(0.0, &ab(1.0, 1.0, 0.0)).unwrap();
        assert_eq!(rep.regime, Regime::T2);
        assert!((rep.m_star - 0.5).abs() < 1e-15 && (rep.v_star - 0.25).abs() < 1e-15);
        let (_, m, v) = grid_scan(0.0, 1.0, 1.0, 1_000_001);
        assert!((m - 0.5).abs() <= 1e-6 && (v - 0.25).abs() < 1e-12);

        for r in [-5.0, 0.0, 0.7] {
            let rep = optimal_targeted(r, &ab(-1.0, 0.0, r)).unwrap();
            assert_eq!((rep.regime, rep.m_star, rep.v_star), (Regime::T1, 0.0, 0.0));
        }
        let rep = optimal_targeted(0.5, &ab(1.0, 0.5, 0.5)).unwrap();
        assert_eq!(rep.regime, Regime::T3);
        assert!((rep.v_star - 2.0).abs() < 1e-12 && rep.m_star == 1.0);
        assert_eq!(classify_regime(0.3, -1.0, -1.0), Regime::Boundary);
    }

    #[test]
    fn targeted_moment_examples() {
        let g = MeasureGrid::uniform(10).unwrap().into_shared();
        let all: Vec<usize> = (0..10).collect();
        let m = targeted_equilibrium_moment(&all, 0.5, g.clone()).unwrap();
        assert!(m.xi().values().iter().all(|&x| (x - 4.0).abs() < 1e-14));
        assert!(m.zeta().values().iter().all(|&x| (x - 2.0).abs() < 1e-14));

        let none = targeted_equilibrium_moment(&[], 0.5, g.clone()).unwrap();
        assert_eq!(none.xi().values().amax(), 0.0);

        let half = targeted_equilibrium_moment(&[0, 1, 2, 3, 4], 0.5, g.clone()).unwrap();
        assert!((half.xi().get(1, 3) - 16.0 / 9.0).abs() < 1e-14);
        assert_eq!(half.xi().get(1, 7), 0.0);
        assert!((half.zeta().get(4) - 4.0 / 3.0).abs() < 1e-14);
        let k = Kernel::constant(g, 0.5).unwrap();
        assert!(check_obedience(&half, &k).unwrap() < 1e-12);
        assert!(check_positivity(&half, None).unwrap());
    }

    #[test]
    fn symmetric_moment_examples() {
        let g = MeasureGrid::uniform(20).unwrap().into_shared();
        let s = symmetric_moment(0.5, 0.5, g.clone()).unwrap();
        assert!((s.xi_diag - 8.0 / 9.0).abs() < 1e-15);
        assert!((s.xi_off - 4.0 / 9.0).abs() < 1e-15);
        assert!((s.zeta - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.signal_coefficients.0 - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.signal_coefficients.1 - 2.0 / 3.0).abs() < 1e-15);

        let full = symmetric_moment(1.0, 0.5, g.clone()).unwrap();
        assert_eq!(full.xi_diag, full.xi_off);
        assert_eq!(full.signal_coefficients.1, 0.0);
        let zero = symmetric_moment(0.0, 0.5, g).unwrap();
        assert_eq!(zero.moment.xi().values().amax(), 0.0);
    }

    #[test]
    fn symmetric_value_extrapolates_to_targeted() {
        for (m, r) in [(0.5, 0.5), (0.3, -2.0), (0.8, 0.9)] {
            let obj = DesignObjective::new(0.7, -0.3, 1.1);
            let (v, raw) = symmetric_value_extrapolated(m, r, &obj, &[100, 200, 400]).unwrap();
            let tg = targeted_value(m, r, &obj).unwrap();
            assert!((v - tg).abs() <= 1e-10 * (1.0 + tg.abs()), "{v} vs {tg}");
            assert!((raw[2] - tg).abs() > 0.0);
        }
        let u_only = DesignObjective::new(1.0, 0.0, 0.0);
        let (v, _) = symmetric_value_extrapolated(0.5, 0.5, &u_only, &[100, 200]).unwrap();
        assert!((v - 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn public_examples() {
        let p = public_optimum(0.5, &ab(1.0, 0.5, 0.5)).unwrap();
        assert_eq!(p.z_star, Some(1.0));
        assert!((p.v_pub - 2.0).abs() < 1e-12);
        let p = public_optimum(0.2, &ab(0.4, 0.4, 0.2)).unwrap();
        assert!(p.boundary && p.z_star.is_none());
        let p = public_optimum(0.0, &ab(1.0, 1.2, 0.0)).unwrap();
        let t = optimal_targeted(0.0, &ab(1.0, 1.2, 0.0)).unwrap();
        assert_eq!(p.v_pub, 0.0);
        assert_eq!(t.regime, Regime::T2);
        assert!((t.v_star - 1.0 / 4.8).abs() < 1e-12 && p.v_pub < t.v_star);

        let g = MeasureGrid::uniform(10).unwrap().into_shared();
        for z in [0.0, 0.3, 1.0] {
            let obj = DesignObjective::new(0.2, 0.5, -0.4);
            let m = public_moment(z, 0.4, g.clone()).unwrap();
            let expect = (obj.alpha() - obj.beta(0.4)) * z / 0.36;
            assert!((objective_value(&m, &obj) - expect).abs() < 1e-12);
            assert!(bounds_check(&m, 0.4).unwrap().pass);
        }
    }

    #[test]
    fn audit_edge_cases() {
        let obj = ab(1.0, 1.0, 0.5);
        let rep = global_optimality_audit(0.5, &obj, 0, 1).unwrap();
        assert_eq!(rep.max_excess, f64::NEG_INFINITY);
        let opts = AuditOptions { n: 20, include_optimum: true };
        let rep = global_optimality_audit_with(0.5, &obj, 0, 1, &opts).unwrap();
        assert!(rep.max_excess >= -1e-9 && rep.max_excess <= 1e-12);
        assert_eq!(rep.worst_kind, Some(SampleKind::Optimum));

        let rep = global_optimality_audit_with(0.5, &obj, 40, 9, &AuditOptions { n: 20, include_optimum: false }).unwrap();
        assert!(rep.max_excess <= 1e-6 * (1.0 + rep.v_star.abs()));
        let again = global_optimality_audit_with(0.5, &obj, 40, 9, &AuditOptions { n: 20, include_optimum: false }).unwrap();
        assert_eq!(rep.max_excess, again.max_excess);
    }

    #[test]
    fn cournot_examples() {
        for gamma in [0.1, 1.0, 50.0] {
            let c = cournot_policy(0.0, gamma).unwrap();
            assert!(c.full_disclosure && c.consistent && c.m_star == 1.0);
        }
        for lambda in [0.1, 0.5, 1.0] {
            let c = cournot_policy(lambda, 0.9).unwrap();
            assert!(c.full_disclosure && c.consistent);
        }
        let c = cournot_policy(1.0, 2.0).unwrap();
        assert!(!c.full_disclosure && c.consistent);
        assert!((c.m_star - 0.5).abs() < 1e-15);
        assert!((c.alpha - 0.5).abs() < 1e-15 && c.beta.abs() < 1e-15);
        let c = cournot_policy(0.5, 2.0).unwrap();
        assert!(c.full_disclosure);
        assert!(cournot_policy(1.5, 1.0).is_err());
    }

    #[test]
    fn diagram_examples() {
        let cells = regime_diagram(0.5, (-1.0, 1.0), (-1.0, 1.0), 41).unwrap();
        assert_eq!(cells[0].regime, Regime::Boundary);
        for c in cells.iter().filter(|c| c.alpha > 0.0) {
            let above = c.beta > 0.75 * c.alpha;
            assert_eq!(c.regime == Regime::T2, above);
        }
        let cells = regime_diagram(-3.0, (0.05, 1.0), (-1.0, 1.0), 21).unwrap();
        for c in &cells {
            assert_eq!(c.regime == Regime::T2, c.beta > -c.alpha);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn regime_optimum_dominates(r in -5.0f64..0.99, alpha in -2.0f64..2.0, beta in -2.0f64..2.0, seed in any::<u64>()) {
            let rep = optimal_targeted_ab(r, alpha, beta).unwrap();
            let v_at = targeted_value_ab(rep.m_star, r, alpha, beta);
            prop_assert!((v_at - rep.v_star).abs() <= 1e-10 * (1.0 + rep.v_star.abs()));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..50 {
                let m = rng.random_range(0.0..=1.0);
                prop_assert!(targeted_value_ab(m, r, alpha, beta) <= rep.v_star + 1e-10);
            }
            match rep.regime {
                Regime::T1 => prop_assert_eq!(rep.m_star, 0.0),
                Regime::T3 => prop_assert_eq!(rep.m_star, 1.0),
                Regime::T2 => prop_assert!(rep.m_star > 0.0 && rep.m_star <= 1.0),
                Regime::Boundary => prop_assert!(alpha <= 1e-11),
            }
        }
    }
}
