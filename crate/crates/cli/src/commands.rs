//! Command implementations. Each one resolves the configuration, runs, and
//! writes `{ "config": …, "result": … }` (or a CSV plus a sidecar config).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use popgame::design::{
    cournot_policy, global_optimality_audit_with, optimal_targeted, public_optimum, regime_diagram,
    symmetric_value_extrapolated, targeted_value, AuditOptions,
};
use popgame::game::{
    solve_linear_equilibrium, solve_linear_equilibrium_with, verify_moment_restrictions, BasicGame,
    LinearEquilibrium, SolveOptions,
};
use popgame::io;
use popgame::moments::{
    bounds_check, check_obedience, check_positivity, construct_canonical_signals, objective_value,
    EquilibriumMoment,
};
use popgame::montecarlo::{
    best_response_audit, bm_discretized, bm_example_equilibrium, bm_joint_process,
    duplicate_equilibria, sample_gaussian, sample_process, verify_aggregate_mean,
    verify_aggregate_variance, verify_conditional_fubini, verify_covariance_exchange, BmParams,
    ExactCheck, StochasticCheck, DEFAULT_DRAWS, DEFAULT_TOL_SE,
};
use popgame::verification::{self, Budget, CheckOutcome, DEFAULT_SEED};
use popgame::{Kernel, MeasureGrid};

use crate::config::{
    parse_params, CommandKind, CovConfig, DesignConfig, DesignMode, GameConfig, GridConfig,
    InfoConfig, McCheck, McConfig, ObjectiveConfig, PayoffConfig, RunConfig, StateConfig, Values,
};
use crate::{Cli, Command, EquilibriumArgs, GameArgs, InfoKind, KernelKind, ObjectiveArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    CheckFailed,
}

impl Status {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Status::Pass
        } else {
            Status::CheckFailed
        }
    }
}

pub fn run(cli: Cli) -> Result<Status> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.tol.is_some() {
        cfg.tol = cli.tol;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    if let Some(t) = cfg.tol {
        if !(t > 0.0 && t.is_finite()) {
            bail!("--tol must be positive, got {t}");
        }
    }
    let kind = match &cli.command {
        Command::Spectral(_) => Some(CommandKind::Spectral),
        Command::Equilibrium(_) => Some(CommandKind::Equilibrium),
        Command::Moments(_) => Some(CommandKind::Moments),
        Command::Design(_) => Some(CommandKind::Design),
        Command::Mc(_) => Some(CommandKind::Mc),
        Command::ReproduceAll(_) => None,
    };
    if let (Some(k), Some(c)) = (kind, cfg.command) {
        if k != c {
            bail!("configuration is for `{c:?}` but the `{k:?}` command was given");
        }
    }
    cfg.command = kind;
    match cli.command {
        Command::Spectral(a) => {
            merge_game(&mut cfg, &a)?;
            spectral(&cfg)
        }
        Command::Equilibrium(a) => {
            merge_equilibrium(&mut cfg, &a)?;
            equilibrium(&cfg)
        }
        Command::Moments(a) => {
            if a.moment.is_some() {
                cfg.moment = a.moment.clone();
            }
            if cfg.moment.is_none() {
                merge_equilibrium(&mut cfg, &a.equilibrium)?;
            } else {
                merge_game_optional(&mut cfg, &a.equilibrium.game)?;
            }
            merge_objective(&mut cfg, &a.objective)?;
            moments(&cfg, a.construct, a.equilibrium.game.r)
        }
        Command::Design(a) => {
            let mut d = cfg.design.take();
            if let Some(mode) = a.mode {
                match &mut d {
                    Some(d) => d.mode = mode,
                    None => {
                        d = Some(DesignConfig {
                            mode,
                            r: None,
                            m: None,
                            lambda: None,
                            gamma: None,
                            samples: None,
                            n: None,
                            resolution: None,
                            alpha_range: None,
                            beta_range: None,
                        })
                    }
                }
            }
            let Some(mut d) = d else { bail!("design needs --mode or a `design` config section") };
            d.r = a.r.or(d.r);
            d.m = a.m.or(d.m);
            d.lambda = a.lambda.or(d.lambda);
            d.gamma = a.gamma.or(d.gamma);
            d.samples = a.samples.or(d.samples);
            d.n = a.n.or(d.n);
            d.resolution = a.resolution.or(d.resolution);
            cfg.design = Some(d);
            merge_objective(&mut cfg, &a.objective)?;
            design(&mut cfg)
        }
        Command::Mc(a) => {
            let mut m = cfg.mc.take();
            if let Some(check) = a.check {
                match &mut m {
                    Some(m) => m.check = check,
                    None => m = Some(McConfig { check, n: None, draws: None, params: Default::default() }),
                }
            }
            let Some(mut m) = m else { bail!("mc needs --check or an `mc` config section") };
            m.n = a.n.or(m.n);
            m.draws = a.draws.or(m.draws);
            if let Some(p) = &a.params {
                m.params.extend(parse_params(p)?);
            }
            cfg.mc = Some(m);
            mc(&mut cfg)
        }
        Command::ReproduceAll(a) => reproduce_all(&cfg, a.quick, a.inject_perturbation),
    }
}

fn merge_game_optional(cfg: &mut RunConfig, a: &GameArgs) -> Result<()> {
    if a.n.is_none() && a.kernel.is_none() && a.r.is_none() && a.state_mean.is_none() && a.state_var.is_none() {
        return Ok(());
    }
    if cfg.game.is_none() && a.n.is_none() {
        // A moment file carries its own grid; a bare --r is used directly.
        return Ok(());
    }
    merge_game(cfg, a)
}

fn merge_game(cfg: &mut RunConfig, a: &GameArgs) -> Result<()> {
    let payoff_from = |kind: KernelKind, r: f64| match kind {
        KernelKind::Constant => PayoffConfig::Constant { r },
        KernelKind::OffdiagonalConstant => PayoffConfig::OffdiagonalConstant { r },
        KernelKind::Unidirectional => PayoffConfig::Unidirectional { r },
    };
    let mut game = match cfg.game.take() {
        Some(g) => g,
        None => {
            let (Some(n), Some(r)) = (a.n, a.r) else {
                bail!("no game given: pass --n and --r or a `game` config section");
            };
            GameConfig {
                grid: GridConfig::Uniform { n },
                payoff: payoff_from(a.kernel.unwrap_or(KernelKind::Constant), r),
                state: None,
            }
        }
    };
    if let Some(n) = a.n {
        game.grid = GridConfig::Uniform { n };
    }
    if a.kernel.is_some() || a.r.is_some() {
        let old_r = match &game.payoff {
            PayoffConfig::Constant { r }
            | PayoffConfig::OffdiagonalConstant { r }
            | PayoffConfig::Unidirectional { r } => Some(*r),
            _ => None,
        };
        let old_kind = match &game.payoff {
            PayoffConfig::OffdiagonalConstant { .. } => KernelKind::OffdiagonalConstant,
            PayoffConfig::Unidirectional { .. } => KernelKind::Unidirectional,
            _ => KernelKind::Constant,
        };
        let Some(r) = a.r.or(old_r) else { bail!("--kernel needs --r for this payoff") };
        game.payoff = payoff_from(a.kernel.unwrap_or(old_kind), r);
    }
    if a.state_mean.is_some() || a.state_var.is_some() {
        let mut st = game
            .state
            .take()
            .unwrap_or(StateConfig { mean: Values::Scalar(0.0), cov: CovConfig::Common { var: 1.0 } });
        if let Some(m) = a.state_mean {
            st.mean = Values::Scalar(m);
        }
        if let Some(v) = a.state_var {
            st.cov = CovConfig::Common { var: v };
        }
        game.state = Some(st);
    }
    cfg.game = Some(game);
    Ok(())
}

fn merge_equilibrium(cfg: &mut RunConfig, a: &EquilibriumArgs) -> Result<()> {
    merge_game(cfg, &a.game)?;
    if let Some(kind) = a.info {
        let noise = a.noise_var;
        cfg.info = Some(match kind {
            InfoKind::NoInfo => InfoConfig::NoInfo,
            InfoKind::FullInfo => InfoConfig::FullInfo,
            InfoKind::Public => InfoConfig::Public { noise_var: noise.context("--info public needs --noise-var")? },
            InfoKind::PrivateIid => {
                InfoConfig::PrivateIid { noise_var: noise.context("--info private-iid needs --noise-var")? }
            }
        });
    }
    if a.solver.is_some() {
        cfg.solver = a.solver;
    }
    if cfg.info.is_none() {
        bail!("no information structure: pass --info or an `info` config section");
    }
    Ok(())
}

fn merge_objective(cfg: &mut RunConfig, a: &ObjectiveArgs) -> Result<()> {
    match (a.u, a.v, a.w, a.alpha, a.beta) {
        (None, None, None, None, None) => {}
        (Some(u), Some(v), Some(w), None, None) => cfg.objective = Some(ObjectiveConfig::Weights { u, v, w }),
        (None, None, None, Some(alpha), Some(beta)) => {
            cfg.objective = Some(ObjectiveConfig::AlphaBeta { alpha, beta })
        }
        _ => bail!("give either all of --u --v --w or both --alpha --beta"),
    }
    Ok(())
}

fn document<T: Serialize>(cfg: &RunConfig, result: &T) -> Result<Value> {
    Ok(json!({ "config": serde_json::to_value(cfg)?, "result": serde_json::to_value(result)? }))
}

fn emit_json<T: Serialize>(cfg: &RunConfig, result: &T) -> Result<()> {
    let doc = document(cfg, result)?;
    match &cfg.out {
        Some(p) => io::write_json(p, &doc)?,
        None => to_stdout(format!("{}\n", serde_json::to_string_pretty(&doc)?).as_bytes())?,
    }
    Ok(())
}

/// A closed pipe (e.g. `| head`) is not an error.
fn to_stdout(bytes: &[u8]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(bytes).and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.config.json"))
}

fn emit_csv(cfg: &RunConfig, bytes: &[u8]) -> Result<()> {
    match &cfg.out {
        Some(p) => {
            io::write_atomic(p, bytes)?;
            io::write_json(&sidecar(p), cfg)?;
        }
        None => to_stdout(bytes)?,
    }
    Ok(())
}

fn wants_csv(cfg: &RunConfig) -> bool {
    cfg.out.as_ref().and_then(|p| p.extension()).is_some_and(|e| e == "csv")
}

fn build_game(cfg: &RunConfig) -> Result<BasicGame> {
    cfg.game.as_ref().context("no game given")?.build()
}

fn spectral(cfg: &RunConfig) -> Result<Status> {
    let game = build_game(cfg)?;
    let k = game.payoff();
    let rep = k.spectral_report()?;
    let psd = if k.is_undirected() { Some(k.min_gram_eigenvalue()?) } else { None };
    emit_json(
        cfg,
        &json!({
            "undirected": k.is_undirected(),
            "n": k.len(),
            "spectrum": rep,
            "min_gram_eigenvalue": psd,
        }),
    )?;
    Ok(Status::Pass)
}

fn solve(cfg: &RunConfig, game: &BasicGame) -> Result<LinearEquilibrium> {
    let info = cfg.info.as_ref().context("no information structure given")?.build(game)?;
    let mut opts = SolveOptions::default();
    if let Some(s) = cfg.solver {
        opts.solver = s.into();
    }
    if let Some(t) = cfg.tol {
        opts.tol = t;
    }
    Ok(solve_linear_equilibrium_with(game, &info, &opts)?)
}

fn equilibrium(cfg: &RunConfig) -> Result<Status> {
    let game = build_game(cfg)?;
    let eq = solve(cfg, &game)?;
    let restrictions = verify_moment_restrictions(&eq, &game, 1e-8)?;
    let status = Status::from_pass(restrictions.pass);
    if wants_csv(cfg) {
        emit_csv(cfg, &io::equilibrium_to_csv(&eq)?)?;
    } else {
        emit_json(
            cfg,
            &json!({
                "diagnostics": eq.diagnostics,
                "moment_restrictions": restrictions,
                "intercepts": eq.intercepts.values().as_slice(),
                "loadings": eq.loadings.iter().map(|c| c.as_slice().to_vec()).collect::<Vec<_>>(),
                "action_cov_diagonal": eq.induced_action_cov.diagonal().as_slice(),
                "action_state_cov": eq.induced_action_state_cov.values().as_slice(),
            }),
        )?;
    }
    Ok(status)
}

fn constant_r(cfg: &RunConfig) -> Option<f64> {
    match cfg.game.as_ref().map(|g| &g.payoff) {
        Some(PayoffConfig::Constant { r }) => Some(*r),
        _ => None,
    }
}

fn moments(cfg: &RunConfig, construct: bool, bare_r: Option<f64>) -> Result<Status> {
    let (m, game) = match &cfg.moment {
        Some(path) => {
            let m = io::read_moment_json(path)?;
            let game = match (&cfg.game, bare_r) {
                (Some(g), _) => Some(g.build()?),
                (None, Some(r)) => Some(BasicGame::common_state(
                    Kernel::constant(m.grid().clone(), r)?,
                    0.0,
                    m.state_var(),
                )?),
                (None, None) => None,
            };
            (m, game)
        }
        None => {
            let game = build_game(cfg)?;
            let eq = solve(cfg, &game)?;
            (EquilibriumMoment::from_equilibrium(&eq)?, Some(game))
        }
    };
    let Some(game) = game else { bail!("moment checks need a payoff: pass --r or a `game` section") };
    let r = constant_r(cfg).or(bare_r);
    let obedience = check_obedience(&m, game.payoff())?;
    let obedient = obedience <= m.default_obedience_tol();
    let positive = check_positivity(&m, None)?;
    let bounds = match r {
        Some(r) if obedient && positive => Some(bounds_check(&m, r)?),
        _ => None,
    };
    let objective = match (&cfg.objective, r) {
        (Some(o), Some(r)) => Some(objective_value(&m, &o.resolve(r))),
        (Some(ObjectiveConfig::Weights { u, v, w }), None) => {
            Some(objective_value(&m, &popgame::moments::DesignObjective::new(*u, *v, *w)))
        }
        (Some(_), None) => bail!("--alpha/--beta need a constant payoff r"),
        _ => None,
    };
    let round_trip = if construct && obedient && positive {
        let info = construct_canonical_signals(&m, &game)?;
        let eq = solve_linear_equilibrium(&game, &info)?;
        let back = EquilibriumMoment::from_equilibrium(&eq)?;
        let d = (back.xi().values() - m.xi().values())
            .amax()
            .max((back.zeta().values() - m.zeta().values()).amax());
        Some(d)
    } else {
        None
    };
    let pass = obedient && positive && bounds.as_ref().is_none_or(|b| b.pass) && round_trip.is_none_or(|d| d <= 1e-8);
    emit_json(
        cfg,
        &json!({
            "obedience_residual": obedience,
            "obedient": obedient,
            "positive": positive,
            "bounds": bounds,
            "objective": objective,
            "round_trip_error": round_trip,
            "feasible": pass,
        }),
    )?;
    Ok(Status::from_pass(pass))
}

fn design(cfg: &mut RunConfig) -> Result<Status> {
    let d = cfg.design.clone().context("missing design section")?;
    let need_r = || d.r.context("this design mode needs --r");
    let need_obj = |r: f64| -> Result<popgame::moments::DesignObjective> {
        Ok(cfg.objective.as_ref().context("this design mode needs --u --v --w or --alpha --beta")?.resolve(r))
    };
    match d.mode {
        DesignMode::Targeted => {
            let r = need_r()?;
            let obj = need_obj(r)?;
            let rep = optimal_targeted(r, &obj)?;
            emit_json(cfg, &json!({ "alpha": obj.alpha(), "beta": obj.beta(r), "optimum": rep }))?;
            Ok(Status::Pass)
        }
        DesignMode::Symmetric => {
            let r = need_r()?;
            let obj = need_obj(r)?;
            let m = d.m.context("symmetric mode needs --m")?;
            let sizes = [100, 200, 400];
            let (ext, raw) = symmetric_value_extrapolated(m, r, &obj, &sizes)?;
            let tg = targeted_value(m, r, &obj)?;
            let rel = (ext - tg).abs() / tg.abs().max(f64::MIN_POSITIVE);
            let pass = rel <= 1e-4 || (ext - tg).abs() <= 1e-12;
            emit_json(
                cfg,
                &json!({ "m": m, "sizes": sizes, "values": raw, "extrapolated": ext, "targeted": tg, "relative_error": rel }),
            )?;
            Ok(Status::from_pass(pass))
        }
        DesignMode::Public => {
            let r = need_r()?;
            let obj = need_obj(r)?;
            let p = public_optimum(r, &obj)?;
            let t = optimal_targeted(r, &obj)?;
            emit_json(cfg, &json!({ "public": p, "targeted": t }))?;
            Ok(Status::Pass)
        }
        DesignMode::Audit => {
            let r = need_r()?;
            let obj = need_obj(r)?;
            let samples = d.samples.unwrap_or(500);
            let seed = cfg.seed.unwrap_or(DEFAULT_SEED);
            let opts = AuditOptions { n: d.n.unwrap_or(100), include_optimum: true };
            let rep = global_optimality_audit_with(r, &obj, samples, seed, &opts)?;
            let tol = cfg.tol.unwrap_or(1e-6);
            let pass = rep.max_excess <= tol * (1.0 + rep.v_star.abs());
            cfg.seed = Some(seed);
            emit_json(cfg, &json!({ "audit": rep, "tol": tol, "pass": pass }))?;
            Ok(Status::from_pass(pass))
        }
        DesignMode::Diagram => {
            let r = need_r()?;
            let cells = regime_diagram(
                r,
                d.alpha_range.unwrap_or((-1.0, 1.0)),
                d.beta_range.unwrap_or((-1.0, 1.0)),
                d.resolution.unwrap_or(201),
            )?;
            emit_csv(cfg, &io::diagram_to_csv(&cells)?)?;
            Ok(Status::Pass)
        }
        DesignMode::Cournot => {
            let rep = cournot_policy(
                d.lambda.context("cournot mode needs --lambda")?,
                d.gamma.context("cournot mode needs --gamma")?,
            )?;
            emit_json(cfg, &rep)?;
            Ok(Status::from_pass(rep.consistent))
        }
    }
}

#[derive(Debug, Serialize)]
struct McRow {
    name: String,
    statistic: f64,
    target: f64,
    standard_error: Option<f64>,
    tolerance: f64,
    pass: bool,
}

impl From<StochasticCheck> for McRow {
    fn from(c: StochasticCheck) -> Self {
        Self {
            name: c.name,
            statistic: c.statistic,
            target: c.target,
            standard_error: Some(c.standard_error),
            tolerance: c.tol_se,
            pass: c.pass,
        }
    }
}

impl From<ExactCheck> for McRow {
    fn from(c: ExactCheck) -> Self {
        Self { name: c.name, statistic: c.residual, target: 0.0, standard_error: None, tolerance: c.tol, pass: c.pass }
    }
}

fn exact_row(name: &str, err: f64, tol: f64) -> McRow {
    McRow { name: name.into(), statistic: err, target: 0.0, standard_error: None, tolerance: tol, pass: err <= tol }
}

fn mc(cfg: &mut RunConfig) -> Result<Status> {
    let m = cfg.mc.clone().context("missing mc section")?;
    let seed = cfg.seed.unwrap_or(DEFAULT_SEED);
    cfg.seed = Some(seed);
    let draws = m.draws.unwrap_or(DEFAULT_DRAWS);
    let p = |k: &str, default: f64| m.params.get(k).copied().unwrap_or(default);
    let tol_se = p("tol_se", DEFAULT_TOL_SE);
    let mut rows: Vec<McRow> = Vec::new();
    let mut extra = Value::Null;
    match m.check {
        McCheck::Lln => {
            let n = m.n.unwrap_or(100);
            let var = p("var", 1.0);
            let grid = MeasureGrid::uniform(n)?;
            let s = sample_gaussian(&DVector::zeros(n), &(DMatrix::identity(n, n) * var), draws, seed)?;
            rows.push(verify_aggregate_variance(&s, &grid, tol_se)?.into());
            rows.push(verify_aggregate_mean(&s, &grid, tol_se)?.into());
        }
        McCheck::Fubini => {
            let n = m.n.unwrap_or(50);
            let rho = p("rho", 0.3);
            let dim = n + 1;
            // θ common to all nodes, f(t) = θ + idiosyncratic noise with correlation rho.
            let mut cov = DMatrix::from_element(dim, dim, rho);
            for i in 0..dim {
                cov[(i, i)] = 1.0;
            }
            let mean = DVector::from_fn(dim, |i, _| (i as f64 * 0.37).sin());
            let grid = MeasureGrid::uniform(n)?;
            let a = DVector::from_fn(dim, |i, _| (i as f64 * 0.71).cos());
            rows.push(verify_covariance_exchange(&cov, 1, &grid, &a)?.into());
            let s = sample_process(&mean, &cov, 1, draws, seed)?;
            rows.push(verify_aggregate_mean(&s, &grid, tol_se)?.into());
            rows.push(verify_aggregate_variance(&s, &grid, tol_se)?.into());
            rows.push(verify_conditional_fubini(&s, &grid, &[0])?.into());
        }
        McCheck::CondFubini | McCheck::Bm => {
            let params = bm_params(&m)?;
            let n = m.n.unwrap_or(200);
            let sol = bm_example_equilibrium(&params)?;
            let (mean, cov) = bm_joint_process(&params, n)?;
            let grid = MeasureGrid::uniform(n)?;
            let s = sample_process(&mean, &cov, 3, draws, seed)?;
            // E[A | x_0, y] against ∫ E[a_j | x_0, y] dj.
            rows.push(verify_conditional_fubini(&s, &grid, &[2, 1])?.into());
            rows.push(verify_aggregate_variance(&s, &grid, tol_se)?.into());
            if m.check == McCheck::Bm {
                let disc = bm_discretized(&params, n)?;
                let d = &disc.solution;
                let gap = [
                    (d.alpha0, sol.alpha0),
                    (d.alpha_x, sol.alpha_x),
                    (d.alpha_y, sol.alpha_y),
                    (d.volatility, sol.volatility),
                    (d.dispersion, sol.dispersion),
                ]
                .iter()
                .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
                rows.push(exact_row("discretized_solution", gap, 1e-6));
                let info = &disc.info;
                let audit = best_response_audit(&disc.equilibrium, &disc.game, info, draws.min(20_000), seed, tol_se)?;
                rows.push(exact_row("best_response_failing_agents", audit.failing_nodes().len() as f64, 0.0));
            }
            extra = json!({ "solution": sol, "params": params });
        }
        McCheck::BrAudit => {
            let n = m.n.unwrap_or(20);
            let game = match &cfg.game {
                Some(g) => g.build()?,
                None => BasicGame::common_state(
                    Kernel::constant(MeasureGrid::uniform(n)?.into_shared(), p("r", 0.4))?,
                    p("mean", 0.5),
                    p("var", 1.0),
                )?,
            };
            let info = match &cfg.info {
                Some(i) => i.build(&game)?,
                None => InfoConfig::PrivateIid { noise_var: p("noise_var", 0.7) }.build(&game)?,
            };
            let mut eq = solve_linear_equilibrium(&game, &info)?;
            if let Some(&node) = m.params.get("perturb_node") {
                let node = node as usize;
                if node >= eq.loadings.len() {
                    bail!("perturb_node {node} outside the grid");
                }
                let mut l = eq.loadings.clone();
                l[node][0] += p("perturb", 0.05);
                eq = LinearEquilibrium::from_coefficients(&info, eq.intercepts.clone(), l)?;
            }
            let rep = best_response_audit(&eq, &game, &info, draws, seed, tol_se)?;
            rows.push(exact_row("best_response_failing_agents", rep.failing_nodes().len() as f64, 0.0));
            extra = serde_json::to_value(&rep)?;
        }
        McCheck::Duplicate => {
            let n = m.n.unwrap_or(20);
            let game = match &cfg.game {
                Some(g) => g.build()?,
                None => BasicGame::common_state(
                    Kernel::constant(MeasureGrid::uniform(n)?.into_shared(), p("r", 2.0))?,
                    p("mean", 1.0),
                    p("var", 1.0),
                )?,
            };
            let rep = duplicate_equilibria(&game, p("scale", 1.0), draws, seed, tol_se)?;
            rows.push(exact_row(
                "duplicate_failing_agents",
                (rep.base_audit.failing_nodes().len() + rep.duplicate_audit.failing_nodes().len()) as f64,
                0.0,
            ));
            extra = json!({
                "lambda": rep.lambda,
                "correlation": rep.correlation,
                "distance": rep.distance,
                "state_mean_shifted": rep.state_mean_shifted,
                "pass": rep.pass,
            });
        }
    }
    let pass = rows.iter().all(|r| r.pass);
    emit_json(
        cfg,
        &json!({ "draws": draws, "seed": seed, "generator": popgame::montecarlo::GENERATOR_ID, "checks": rows, "details": extra, "pass": pass }),
    )?;
    Ok(Status::from_pass(pass))
}

fn bm_params(m: &McConfig) -> Result<BmParams> {
    let mut p = BmParams::default();
    for (k, v) in &m.params {
        match k.as_str() {
            "mu_theta" => p.mu_theta = *v,
            "var_theta" => p.var_theta = *v,
            "var_x" => p.var_x = *v,
            "var_y" => p.var_y = *v,
            "r" => p.r = *v,
            "s" => p.s = *v,
            "k" => p.k = *v,
            "tol_se" => {}
            other => bail!("unknown parameter `{other}` for this check"),
        }
    }
    Ok(p)
}

fn reproduce_all(cfg: &RunConfig, quick: bool, inject: bool) -> Result<Status> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("reproduce-out"));
    let seed = cfg.seed.unwrap_or(DEFAULT_SEED);
    let budget = if quick { Budget::quick() } else { Budget::full() };
    let mut outcomes: Vec<CheckOutcome> = Vec::new();
    let mut results = verification::run_all(&budget, seed);
    results.push(verification::best_response_fixture(&budget, seed, inject));
    for (i, r) in results.into_iter().enumerate() {
        let o = r.unwrap_or_else(|e| CheckOutcome {
            id: if i < 11 { i as u32 + 1 } else { 0 },
            name: "error".into(),
            statistic: f64::NAN,
            threshold: 0.0,
            pass: false,
            detail: e.to_string(),
            seconds: 0.0,
        });
        println!("{o}");
        outcomes.push(o);
    }
    let cells = regime_diagram(0.5, (-1.0, 1.0), (-1.0, 1.0), 201)?;
    io::write_atomic(&dir.join("diagram_r0.5.csv"), &io::diagram_to_csv(&cells)?)?;
    let all_pass = outcomes.iter().all(|o| o.pass);
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let timings: serde_json::Map<String, Value> =
        outcomes.iter().map(|o| (format!("{:02} {}", o.id, o.name), json!(o.seconds))).collect();
    let manifest = json!({
        "header": { "generated_unix": stamp, "seconds": timings },
        "seed": seed,
        "budget": budget,
        "perturbation_injected": inject,
        "checks": outcomes,
        "all_pass": all_pass,
    });
    io::write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(Status::from_pass(all_pass))
}
