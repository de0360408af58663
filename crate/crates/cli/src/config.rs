//! Run configuration. Every section rejects unknown keys; the resolved
//! configuration is written next to each artifact and parses back.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use popgame::game::{BasicGame, GaussianInfo, SolverKind};
use popgame::io;
use popgame::moments::DesignObjective;
use popgame::{GridFunction, Kernel, MeasureGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Spectral,
    Equilibrium,
    Moments,
    Design,
    Mc,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game: Option<GameConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<InfoConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverChoice>,
    /// JSON file with an equilibrium moment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    Auto,
    Direct,
    FixedPoint,
}

impl From<SolverChoice> for SolverKind {
    fn from(s: SolverChoice) -> Self {
        match s {
            SolverChoice::Auto => SolverKind::Auto,
            SolverChoice::Direct => SolverKind::Direct,
            SolverChoice::FixedPoint => SolverKind::FixedPoint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridConfig {
    Uniform { n: usize },
    Weights {
        weights: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coords: Option<Vec<f64>>,
    },
    /// One `weight` or `coord,weight` row per node; masses are renormalized.
    Csv { path: PathBuf },
}

impl GridConfig {
    pub fn build(&self) -> Result<Arc<MeasureGrid>> {
        let g = match self {
            GridConfig::Uniform { n } => MeasureGrid::uniform(*n)?,
            GridConfig::Weights { weights, coords } => MeasureGrid::new(coords.clone(), weights.clone())?,
            GridConfig::Csv { path } => MeasureGrid::from_csv_path(path)?,
        };
        Ok(g.into_shared())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffConfig {
    Constant { r: f64 },
    OffdiagonalConstant { r: f64 },
    Unidirectional { r: f64 },
    /// `R(s,t) = r q(s) q(t)` with `q` given by node values or by polynomial
    /// coefficients in the node coordinate (lowest degree first).
    Separable {
        r: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q_poly: Option<Vec<f64>>,
    },
    Graph { edges: Vec<(usize, usize)>, rbar: f64 },
    Matrix { values: Vec<Vec<f64>> },
    /// Kernel JSON (`grid`, `values`) or a headerless CSV matrix.
    File { path: PathBuf },
}

impl PayoffConfig {
    pub fn build(&self, grid: &Arc<MeasureGrid>) -> Result<Kernel> {
        let g = grid.clone();
        Ok(match self {
            PayoffConfig::Constant { r } => Kernel::constant(g, *r)?,
            PayoffConfig::OffdiagonalConstant { r } => Kernel::offdiagonal_constant(g, *r)?,
            PayoffConfig::Unidirectional { r } => Kernel::unidirectional(g, *r)?,
            PayoffConfig::Separable { r, q, q_poly } => {
                let q = match (q, q_poly) {
                    (Some(q), None) => q.clone(),
                    (None, Some(c)) => (0..grid.len())
                        .map(|i| {
                            let x = grid.coord(i);
                            c.iter().rev().fold(0.0, |acc, a| acc * x + a)
                        })
                        .collect(),
                    _ => bail!("separable payoff needs exactly one of `q` and `q_poly`"),
                };
                Kernel::separable(g, *r, &q)?
            }
            PayoffConfig::Graph { edges, rbar } => Kernel::graph(g, edges, *rbar)?,
            PayoffConfig::Matrix { values } => Kernel::from_matrix(g, matrix(values, grid.len())?)?,
            PayoffConfig::File { path } => read_kernel_file(path, grid)?,
        })
    }
}

fn read_kernel_file(path: &Path, grid: &Arc<MeasureGrid>) -> Result<Kernel> {
    if path.extension().is_some_and(|e| e == "json") {
        let k = io::read_kernel_json(path)?;
        if k.len() != grid.len() || k.grid().weights() != grid.weights() {
            bail!("kernel file {} is defined on a different grid", path.display());
        }
        Ok(Kernel::with_flag(grid.clone(), k.values().clone(), k.is_undirected())?)
    } else {
        let m = io::matrix_from_csv_path(path)?;
        Ok(Kernel::from_matrix(grid.clone(), m)?)
    }
}

fn matrix(values: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if values.len() != n || values.iter().any(|r| r.len() != n) {
        bail!("matrix must be {n}x{n}");
    }
    Ok(DMatrix::from_fn(n, n, |i, j| values[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    Scalar(f64),
    PerNode(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovConfig {
    /// One state shared by every agent.
    Common { var: f64 },
    Independent { var: Values },
    Matrix { values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConfig {
    pub mean: Values,
    pub cov: CovConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    pub grid: GridConfig,
    pub payoff: PayoffConfig,
    /// Defaults to a common state with mean 0 and variance 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateConfig>,
}

impl GameConfig {
    pub fn build(&self) -> Result<BasicGame> {
        let grid = self.grid.build()?;
        let n = grid.len();
        let payoff = self.payoff.build(&grid)?;
        let default_state = StateConfig { mean: Values::Scalar(0.0), cov: CovConfig::Common { var: 1.0 } };
        let state = self.state.as_ref().unwrap_or(&default_state);
        let mean = match &state.mean {
            Values::Scalar(m) => GridFunction::constant(grid.clone(), *m)?,
            Values::PerNode(v) => GridFunction::new(grid.clone(), v.clone())?,
        };
        let cov = match &state.cov {
            CovConfig::Common { var } => Kernel::constant(grid.clone(), *var)?,
            CovConfig::Independent { var } => {
                let d = match var {
                    Values::Scalar(v) => DVector::from_element(n, *v),
                    Values::PerNode(v) if v.len() == n => DVector::from_vec(v.clone()),
                    Values::PerNode(v) => bail!("state variances: expected {n} values, got {}", v.len()),
                };
                Kernel::from_matrix(grid.clone(), DMatrix::from_diagonal(&d))?
            }
            CovConfig::Matrix { values } => Kernel::from_matrix(grid.clone(), matrix(values, n)?)?,
        };
        Ok(BasicGame::new(payoff, mean, cov)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InfoConfig {
    NoInfo,
    FullInfo,
    Public { noise_var: f64 },
    PrivateIid { noise_var: f64 },
    /// Exact disclosure to the listed nodes, or to the first nodes up to the
    /// given mass.
    Targeted {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nodes: Option<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mass: Option<f64>,
    },
    PrivateAndPublic { var_private: f64, var_public: f64 },
    /// `x = L θ + e`, `e ~ N(0, noise)`; `loading` has one row per signal.
    Linear { dims: Vec<usize>, loading: Vec<Vec<f64>>, noise: Vec<Vec<f64>> },
    /// Any of the above, read from its own JSON file.
    Custom { path: PathBuf },
}

impl InfoConfig {
    pub fn build(&self, game: &BasicGame) -> Result<GaussianInfo> {
        Ok(match self {
            InfoConfig::NoInfo => GaussianInfo::no_info(game)?,
            InfoConfig::FullInfo => GaussianInfo::full_info(game)?,
            InfoConfig::Public { noise_var } => GaussianInfo::public(game, *noise_var)?,
            InfoConfig::PrivateIid { noise_var } => GaussianInfo::private_iid(game, *noise_var)?,
            InfoConfig::Targeted { nodes, mass } => {
                let nodes = match (nodes, mass) {
                    (Some(n), None) => n.clone(),
                    (None, Some(m)) => {
                        let w = game.grid().weights();
                        let mut acc = 0.0;
                        let mut out = Vec::new();
                        for (i, wi) in w.iter().enumerate() {
                            if acc + wi > m + 1e-12 {
                                break;
                            }
                            acc += wi;
                            out.push(i);
                        }
                        out
                    }
                    _ => bail!("targeted info needs exactly one of `nodes` and `mass`"),
                };
                GaussianInfo::targeted(game, &nodes)?
            }
            InfoConfig::PrivateAndPublic { var_private, var_public } => {
                GaussianInfo::private_and_public(game, *var_private, *var_public)?
            }
            InfoConfig::Linear { dims, loading, noise } => {
                let total: usize = dims.iter().sum();
                let n = game.len();
                if loading.len() != total || loading.iter().any(|r| r.len() != n) {
                    bail!("loading must be {total}x{n}");
                }
                let l = DMatrix::from_fn(total, n, |i, j| loading[i][j]);
                let e = matrix(noise, total)?;
                GaussianInfo::from_linear_signals(game, dims.clone(), &l, &e)?
            }
            InfoConfig::Custom { path } => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let inner: InfoConfig =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                if matches!(inner, InfoConfig::Custom { .. }) {
                    bail!("{}: a custom info file cannot point to another file", path.display());
                }
                inner.build(game)?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ObjectiveConfig {
    Weights { u: f64, v: f64, w: f64 },
    AlphaBeta { alpha: f64, beta: f64 },
}

impl ObjectiveConfig {
    pub fn resolve(&self, r: f64) -> DesignObjective {
        match *self {
            ObjectiveConfig::Weights { u, v, w } => DesignObjective::new(u, v, w),
            ObjectiveConfig::AlphaBeta { alpha, beta } => DesignObjective::from_alpha_beta(alpha, beta, r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DesignMode {
    Targeted,
    Symmetric,
    Public,
    Audit,
    Diagram,
    Cournot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub mode: DesignMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum McCheck {
    Lln,
    Fubini,
    CondFubini,
    BrAudit,
    Duplicate,
    Bm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub check: McCheck,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

/// Parses `k=v,k=v`.
pub fn parse_params(s: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').with_context(|| format!("expected key=value, got {part:?}"))?;
        let v: f64 = v.trim().parse().with_context(|| format!("not a number in {part:?}"))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let text = r#"{
            "command": "equilibrium",
            "game": {
                "grid": {"kind": "uniform", "n": 5},
                "payoff": {"kind": "separable", "r": 0.5, "q_poly": [1.0, -0.5]},
                "state": {"mean": 1.0, "cov": {"kind": "common", "var": 2.0}}
            },
            "info": {"kind": "private_iid", "noise_var": 0.5},
            "objective": {"alpha": 1.0, "beta": 0.5},
            "seed": 3
        }"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, back);
        let game = cfg.game.unwrap().build().unwrap();
        assert_eq!(game.len(), 5);
        assert!((game.payoff().get(0, 0) - 0.5 * 0.95 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<ObjectiveConfig>(r#"{"u": 1, "v": 0, "w": 0, "x": 1}"#).is_err());
        assert!(serde_json::from_str::<ObjectiveConfig>(r#"{"alpha": 1, "beta": 0}"#).is_ok());
        assert!(serde_json::from_str::<RunConfig>(r#"{"seed": 1, "colour": 2}"#).is_err());
        assert!(serde_json::from_str::<GridConfig>(r#"{"kind": "uniform", "n": 3, "x": 1}"#).is_err());
    }

    #[test]
    fn params_parse() {
        let p = parse_params("r=0.5, s = 2").unwrap();
        assert_eq!(p["r"], 0.5);
        assert_eq!(p["s"], 2.0);
        assert!(parse_params("r").is_err());
    }
}
