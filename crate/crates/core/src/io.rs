//! File formats: CSV for matrices and rasters, JSON for kernels, moments and
//! reports. Every writer goes through [`write_atomic`].

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::DiagramCell;
use crate::error::{Error, Result};
use crate::game::LinearEquilibrium;
use crate::grid::{GridFunction, MeasureGrid};
use crate::kernel::Kernel;
use crate::moments::EquilibriumMoment;

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(res?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Reads a headerless numeric CSV into a matrix. Rows must have equal length.
pub fn matrix_from_csv<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(r);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Error::InvalidInput(format!("not a number: {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::LengthMismatch { expected: first.len(), actual: row.len() });
            }
        }
        rows.push(row);
    }
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn matrix_from_csv_path(path: &Path) -> Result<DMatrix<f64>> {
    matrix_from_csv(fs::File::open(path)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelFile {
    pub grid: MeasureGrid,
    pub values: Vec<Vec<f64>>,
    #[serde(default)]
    pub undirected: Option<bool>,
}

impl KernelFile {
    pub fn from_kernel(k: &Kernel) -> Self {
        let v = k.values();
        Self {
            grid: k.grid().as_ref().clone(),
            values: v.row_iter().map(|r| r.iter().copied().collect()).collect(),
            undirected: Some(k.is_undirected()),
        }
    }

    pub fn into_kernel(self) -> Result<Kernel> {
        let n = self.grid.len();
        if self.values.len() != n || self.values.iter().any(|r| r.len() != n) {
            return Err(Error::GridMismatch(format!("kernel values must be {n}×{n}")));
        }
        let m = DMatrix::from_fn(n, n, |i, j| self.values[i][j]);
        let grid = Arc::new(self.grid);
        match self.undirected {
            Some(flag) => Kernel::with_flag(grid, m, flag),
            None => Kernel::from_matrix(grid, m),
        }
    }
}

pub fn read_kernel_json(path: &Path) -> Result<Kernel> {
    let f: KernelFile = serde_json::from_reader(fs::File::open(path)?)?;
    f.into_kernel()
}

/// Equilibrium moment on a grid: `ξ` inline as a dense matrix or as a CSV
/// path (`xi_csv`, relative to the JSON file), `ζ` as node values. The grid
/// defaults to the uniform one of matching size.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<MeasureGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_csv: Option<PathBuf>,
    pub zeta: Vec<f64>,
    pub state_var: f64,
}

impl MomentFile {
    pub fn from_moment(m: &EquilibriumMoment) -> Self {
        Self {
            grid: Some(m.xi().grid().as_ref().clone()),
            xi: Some(m.xi().values().row_iter().map(|r| r.iter().copied().collect()).collect()),
            xi_csv: None,
            zeta: m.zeta().values().iter().copied().collect(),
            state_var: m.state_var(),
        }
    }

    /// `base` resolves a relative `xi_csv`.
    pub fn into_moment(self, base: &Path) -> Result<EquilibriumMoment> {
        let xi = match (self.xi, &self.xi_csv) {
            (Some(v), None) => {
                let n = v.len();
                if v.iter().any(|r| r.len() != n) {
                    return Err(Error::GridMismatch(format!("ξ must be {n}×{n}")));
                }
                DMatrix::from_fn(n, n, |i, j| v[i][j])
            }
            (None, Some(p)) => matrix_from_csv_path(&base.join(p))?,
            _ => return Err(Error::InvalidInput("moment needs exactly one of `xi` and `xi_csv`".into())),
        };
        let grid = match self.grid {
            Some(g) => g,
            None => MeasureGrid::uniform(self.zeta.len())?,
        };
        let n = grid.len();
        if xi.nrows() != n || xi.ncols() != n {
            return Err(Error::GridMismatch(format!("ξ must be {n}×{n}")));
        }
        if self.zeta.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: self.zeta.len() });
        }
        let grid = Arc::new(grid);
        let xi = Kernel::from_matrix(grid.clone(), xi)?;
        let zeta = GridFunction::from_vector(grid, DVector::from_vec(self.zeta))?;
        EquilibriumMoment::new(xi, zeta, self.state_var)
    }
}

pub fn read_moment_json(path: &Path) -> Result<EquilibriumMoment> {
    let f: MomentFile = serde_json::from_reader(fs::File::open(path)?)?;
    f.into_moment(path.parent().unwrap_or(Path::new(".")))
}

/// One row per agent: `node,coord,weight,intercept,loading_0,…,var,cov_theta`
/// where `var` is the action variance and `cov_theta` the action-state
/// covariance.
pub fn equilibrium_to_csv(eq: &LinearEquilibrium) -> Result<Vec<u8>> {
    let width = eq.loadings.iter().map(|c| c.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["node".to_string(), "coord".into(), "weight".into(), "intercept".into()];
    header.extend((0..width).map(|k| format!("loading_{k}")));
    header.extend(["var".to_string(), "cov_theta".into()]);
    w.write_record(&header)?;
    let grid = eq.grid();
    for t in 0..grid.len() {
        let mut rec = vec![
            t.to_string(),
            format!("{:e}", grid.coord(t)),
            format!("{:e}", grid.weights()[t]),
            format!("{:e}", eq.intercepts.get(t)),
        ];
        for k in 0..width {
            rec.push(eq.loadings[t].get(k).map_or(String::new(), |v| format!("{v:e}")));
        }
        rec.push(format!("{:e}", eq.induced_action_cov.values()[(t, t)]));
        rec.push(format!("{:e}", eq.induced_action_state_cov.get(t)));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn diagram_to_csv(cells: &[DiagramCell]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["alpha", "beta", "regime", "m_star", "v_star"])?;
    for c in cells {
        w.write_record(&[
            format!("{:e}", c.alpha),
            format!("{:e}", c.beta),
            c.regime.label().to_string(),
            format!("{:e}", c.m_star),
            format!("{:e}", c.v_star),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_csv_round_trip() {
        let m = DMatrix::from_fn(3, 4, |i, j| (i as f64 + 0.1) * (j as f64 - 1.7) / 3.0);
        let back = matrix_from_csv(&matrix_to_csv(&m).unwrap()[..]).unwrap();
        assert_eq!(m, back);
        assert!(matrix_from_csv(&b"1,2\n3\n"[..]).is_err());
        assert!(matrix_from_csv(&b"1,x\n"[..]).is_err());
    }

    #[test]
    fn kernel_and_moment_json_round_trip() {
        let g = MeasureGrid::uniform(4).unwrap().into_shared();
        let k = Kernel::unidirectional(g.clone(), 0.3).unwrap();
        let s = serde_json::to_string(&KernelFile::from_kernel(&k)).unwrap();
        let back: KernelFile = serde_json::from_str(&s).unwrap();
        let k2 = back.into_kernel().unwrap();
        assert_eq!(k.values(), k2.values());
        assert!(!k2.is_undirected());

        let m = crate::design::targeted_equilibrium_moment(&[0, 1], 0.5, g).unwrap();
        let s = serde_json::to_string(&MomentFile::from_moment(&m)).unwrap();
        let back: MomentFile = serde_json::from_str(&s).unwrap();
        let m2 = back.into_moment(Path::new(".")).unwrap();
        assert_eq!(m.xi().values(), m2.xi().values());

        let dir = std::env::temp_dir().join(format!("popgame-moment-{}", std::process::id()));
        write_atomic(&dir.join("xi.csv"), &matrix_to_csv(m.xi().values()).unwrap()).unwrap();
        let body = format!(r#"{{"xi_csv": "xi.csv", "zeta": {:?}, "state_var": 1.0}}"#, m.zeta().values().as_slice());
        write_atomic(&dir.join("m.json"), body.as_bytes()).unwrap();
        let m3 = read_moment_json(&dir.join("m.json")).unwrap();
        assert_eq!(m.xi().values(), m3.xi().values());
        assert_eq!(m.xi().grid(), m3.xi().grid());
        fs::remove_dir_all(&dir).unwrap();
        assert!(serde_json::from_str::<MomentFile>(&s.replace("\"state_var\"", "\"extra\":1,\"state_var\"")).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = std::env::temp_dir().join(format!("popgame-io-{}", std::process::id()));
        let p = dir.join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        let leftovers = fs::read_dir(&dir).unwrap().count();
        assert_eq!(leftovers, 1);
        fs::remove_dir_all(&dir).unwrap();
    }
}
