//! Artifact files: JSON summaries, CSV tables, legacy VTK and matrix text.
//!
//! CSV floats are written with 17 significant digits, so every value reads
//! back bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{self, NodalCurve};
use crate::error::{Error, Result};
use crate::fem::{EigenPair, SparseSymMatrix};
use crate::geometry::Point2;
use crate::mesh::Mesh;
use crate::rbm::RbmRow;

/// Number of contour levels in `contours.csv`.
pub const CONTOUR_LEVELS: usize = 21;

/// A float with 17 significant digits.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Artifact {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Writes a CSV file with a header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let artifact = |e: csv::Error| Error::Artifact { path: path.display().to_string(), message: e.to_string() };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(artifact)?;
    for r in rows {
        w.write_record(r).map_err(artifact)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Artifact {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    write_bytes(path, &bytes)
}

/// FNV-1a digest of the node coordinates and triangles.
pub fn mesh_id(mesh: &Mesh) -> String {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut feed = |bytes: [u8; 8]| {
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    for p in &mesh.nodes {
        feed(p.x.to_bits().to_le_bytes());
        feed(p.y.to_bits().to_le_bytes());
    }
    for t in &mesh.triangles {
        for &i in t {
            feed((i as u64).to_le_bytes());
        }
    }
    format!("{h:016x}")
}

pub fn eigen_rows(eigs: &[EigenPair]) -> Vec<Vec<String>> {
    eigs.iter()
        .enumerate()
        .map(|(i, e)| vec![(i + 1).to_string(), fmt_f(e.value), fmt_f(e.residual)])
        .collect()
}

pub fn write_eigen_csv(path: &Path, eigs: &[EigenPair]) -> Result<()> {
    write_csv(path, &["index", "eigenvalue", "residual"], &eigen_rows(eigs))
}

pub fn write_nodal_csv(path: &Path, curve: &NodalCurve) -> Result<()> {
    let rows: Vec<Vec<String>> = curve
        .polylines
        .iter()
        .enumerate()
        .flat_map(|(c, pl)| pl.iter().map(move |p| vec![c.to_string(), fmt_f(p.x), fmt_f(p.y)]))
        .collect();
    write_csv(path, &["component", "x", "y"], &rows)
}

pub fn write_rbm_csv(path: &Path, rows: &[RbmRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.target.clone(),
                r.start_id.to_string(),
                fmt_f(r.estimate),
                fmt_f(r.ci_halfwidth),
                r.n_paths.to_string(),
                fmt_f(r.dt),
                r.seed.to_string(),
            ]
        })
        .collect();
    write_csv(path, &["target", "start_id", "estimate", "ci_halfwidth", "n_paths", "dt", "seed"], &rows)
}

/// Legacy VTK unstructured grid of triangles with optional nodal scalars.
pub fn vtk_text(mesh: &Mesh, scalars: Option<(&str, &[f64])>) -> String {
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 2.0\n");
    s.push_str("hotspot-forge mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    s.push_str(&format!("POINTS {} double\n", mesh.n_nodes()));
    for p in &mesh.nodes {
        s.push_str(&format!("{} {} 0\n", fmt_f(p.x), fmt_f(p.y)));
    }
    let nt = mesh.triangles.len();
    s.push_str(&format!("CELLS {} {}\n", nt, 4 * nt));
    for t in &mesh.triangles {
        s.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
    }
    s.push_str(&format!("CELL_TYPES {nt}\n"));
    for _ in 0..nt {
        s.push_str("5\n");
    }
    if let Some((name, v)) = scalars {
        s.push_str(&format!("POINT_DATA {}\nSCALARS {name} double 1\nLOOKUP_TABLE default\n", v.len()));
        for x in v {
            s.push_str(&fmt_f(*x));
            s.push('\n');
        }
    }
    s
}

pub fn write_vtk(path: &Path, mesh: &Mesh, scalars: Option<(&str, &[f64])>) -> Result<()> {
    write_bytes(path, vtk_text(mesh, scalars).as_bytes())
}

/// Reads a file written by [`write_vtk`] back into a mesh and its scalars.
pub fn read_vtk(path: &Path) -> Result<(Mesh, Option<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Artifact { path: path.display().to_string(), message: m.to_string() };
    let mut lines = text.lines();
    if lines.next() != Some("# vtk DataFile Version 2.0") {
        return Err(bad("missing legacy VTK header"));
    }
    let mut tokens = lines.skip(3).flat_map(str::split_whitespace);
    let mut next = |what: &str| tokens.next().ok_or_else(|| bad(&format!("truncated before {what}")));
    let num = |t: &str| t.parse::<f64>().map_err(|_| bad(&format!("bad number {t:?}")));
    let int = |t: &str| t.parse::<usize>().map_err(|_| bad(&format!("bad integer {t:?}")));
    if next("POINTS")? != "POINTS" {
        return Err(bad("expected POINTS"));
    }
    let n = int(next("point count")?)?;
    next("point type")?;
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        let x = num(next("x")?)?;
        let y = num(next("y")?)?;
        next("z")?;
        nodes.push(Point2::new(x, y));
    }
    if next("CELLS")? != "CELLS" {
        return Err(bad("expected CELLS"));
    }
    let nt = int(next("cell count")?)?;
    next("cell size")?;
    let mut tris = Vec::with_capacity(nt);
    for _ in 0..nt {
        if next("cell arity")? != "3" {
            return Err(bad("only triangles are supported"));
        }
        tris.push([int(next("i")?)?, int(next("j")?)?, int(next("k")?)?]);
    }
    if next("CELL_TYPES")? != "CELL_TYPES" {
        return Err(bad("expected CELL_TYPES"));
    }
    next("type count")?;
    for _ in 0..nt {
        next("cell type")?;
    }
    let scalars = match next("section").ok() {
        None => None,
        Some("POINT_DATA") => {
            let m = int(next("point data count")?)?;
            for what in ["SCALARS", "name", "type", "components", "LOOKUP_TABLE", "table"] {
                next(what)?;
            }
            let v = (0..m).map(|_| num(next("scalar")?)).collect::<Result<Vec<f64>>>()?;
            Some(v)
        }
        Some(other) => return Err(bad(&format!("unexpected section {other}"))),
    };
    Ok((Mesh::from_raw(nodes, tris)?, scalars))
}

/// `CONTOUR_LEVELS` evenly spaced levels that include 0 and lie strictly
/// inside `(min φ, max φ)`.
pub fn contour_levels(phi: &[f64]) -> Result<Vec<f64>> {
    let lo = phi.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo < 0.0 && hi > 0.0) {
        return Err(Error::Evaluation("contour levels need a sign-changing function".into()));
    }
    let n = CONTOUR_LEVELS - 1;
    let below = ((n as f64 * -lo / (hi - lo)).round() as usize).clamp(1, n - 1);
    let above = n - below;
    let step = (-lo / (below as f64 + 0.5)).min(hi / (above as f64 + 0.5));
    Ok((0..=n).map(|k| (k as f64 - below as f64) * step).collect())
}

/// Level sets of `φ` at [`contour_levels`], as `(level, curve)` pairs.
pub fn contours(mesh: &Mesh, phi: &[f64]) -> Result<Vec<(f64, NodalCurve)>> {
    contour_levels(phi)?
        .into_iter()
        .map(|c| {
            let shifted: Vec<f64> = phi.iter().map(|v| v - c).collect();
            Ok((c, analysis::nodal_curves(mesh, &shifted)?))
        })
        .collect()
}

pub fn write_contours_csv(path: &Path, mesh: &Mesh, phi: &[f64]) -> Result<()> {
    let mut rows = Vec::new();
    for (level, curve) in contours(mesh, phi)? {
        for (c, pl) in curve.polylines.iter().enumerate() {
            for p in pl {
                rows.push(vec![fmt_f(level), c.to_string(), fmt_f(p.x), fmt_f(p.y)]);
            }
        }
    }
    write_csv(path, &["level", "component", "x", "y"], &rows)
}

pub fn write_matrix(path: &Path, a: &SparseSymMatrix) -> Result<()> {
    write_bytes(path, a.to_coordinate_text().as_bytes())
}

/// Names of the files written into a run directory.
pub mod names {
    pub const DOMAIN: &str = "domain.json";
    pub const MESH: &str = "mesh.json";
    pub const MESH_VTK: &str = "mesh.vtk";
    pub const EIGEN: &str = "eigen.csv";
    pub const NODAL: &str = "nodal.csv";
    pub const SWEEP: &str = "sweep.csv";
    pub const REPORT: &str = "report.json";
    pub const RBM: &str = "rbm.csv";
    pub const CONTOURS: &str = "contours.csv";
    pub const STIFFNESS: &str = "stiffness.mtx";
    pub const MASS: &str = "mass.mtx";
}

/// Regenerates the plot files of a finished run from its `mesh.vtk`.
pub fn export_plot_data(out_dir: &Path) -> Result<Vec<PathBuf>> {
    let vtk = out_dir.join(names::MESH_VTK);
    if !vtk.exists() {
        return Err(Error::Artifact {
            path: vtk.display().to_string(),
            message: "missing; run `solve` or `all` first".into(),
        });
    }
    let (mesh, phi) = read_vtk(&vtk)?;
    let phi = phi.ok_or_else(|| Error::Artifact {
        path: vtk.display().to_string(),
        message: "no point data".into(),
    })?;
    let contours = out_dir.join(names::CONTOURS);
    write_contours_csv(&contours, &mesh, &phi)?;
    let nodal = out_dir.join(names::NODAL);
    write_nodal_csv(&nodal, &analysis::nodal_curves(&mesh, &phi)?)?;
    Ok(vec![contours, nodal])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            assert_eq!(fmt_f(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn levels_are_even_and_inside() {
        let phi = [-0.3, 0.1, 1.0];
        let l = contour_levels(&phi).unwrap();
        assert_eq!(l.len(), CONTOUR_LEVELS);
        assert!(l.contains(&0.0));
        assert!(l[0] > -0.3 && l[CONTOUR_LEVELS - 1] < 1.0);
        let d = l[1] - l[0];
        assert!(l.windows(2).all(|w| ((w[1] - w[0]) - d).abs() < 1e-15));
    }

    #[test]
    fn vtk_round_trip() {
        let mesh = Mesh::rectangle(1.0, 0.5, 3, 2).unwrap();
        let v: Vec<f64> = mesh.nodes.iter().map(|p| p.x - 0.3).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vtk");
        write_vtk(&path, &mesh, Some(("phi2", &v))).unwrap();
        let (m2, v2) = read_vtk(&path).unwrap();
        assert_eq!(m2.nodes, mesh.nodes);
        assert_eq!(m2.triangles, mesh.triangles);
        assert_eq!(v2.unwrap(), v);
    }
}
