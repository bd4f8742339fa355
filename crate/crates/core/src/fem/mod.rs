//! P1 finite elements for the Neumann Laplacian.

mod eigen;

pub use eigen::{smallest_eigenpairs, EigenOptions, EigenPair, Method, Preconditioner};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::mesh::Mesh;
use crate::par;

/// Symmetric matrix in compressed row storage with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseSymMatrix {
    /// Pattern of a P1 mesh: each node couples to itself and its edge neighbours.
    fn pattern(n: usize, triangles: &[[usize; 3]]) -> Self {
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for t in triangles {
            for &a in t {
                for &b in t {
                    if a != b {
                        rows[a].push(b);
                    }
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(&r);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        SparseSymMatrix { n, row_ptr, col_idx, values: vec![0.0; nnz] }
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        self.row_ptr[i] + row.binary_search(&j).expect("entry outside the sparsity pattern")
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).map_or(0.0, |k| self.values[self.row_ptr[i] + k])
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `y = A x`; rows are independent so the result does not depend on threading.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        par::map_range(self.n, |i| {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            s
        })
    }

    /// `xᵀ A y`.
    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.mul(y))
    }

    /// `a A + b B` on the same pattern.
    pub fn combine(&self, a: f64, other: &SparseSymMatrix, b: f64) -> SparseSymMatrix {
        assert!(self.row_ptr == other.row_ptr && self.col_idx == other.col_idx);
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        SparseSymMatrix { values, ..self.clone() }
    }

    /// Coordinate text (`row col value`, 1-based), one entry per line.
    pub fn to_coordinate_text(&self) -> String {
        let mut s = format!("{} {} {}\n", self.n, self.n, self.nnz());
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s.push_str(&format!("{} {} {:.16e}\n", i + 1, self.col_idx[k] + 1, self.values[k]));
            }
        }
        s
    }
}

/// Dot product summed in fixed-size chunks so the value is independent of
/// the number of threads.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    const CHUNK: usize = 4096;
    par::map_chunks(x.len(), CHUNK, |r| r.map(|i| x[i] * y[i]).sum::<f64>())
        .into_iter()
        .sum()
}

/// Element stiffness and consistent mass of a counterclockwise triangle.
pub fn element_matrices([a, b, c]: [Point2; 3]) -> Result<([[f64; 3]; 3], [[f64; 3]; 3])> {
    let area = 0.5 * (b - a).cross(c - a);
    if !(area > 0.0) || !area.is_finite() {
        return Err(Error::Assembly(format!("degenerate triangle {a} {b} {c}")));
    }
    let p = [a, b, c];
    // gradients of the hat functions are (y_j - y_k, x_k - x_j) / 2A
    let bs: [f64; 3] = std::array::from_fn(|i| p[(i + 1) % 3].y - p[(i + 2) % 3].y);
    let cs: [f64; 3] = std::array::from_fn(|i| p[(i + 2) % 3].x - p[(i + 1) % 3].x);
    let mut k = [[0.0; 3]; 3];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (bs[i] * bs[j] + cs[i] * cs[j]) / (4.0 * area);
            m[i][j] = area / 12.0 * if i == j { 2.0 } else { 1.0 };
        }
    }
    Ok((k, m))
}

/// Assembles the stiffness `K` and consistent mass `M`.
pub fn assemble(mesh: &Mesh) -> Result<(SparseSymMatrix, SparseSymMatrix)> {
    assemble_with(mesh, false)
}

/// Assembles `K` and `M`; with `lumped` the mass is row-summed onto the diagonal.
pub fn assemble_with(mesh: &Mesh, lumped: bool) -> Result<(SparseSymMatrix, SparseSymMatrix)> {
    let locals = par::map_range(mesh.triangles.len(), |t| element_matrices(mesh.tri_points(t)));
    let mut k = SparseSymMatrix::pattern(mesh.n_nodes(), &mesh.triangles);
    let mut m = k.clone();
    for (t, local) in locals.into_iter().enumerate() {
        let (ke, me) = local?;
        let tri = mesh.triangles[t];
        for i in 0..3 {
            for j in 0..3 {
                let s = k.slot(tri[i], tri[j]);
                k.values[s] += ke[i][j];
                if lumped {
                    let d = m.slot(tri[i], tri[i]);
                    m.values[d] += me[i][j];
                } else {
                    m.values[s] += me[i][j];
                }
            }
        }
    }
    Ok((k, m))
}

pub fn rayleigh_quotient(k: &SparseSymMatrix, m: &SparseSymMatrix, v: &[f64]) -> Result<f64> {
    if v.len() != k.n {
        return Err(Error::param("vector length does not match the matrix"));
    }
    let den = m.form(v, v);
    if !(den > 0.0) {
        return Err(Error::param("Rayleigh quotient of a zero vector"));
    }
    Ok(k.form(v, v) / den)
}

/// Nodal interpolant of `g`.
pub fn interpolate(mesh: &Mesh, g: impl Fn(Point2) -> Result<f64> + Sync) -> Result<Vec<f64>> {
    par::map_slice(&mesh.nodes, |&p| g(p)).into_iter().collect()
}

/// Integral of the P1 interpolant of `v`.
pub fn integrate(mesh: &Mesh, v: &[f64]) -> Result<f64> {
    if v.len() != mesh.n_nodes() {
        return Err(Error::param(format!(
            "vector has {} entries but the mesh has {} nodes",
            v.len(),
            mesh.n_nodes()
        )));
    }
    let parts = par::map_range(mesh.triangles.len(), |t| {
        let [a, b, c] = mesh.triangles[t];
        mesh.tri_area(t) * (v[a] + v[b] + v[c]) / 3.0
    });
    Ok(parts.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_right_triangle_matrices() {
        let (k, m) =
            element_matrices([Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)]).unwrap();
        let k_ref = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        let m_ref = [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]].map(|r| r.map(|x| x / 24.0));
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - k_ref[i][j]).abs() < 1e-15);
                assert!((m[i][j] - m_ref[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn degenerate_element_rejected() {
        let r = element_matrices([Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(2.0, 0.0)]);
        assert!(matches!(r, Err(Error::Assembly(_))));
    }

    #[test]
    fn lumped_mass_is_diagonal() {
        let mesh = Mesh::rectangle(1.0, 1.0, 3, 3).unwrap();
        let (_, ml) = assemble_with(&mesh, true).unwrap();
        for i in 0..ml.n {
            for k in ml.row_ptr[i]..ml.row_ptr[i + 1] {
                if ml.col_idx[k] != i {
                    assert_eq!(ml.values[k], 0.0);
                }
            }
        }
        assert!((ml.values.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
