//! Smallest eigenpairs of `K v = μ M v` with the constant mode deflated.
//!
//! Two solvers share one residual contract:
//! shift-invert Lanczos with locking (one pair per run, so repeated
//! eigenvalues are found one copy at a time), and block LOBPCG with either a
//! Jacobi or a factorization preconditioner.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{MatMut, Side};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dot, SparseSymMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preconditioner {
    Jacobi,
    ShiftInvert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Lanczos,
    Lobpcg(Preconditioner),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    pub k: usize,
    pub tol: f64,
    /// Operator applications per eigenpair (Lanczos) or block iterations (LOBPCG).
    pub max_iter: usize,
    pub method: Method,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { k: 6, tol: 1e-8, max_iter: 3000, method: Method::Lanczos, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    /// M-normalized nodal coefficients.
    pub vector: Vec<f64>,
    /// `‖Kv − μMv‖₂ / ‖Kv‖₂`, with `‖K‖·‖v‖` in the denominator when `Kv` vanishes.
    pub residual: f64,
}

struct Factor {
    llt: Llt<usize, f64>,
}

impl Factor {
    fn new(a: &SparseSymMatrix) -> Result<Self> {
        // symmetric, so the CSR arrays are also the CSC arrays
        let sym = SymbolicSparseColMatRef::new_checked(a.n, a.n, &a.row_ptr, None, &a.col_idx);
        let mat = SparseColMatRef::new(sym, &a.values);
        let llt = mat.sp_cholesky(Side::Lower).map_err(|e| Error::Solver {
            message: format!("sparse Cholesky of K + σM failed: {e:?}"),
            residuals: Vec::new(),
        })?;
        Ok(Factor { llt })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        let n = x.len();
        self.llt.solve_in_place(MatMut::from_column_major_slice_mut(&mut x, n, 1));
        x
    }
}

fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn scale(x: &mut [f64], a: f64) {
    for v in x {
        *v *= a;
    }
}

pub(crate) fn residual(k: &SparseSymMatrix, m: &SparseSymMatrix, v: &[f64], mu: f64) -> f64 {
    let kv = k.mul(v);
    let mv = m.mul(v);
    let r: Vec<f64> = kv.iter().zip(&mv).map(|(a, b)| a - mu * b).collect();
    let nk = norm2(&kv);
    let floor = 1e-12 * k.max_abs() * norm2(v);
    norm2(&r) / if nk > floor { nk } else { k.max_abs() * norm2(v) }
}

/// M-orthonormal basis vectors together with their images under `M`.
struct Basis {
    v: Vec<Vec<f64>>,
    mv: Vec<Vec<f64>>,
}

impl Basis {
    fn new() -> Self {
        Basis { v: Vec::new(), mv: Vec::new() }
    }

    fn push(&mut self, v: Vec<f64>, mv: Vec<f64>) {
        self.v.push(v);
        self.mv.push(mv);
    }

    /// Removes the M-projection onto the basis (classical Gram–Schmidt).
    fn project_out(&self, x: &mut [f64]) {
        let coeffs: Vec<f64> = self.mv.iter().map(|mb| dot(mb, x)).collect();
        for (c, b) in coeffs.iter().zip(&self.v) {
            axpy(x, -c, b);
        }
    }
}

fn check_inputs(k: &SparseSymMatrix, m: &SparseSymMatrix, opts: &EigenOptions) -> Result<()> {
    if opts.k < 2 {
        return Err(Error::param("need k ≥ 2 eigenpairs"));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::param("tolerance must be positive"));
    }
    if k.n != m.n || k.row_ptr != m.row_ptr || k.col_idx != m.col_idx {
        return Err(Error::param("K and M must share one sparsity pattern"));
    }
    if opts.k > k.n {
        return Err(Error::param(format!("asked for {} eigenpairs of a {}-dimensional problem", opts.k, k.n)));
    }
    Ok(())
}

/// The `k` smallest eigenpairs in ascending order. The first is the constant
/// mode, deflated explicitly; its value is the Rayleigh quotient of the
/// normalized constant vector.
pub fn smallest_eigenpairs(k: &SparseSymMatrix, m: &SparseSymMatrix, opts: &EigenOptions) -> Result<Vec<EigenPair>> {
    check_inputs(k, m, opts)?;
    let n = k.n;
    let ones = vec![1.0; n];
    let total = m.form(&ones, &ones);
    let u: Vec<f64> = vec![1.0 / total.sqrt(); n];
    let mu1 = k.form(&u, &u);
    let first = EigenPair { value: mu1, residual: residual(k, m, &u, mu1), vector: u.clone() };
    let mut locked = Basis::new();
    locked.push(u.clone(), m.mul(&u));
    let sigma = 1e-6 * k.trace() / m.trace();
    let shifted = k.combine(1.0, m, sigma);
    let mut rest = match opts.method {
        Method::Lanczos => {
            let f = Factor::new(&shifted)?;
            lanczos_locked(k, m, &f, locked, opts)?
        }
        Method::Lobpcg(pre) => {
            let f = match pre {
                Preconditioner::ShiftInvert => Some(Factor::new(&shifted)?),
                Preconditioner::Jacobi => None,
            };
            let d = shifted.diag();
            let precond = |r: &[f64]| -> Vec<f64> {
                match &f {
                    Some(f) => f.solve(r),
                    None => r.iter().zip(&d).map(|(x, di)| x / di).collect(),
                }
            };
            lobpcg(k, m, &precond, &locked, opts)?
        }
    };
    rest.sort_by(|a, b| a.value.total_cmp(&b.value));
    let mut out = vec![first];
    out.extend(rest);
    for p in &mut out {
        orient_sign(&mut p.vector);
    }
    Ok(out)
}

/// Fixes the arbitrary sign: the entry of largest magnitude (lowest index on ties) is positive.
fn orient_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        scale(v, -1.0);
    }
}

fn random_start(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
}

fn lanczos_locked(
    k: &SparseSymMatrix,
    m: &SparseSymMatrix,
    f: &Factor,
    mut locked: Basis,
    opts: &EigenOptions,
) -> Result<Vec<EigenPair>> {
    let n = k.n;
    let max_dim = 250.min(n - 1).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut found = Vec::new();
    let mut residuals = Vec::new();
    for _target in 1..opts.k {
        let mut start = random_start(n, &mut rng);
        let mut budget = opts.max_iter;
        let mut best: Option<EigenPair> = None;
        'restart: loop {
            locked.project_out(&mut start);
            locked.project_out(&mut start);
            let ms = m.mul(&start);
            let nrm = dot(&start, &ms).sqrt();
            if !(nrm > 0.0) {
                return Err(Error::Solver { message: "Lanczos start vector collapsed".into(), residuals });
            }
            scale(&mut start, 1.0 / nrm);
            let mut q = Basis::new();
            q.push(start.clone(), m.mul(&start));
            let mut alpha: Vec<f64> = Vec::new();
            let mut beta: Vec<f64> = Vec::new();
            let dim_cap = max_dim.min(n - locked.v.len());
            loop {
                let j = alpha.len();
                let mut w = f.solve(&q.mv[j]);
                locked.project_out(&mut w);
                let a = dot(&q.mv[j], &w);
                alpha.push(a);
                for _ in 0..2 {
                    q.project_out(&mut w);
                    locked.project_out(&mut w);
                }
                let mw = m.mul(&w);
                let b = dot(&w, &mw).max(0.0).sqrt();
                budget = budget.saturating_sub(1);
                let steps = alpha.len();
                let check = steps % 4 == 0 || b <= 1e-14 * a.abs() || steps >= dim_cap || budget == 0;
                if check {
                    let (theta, s) = top_ritz(&alpha, &beta);
                    let est = b * s[steps - 1].abs();
                    if est <= 1e-2 * opts.tol * theta || steps >= dim_cap || budget == 0 || b <= 1e-14 * a.abs() {
                        let mut y = vec![0.0; n];
                        for (c, qi) in s.iter().zip(&q.v) {
                            axpy(&mut y, *c, qi);
                        }
                        locked.project_out(&mut y);
                        let my = m.mul(&y);
                        let ny = dot(&y, &my).sqrt();
                        scale(&mut y, 1.0 / ny);
                        let mu = k.form(&y, &y);
                        let res = residual(k, m, &y, mu);
                        let pair = EigenPair { value: mu, vector: y, residual: res };
                        if res <= opts.tol {
                            best = Some(pair);
                            break 'restart;
                        }
                        if best.as_ref().is_none_or(|p| res < p.residual) {
                            best = Some(pair.clone());
                        }
                        if budget == 0 {
                            break 'restart;
                        }
                        if steps >= dim_cap || b <= 1e-14 * a.abs() {
                            start = pair.vector;
                            continue 'restart;
                        }
                    }
                }
                let mut wn = w;
                scale(&mut wn, 1.0 / b);
                let mwn: Vec<f64> = mw.iter().map(|x| x / b).collect();
                beta.push(b);
                q.push(wn, mwn);
            }
        }
        let pair = best.expect("at least one Ritz pair was formed");
        residuals.push(pair.residual);
        if pair.residual > opts.tol {
            return Err(Error::Solver {
                message: format!("Lanczos exhausted {} operator applications", opts.max_iter),
                residuals,
            });
        }
        let mv = m.mul(&pair.vector);
        locked.push(pair.vector.clone(), mv);
        found.push(pair);
    }
    Ok(found)
}

/// Largest eigenvalue of the Lanczos tridiagonal and its eigenvector.
fn top_ritz(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>) {
    let j = alpha.len();
    let t = DMatrix::from_fn(j, j, |r, c| {
        if r == c {
            alpha[r]
        } else if r + 1 == c {
            beta[r]
        } else if c + 1 == r {
            beta[c]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let mut best = 0;
    for i in 1..j {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    (eig.eigenvalues[best], eig.eigenvectors.column(best).iter().copied().collect())
}

/// Block LOBPCG on the M-orthogonal complement of `deflate`.
fn lobpcg(
    k: &SparseSymMatrix,
    m: &SparseSymMatrix,
    precond: &dyn Fn(&[f64]) -> Vec<f64>,
    deflate: &Basis,
    opts: &EigenOptions,
) -> Result<Vec<EigenPair>> {
    let n = k.n;
    let want = opts.k - 1;
    let block = (want + 3).min(n - deflate.v.len());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<Vec<f64>> = (0..block).map(|_| random_start(n, &mut rng)).collect();
    for v in &mut x {
        deflate.project_out(v);
    }
    let (mut x, mut lam) = rayleigh_ritz(k, m, &x, block)?;
    let mut p: Vec<Vec<f64>> = Vec::new();
    let mut res = vec![f64::INFINITY; block];
    for _ in 0..opts.max_iter {
        let kx: Vec<Vec<f64>> = x.iter().map(|v| k.mul(v)).collect();
        let mx: Vec<Vec<f64>> = x.iter().map(|v| m.mul(v)).collect();
        let mut w = Vec::new();
        for i in 0..block {
            let r: Vec<f64> = kx[i].iter().zip(&mx[i]).map(|(a, b)| a - lam[i] * b).collect();
            let nk = norm2(&kx[i]);
            res[i] = norm2(&r) / if nk > 1e-12 * k.max_abs() * norm2(&x[i]) { nk } else { k.max_abs() * norm2(&x[i]) };
            if i < want && res[i] > opts.tol {
                let mut wi = precond(&r);
                deflate.project_out(&mut wi);
                w.push(wi);
            }
        }
        if res[..want].iter().all(|&r| r <= opts.tol) {
            return Ok((0..want)
                .map(|i| EigenPair { value: lam[i], vector: x[i].clone(), residual: res[i] })
                .collect());
        }
        let mut s: Vec<Vec<f64>> = x.clone();
        s.extend(w);
        s.extend(p.iter().cloned());
        let (xn, ln) = rayleigh_ritz(k, m, &s, block)?;
        // conjugate directions: the part of the new block outside the old one
        p = xn
            .iter()
            .map(|v| {
                let mv = m.mul(v);
                let mut d = v.clone();
                for xo in &x {
                    let c = dot(xo, &mv);
                    axpy(&mut d, -c, xo);
                }
                d
            })
            .collect();
        x = xn;
        lam = ln;
    }
    Err(Error::Solver {
        message: format!("LOBPCG did not converge in {} iterations", opts.max_iter),
        residuals: res[..want].to_vec(),
    })
}

/// Rayleigh–Ritz on span(`s`): M-orthonormalizes by SVQB, dropping nearly
/// dependent directions, and returns the `keep` lowest Ritz pairs.
fn rayleigh_ritz(
    k: &SparseSymMatrix,
    m: &SparseSymMatrix,
    s: &[Vec<f64>],
    keep: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let c = s.len();
    let ms: Vec<Vec<f64>> = s.iter().map(|v| m.mul(v)).collect();
    let g = DMatrix::from_fn(c, c, |i, j| dot(&s[i], &ms[j]));
    let g = (&g + g.transpose()) * 0.5;
    let d: Vec<f64> = (0..c).map(|i| 1.0 / g[(i, i)].max(f64::MIN_POSITIVE).sqrt()).collect();
    let gs = DMatrix::from_fn(c, c, |i, j| g[(i, j)] * d[i] * d[j]);
    let eg = SymmetricEigen::new(gs);
    let top = eg.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cols: Vec<usize> = (0..c).filter(|&i| eg.eigenvalues[i] > 1e-13 * top).collect();
    if cols.len() < keep {
        return Err(Error::Solver {
            message: "search space became rank deficient".into(),
            residuals: Vec::new(),
        });
    }
    // transform to an M-orthonormal basis: B = S D V Θ^{-1/2}
    let tmat = DMatrix::from_fn(c, cols.len(), |i, jj| {
        let j = cols[jj];
        d[i] * eg.eigenvectors[(i, j)] / eg.eigenvalues[j].sqrt()
    });
    let combine = |vs: &[Vec<f64>], coef: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..coef.ncols())
            .map(|jj| {
                let mut out = vec![0.0; vs[0].len()];
                for i in 0..vs.len() {
                    axpy(&mut out, coef[(i, jj)], &vs[i]);
                }
                out
            })
            .collect()
    };
    let b = combine(s, &tmat);
    let kb: Vec<Vec<f64>> = b.iter().map(|v| k.mul(v)).collect();
    let r = b.len();
    let a = DMatrix::from_fn(r, r, |i, j| dot(&b[i], &kb[j]));
    let a = (&a + a.transpose()) * 0.5;
    let ea = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| ea.eigenvalues[i].total_cmp(&ea.eigenvalues[j]));
    let sel = DMatrix::from_fn(r, keep, |i, jj| ea.eigenvectors[(i, order[jj])]);
    let x = combine(&b, &sel);
    let lam = (0..keep).map(|jj| ea.eigenvalues[order[jj]]).collect();
    Ok((x, lam))
}
