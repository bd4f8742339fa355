//! Checks that turn eigenpairs into verdicts: the small-eigenvalue bound,
//! nodal-line confinement, simplicity, the interior maximum, symmetry and
//! cone monotonicity.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{self, EigenPair, SparseSymMatrix};
use crate::geometry::{
    self, canonicalize, point_in_loop, point_segment_distance, DomainSpec, Point2, SymmetryElement,
    TestFunctionKind,
};
use crate::mesh::Mesh;
use crate::par;

/// Diameter below which a nodal component is ruled out in the confinement argument.
pub const NODAL_DIAMETER_CUTOFF: f64 = 1e-10;
/// Size of the cut-off domain in the same argument.
pub const CUTOFF_DOMAIN_SIZE: f64 = 1e-6;

/// Ingredients and value of the test-function upper bound for `μ2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1 {
    pub bound: f64,
    pub int_f1: f64,
    pub int_f2: f64,
}

/// Rayleigh quotient of the mean-free interpolant of `f1/∫f1 − f2/∫f2`.
pub fn lemma1(spec: &DomainSpec, mesh: &Mesh, k: &SparseSymMatrix, m: &SparseSymMatrix) -> Result<Lemma1> {
    let f1 = fem::interpolate(mesh, |p| geometry::test_function(spec, TestFunctionKind::F1, p))?;
    let f2 = fem::interpolate(mesh, |p| geometry::test_function(spec, TestFunctionKind::F2, p))?;
    let int_f1 = fem::integrate(mesh, &f1)?;
    let int_f2 = fem::integrate(mesh, &f2)?;
    if !(int_f1 > 0.0 && int_f2 > 0.0) {
        return Err(Error::Evaluation("test function integrals must be positive".into()));
    }
    let mut f: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a / int_f1 - b / int_f2).collect();
    let ones = vec![1.0; f.len()];
    let mean = m.form(&ones, &f) / m.form(&ones, &ones);
    for v in &mut f {
        *v -= mean;
    }
    let bound = fem::rayleigh_quotient(k, m, &f)?;
    Ok(Lemma1 { bound, int_f1, int_f2 })
}

pub fn lemma1_bound(spec: &DomainSpec, mesh: &Mesh, k: &SparseSymMatrix, m: &SparseSymMatrix) -> Result<f64> {
    Ok(lemma1(spec, mesh, k, m)?.bound)
}

/// Zero set of a P1 function as polylines through edge crossings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodalCurve {
    pub polylines: Vec<Vec<Point2>>,
    /// Length of the crossed mesh edge at every point.
    pub local_h: Vec<Vec<f64>>,
    pub component: Vec<usize>,
}

impl NodalCurve {
    pub fn n_points(&self) -> usize {
        self.polylines.iter().map(Vec::len).sum()
    }

    pub fn points(&self) -> impl Iterator<Item = (usize, Point2, f64)> + '_ {
        self.polylines
            .iter()
            .zip(&self.local_h)
            .enumerate()
            .flat_map(|(c, (pl, hs))| pl.iter().zip(hs).map(move |(&p, &h)| (c, p, h)))
    }
}

/// Extracts the nodal line. Zero nodal values count as positive.
pub fn nodal_curves(mesh: &Mesh, phi: &[f64]) -> Result<NodalCurve> {
    if phi.len() != mesh.n_nodes() {
        return Err(Error::param("vector length does not match the mesh"));
    }
    let pos = |i: usize| phi[i] >= 0.0;
    // crossing edges and the triangles joining them
    let mut links: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for tri in &mesh.triangles {
        if tri.iter().all(|&i| phi[i] == 0.0) {
            return Err(Error::DegenerateEigenvector(format!(
                "vector vanishes identically on triangle {tri:?}"
            )));
        }
        let crossings: Vec<(usize, usize)> = (0..3)
            .map(|k| (tri[k], tri[(k + 1) % 3]))
            .filter(|&(a, b)| pos(a) != pos(b))
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        if crossings.len() == 2 {
            links.entry(crossings[0]).or_default().push(crossings[1]);
            links.entry(crossings[1]).or_default().push(crossings[0]);
        }
    }
    let point = |(a, b): (usize, usize)| {
        let t = phi[a] / (phi[a] - phi[b]);
        mesh.nodes[a].lerp(mesh.nodes[b], t)
    };
    let mut seen: BTreeMap<(usize, usize), bool> = links.keys().map(|&e| (e, false)).collect();
    let mut curve = NodalCurve::default();
    let mut walk = |start: (usize, usize), seen: &mut BTreeMap<(usize, usize), bool>| {
        let mut chain = vec![start];
        seen.insert(start, true);
        let mut cur = start;
        while let Some(&next) = links[&cur].iter().find(|e| !seen[*e]) {
            seen.insert(next, true);
            chain.push(next);
            cur = next;
        }
        // close cycles
        if chain.len() > 2 && links[&cur].contains(&start) {
            chain.push(start);
        }
        let id = curve.polylines.len();
        curve.local_h.push(chain.iter().map(|&(a, b)| mesh.nodes[a].dist(mesh.nodes[b])).collect());
        curve.polylines.push(chain.into_iter().map(point).collect());
        curve.component.push(id);
    };
    // open chains start at degree-one edges, then the remaining cycles
    let ends: Vec<(usize, usize)> = links.iter().filter(|(_, v)| v.len() == 1).map(|(&e, _)| e).collect();
    for e in ends {
        if !seen[&e] {
            walk(e, &mut seen);
        }
    }
    let rest: Vec<(usize, usize)> = links.keys().copied().collect();
    for e in rest {
        if !seen[&e] {
            walk(e, &mut seen);
        }
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalCheck {
    pub pass: bool,
    /// Largest distance from a curve point to the bridges.
    pub max_excursion: f64,
    /// Largest excursion minus the local mesh size (positive means a violation).
    pub max_signed_excursion: f64,
    pub points: usize,
    pub outside: usize,
    /// Largest distance from a curve point to the nearest image of `K6`.
    /// Reported only; no threshold applies.
    pub k6_excursion: f64,
    pub diagnostic: Option<String>,
}

/// The closed bridge region `M` inside the fundamental sector.
fn bridge_polygon(spec: &DomainSpec) -> Vec<Point2> {
    let a = geometry::vertices(spec).expect("validated spec");
    let mut p = vec![Point2::new(5.0, 0.0)];
    p.extend_from_slice(&a[2..7]);
    p.push(Point2::new(7.0, 0.0));
    p
}

/// Distance from `p` to `M` (zero inside).
pub fn distance_to_bridges(spec: &DomainSpec, p: Point2) -> f64 {
    let poly = bridge_polygon(spec);
    let (_, q) = canonicalize(p);
    if point_in_loop(&poly, q) {
        return 0.0;
    }
    let n = poly.len();
    (0..n)
        .map(|i| point_segment_distance(q, poly[i], poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

pub fn check_nodal_in_m(spec: &DomainSpec, curve: &NodalCurve) -> NodalCheck {
    if curve.n_points() == 0 {
        return NodalCheck {
            pass: false,
            max_excursion: f64::INFINITY,
            max_signed_excursion: f64::INFINITY,
            points: 0,
            outside: 0,
            k6_excursion: f64::INFINITY,
            diagnostic: Some("no nodal line".into()),
        };
    }
    let mut max_exc = 0.0f64;
    let mut max_signed = f64::NEG_INFINITY;
    let mut outside = 0;
    let a6 = geometry::vertices(spec).expect("validated spec")[5];
    let mut k6 = 0.0f64;
    for (_, p, h) in curve.points() {
        let (_, q) = canonicalize(p);
        k6 = k6.max(point_segment_distance(q, Point2::new(a6.x, 0.0), a6));
        let d = distance_to_bridges(spec, p);
        max_exc = max_exc.max(d);
        max_signed = max_signed.max(d - h);
        if d > h {
            outside += 1;
        }
    }
    NodalCheck {
        pass: outside == 0,
        max_excursion: max_exc,
        max_signed_excursion: max_signed,
        points: curve.n_points(),
        outside,
        k6_excursion: k6,
        diagnostic: (outside > 0).then(|| format!("{outside} of {} nodal points lie outside the bridges", curve.n_points())),
    }
}

/// Number of connected sign components, ignoring nodes where `|φ| ≤ 1e-12·‖φ‖∞`.
pub fn nodal_domain_count(mesh: &Mesh, phi: &[f64]) -> usize {
    let scale = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let keep: Vec<bool> = phi.iter().map(|v| v.abs() > 1e-12 * scale).collect();
    let mut parent: Vec<usize> = (0..phi.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for tri in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            if keep[a] && keep[b] && (phi[a] > 0.0) == (phi[b] > 0.0) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    (0..phi.len()).filter(|&i| keep[i] && find(&mut parent, i) == i).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Simplicity {
    pub gap: f64,
    pub relative_gap: f64,
    pub err_est: f64,
    pub pass: bool,
}

/// `μ3 − μ2` against ten times the discretization-error estimate.
pub fn simplicity_gap(eigs: &[EigenPair], err_est: f64) -> Result<Simplicity> {
    if eigs.len() < 3 {
        return Err(Error::param("simplicity needs at least three eigenpairs"));
    }
    let gap = eigs[2].value - eigs[1].value;
    Ok(Simplicity { gap, relative_gap: gap / eigs[1].value, err_est, pass: gap > 10.0 * err_est })
}

/// Richardson estimate of the error of the finer of two values from meshes
/// whose sizes differ by a factor of two, for a second-order quantity.
pub fn richardson(coarse: f64, fine: f64) -> f64 {
    (coarse - fine).abs() / 3.0
}

/// `∫φ` over the disc `B(0, r)`, integrating the P1 interpolant by adaptive
/// subdivision of the triangles cut by the circle.
pub fn disc_integral(mesh: &Mesh, phi: &[f64], r: f64) -> f64 {
    fn tri_dist(p: [Point2; 3]) -> f64 {
        let o = Point2::ORIGIN;
        let inside = {
            let s = |a: Point2, b: Point2| (b - a).cross(o - a) >= 0.0;
            s(p[0], p[1]) && s(p[1], p[2]) && s(p[2], p[0])
        };
        if inside {
            return 0.0;
        }
        (0..3).map(|i| point_segment_distance(o, p[i], p[(i + 1) % 3])).fold(f64::INFINITY, f64::min)
    }
    fn rec(p: [Point2; 3], v: [f64; 3], r: f64, depth: u32) -> f64 {
        let area = 0.5 * (p[1] - p[0]).cross(p[2] - p[0]);
        if p.iter().all(|q| q.norm() <= r) {
            return area * (v[0] + v[1] + v[2]) / 3.0;
        }
        if tri_dist(p) >= r {
            return 0.0;
        }
        if depth == 0 {
            let c = Point2::new((p[0].x + p[1].x + p[2].x) / 3.0, (p[0].y + p[1].y + p[2].y) / 3.0);
            return if c.norm() <= r { area * (v[0] + v[1] + v[2]) / 3.0 } else { 0.0 };
        }
        let m = [p[0].lerp(p[1], 0.5), p[1].lerp(p[2], 0.5), p[2].lerp(p[0], 0.5)];
        let w = [(v[0] + v[1]) / 2.0, (v[1] + v[2]) / 2.0, (v[2] + v[0]) / 2.0];
        rec([p[0], m[0], m[2]], [v[0], w[0], w[2]], r, depth - 1)
            + rec([m[0], p[1], m[1]], [w[0], v[1], w[1]], r, depth - 1)
            + rec([m[2], m[1], p[2]], [w[2], w[1], v[2]], r, depth - 1)
            + rec([m[0], m[1], m[2]], [w[0], w[1], w[2]], r, depth - 1)
    }
    let parts = par::map_range(mesh.triangles.len(), |t| {
        let tri = mesh.triangles[t];
        rec(mesh.tri_points(t), tri.map(|i| phi[i]), r, 10)
    });
    parts.iter().sum()
}

/// `(∫φ²)^{1/2}` of the P1 interpolant.
pub fn l2_norm(mesh: &Mesh, phi: &[f64]) -> f64 {
    let parts = par::map_range(mesh.triangles.len(), |t| {
        let [a, b, c] = mesh.triangles[t].map(|i| phi[i]);
        mesh.tri_area(t) / 6.0 * (a * a + b * b + c * c + a * b + b * c + c * a)
    });
    parts.iter().sum::<f64>().sqrt()
}

/// Flips `φ` so that its integral over `B(0, 1/10)` is positive. Returns the
/// normalized vector and that integral.
pub fn sign_normalize(mesh: &Mesh, phi: &[f64]) -> Result<(Vec<f64>, f64)> {
    let c2 = disc_integral(mesh, phi, DomainSpec::HOT_DISC_RADIUS);
    let threshold = 1e-10 * l2_norm(mesh, phi);
    if c2.abs() <= threshold {
        return Err(Error::AmbiguousSign { c2, threshold });
    }
    if c2 > 0.0 {
        Ok((phi.to_vec(), c2))
    } else {
        Ok((phi.iter().map(|v| -v).collect(), -c2))
    }
}

/// P1 value at `p`, or `None` outside the mesh.
pub fn evaluate(mesh: &Mesh, phi: &[f64], p: Point2) -> Option<f64> {
    let (t, l) = mesh.locate(p)?;
    let tri = mesh.triangles[t];
    Some(l[0] * phi[tri[0]] + l[1] * phi[tri[1]] + l[2] * phi[tri[2]])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub argmax: usize,
    pub point: Point2,
    pub interior: bool,
    pub distance_to_origin: f64,
    pub value_at_origin: Option<f64>,
    pub max_value: f64,
    pub max_boundary: f64,
    pub margin: f64,
}

pub fn extremum_report(mesh: &Mesh, phi: &[f64]) -> Extremum {
    let boundary = mesh.boundary_nodes();
    let mut argmax = 0;
    for i in 1..phi.len() {
        if phi[i] > phi[argmax] {
            argmax = i;
        }
    }
    let max_boundary = (0..phi.len())
        .filter(|&i| boundary[i])
        .map(|i| phi[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let point = mesh.nodes[argmax];
    Extremum {
        argmax,
        point,
        interior: !boundary[argmax],
        distance_to_origin: point.norm(),
        value_at_origin: evaluate(mesh, phi, Point2::ORIGIN),
        max_value: phi[argmax],
        max_boundary,
        margin: phi[argmax] - max_boundary,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryResidual {
    /// `max |φ(σp) − φ(p)| / ‖φ‖∞` over nodes and group elements.
    pub residual: f64,
    pub locate_failures: usize,
}

pub fn symmetry_residual(mesh: &Mesh, phi: &[f64]) -> SymmetryResidual {
    let scale = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let per_node = par::map_range(mesh.n_nodes(), |i| {
        let p = mesh.nodes[i];
        let mut worst = 0.0f64;
        let mut fails = 0usize;
        for g in SymmetryElement::all() {
            match evaluate(mesh, phi, g.apply(p)) {
                Some(v) => worst = worst.max((v - phi[i]).abs()),
                None => fails += 1,
            }
        }
        (worst, fails)
    });
    let worst = per_node.iter().map(|x| x.0).fold(0.0, f64::max);
    let fails = per_node.iter().map(|x| x.1).sum();
    SymmetryResidual { residual: if scale > 0.0 { worst / scale } else { 0.0 }, locate_failures: fails }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeCheck {
    pub violations: usize,
    pub total: usize,
    /// Pair with the largest `φ(y) − φ(x)`.
    pub worst: Option<(Point2, Point2, f64)>,
}

/// Samples pairs in `D1` whose direction lies strictly inside the
/// monotonicity cone (by an angle margin `tol`) and counts pairs with
/// `φ(x) < φ(y) − tol·‖φ‖∞`.
pub fn cone_monotonicity_check(
    spec: &DomainSpec,
    mesh: &Mesh,
    phi: &[f64],
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> Result<ConeCheck> {
    let (lo, hi) = geometry::monotonicity_cone(spec)?;
    let d1 = geometry::fundamental_polygon(spec)?;
    let (mut bl, mut bh) = (d1[0], d1[0]);
    for p in &d1 {
        bl = Point2::new(bl.x.min(p.x), bl.y.min(p.y));
        bh = Point2::new(bh.x.max(p.x), bh.y.max(p.y));
    }
    let scale = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = |rng: &mut ChaCha8Rng| loop {
        let p = Point2::new(rng.random_range(bl.x..bh.x), rng.random_range(bl.y..bh.y));
        if point_in_loop(&d1, p) {
            return p;
        }
    };
    let mut pairs = Vec::with_capacity(n_samples);
    let mut attempts = 0usize;
    while pairs.len() < n_samples {
        attempts += 1;
        if attempts > 10_000 * n_samples.max(1) {
            return Err(Error::Evaluation("could not draw enough pairs inside the cone".into()));
        }
        let x = sample(&mut rng);
        let y = sample(&mut rng);
        let d = y - x;
        let ang = d.y.atan2(d.x);
        if ang > lo + tol && ang < hi - tol {
            pairs.push((x, y));
        }
    }
    let evals = par::map_slice(&pairs, |&(x, y)| (evaluate(mesh, phi, x), evaluate(mesh, phi, y)));
    let mut violations = 0;
    let mut worst: Option<(Point2, Point2, f64)> = None;
    for (&(x, y), (fx, fy)) in pairs.iter().zip(evals) {
        let (Some(fx), Some(fy)) = (fx, fy) else {
            violations += 1;
            continue;
        };
        let excess = fy - fx;
        if excess > tol * scale {
            violations += 1;
        }
        if worst.is_none_or(|w| excess > w.2) {
            worst = Some((x, y, excess));
        }
    }
    Ok(ConeCheck { violations, total: pairs.len(), worst })
}

/// One named check in a verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub threshold: f64,
    /// Signed distance to failure; positive when passing.
    pub margin: f64,
}

impl CheckRecord {
    /// Passes when `measured ≤ threshold`.
    pub fn at_most(name: &str, measured: f64, threshold: f64) -> Self {
        CheckRecord { name: name.into(), pass: measured <= threshold, measured, threshold, margin: threshold - measured }
    }

    /// Passes when `measured > threshold`.
    pub fn above(name: &str, measured: f64, threshold: f64) -> Self {
        CheckRecord { name: name.into(), pass: measured > threshold, measured, threshold, margin: measured - threshold }
    }

    pub fn flag(name: &str, pass: bool) -> Self {
        let v = if pass { 1.0 } else { 0.0 };
        CheckRecord { name: name.into(), pass, measured: v, threshold: 1.0, margin: v - 1.0 }
    }
}
