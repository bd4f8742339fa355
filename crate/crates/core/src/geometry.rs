//! Exact construction of the three-bridge domain `D(ε)`.
//!
//! The fundamental region `D1` is the polygon `A1 … A10`. Its six images under
//! the dihedral group generated by the reflection `s: (x, y) ↦ (x, −y)` and the
//! rotation by `2π/3` tile `D3`; removing the slit `(−18, 0)–(−16, 0)` yields `D`.
//! Every query that is invariant under the group is answered on the canonical
//! representative of a point, i.e. its image in the closed sector of polar
//! angle `[0, π/3]`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coincidence tolerance for points and boundary membership.
pub const POINT_TOL: f64 = 1e-12;

const HALF_SQRT3: f64 = 0.866_025_403_784_438_6;

/// `(cos, sin)` of `k·π/3`, k = 0..6, with exact rational/√3 values.
const RAY_DIRS: [(f64, f64); 6] = [
    (1.0, 0.0),
    (0.5, HALF_SQRT3),
    (-0.5, HALF_SQRT3),
    (-1.0, 0.0),
    (-0.5, -HALF_SQRT3),
    (0.5, -HALF_SQRT3),
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    /// Point at distance `r` on the ray of polar angle `k·π/3`.
    pub fn on_ray(k: usize, r: f64) -> Self {
        let (c, s) = RAY_DIRS[k % 6];
        Point2::new(r * c, r * s)
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, o: Point2, t: f64) -> Point2 {
        Point2::new(self.x + t * (o.x - self.x), self.y + t * (o.y - self.y))
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

impl fmt::Display for Point2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Distance from `p` to the closed segment `ab`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a.lerp(b, t))
}

/// Nearest point of the closed segment `ab` to `p`.
pub fn closest_on_segment(p: Point2, a: Point2, b: Point2) -> Point2 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return a;
    }
    a.lerp(b, ((p - a).dot(ab) / len2).clamp(0.0, 1.0))
}

/// Parameter `t ∈ [0, 1]` along `pq` where it meets segment `ab`, if it does.
pub fn segment_intersection(p: Point2, q: Point2, a: Point2, b: Point2) -> Option<f64> {
    let r = q - p;
    let s = b - a;
    let denom = r.cross(s);
    if denom == 0.0 {
        return None;
    }
    let ap = a - p;
    let t = ap.cross(s) / denom;
    let u = ap.cross(r) / denom;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

/// Element of the six-element dihedral group: reflect across the horizontal
/// axis first (when `reflect`), then rotate by `rotation_index · 2π/3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SymmetryElement {
    pub rotation_index: u8,
    pub reflect: bool,
}

impl SymmetryElement {
    pub const IDENTITY: SymmetryElement = SymmetryElement { rotation_index: 0, reflect: false };

    pub fn new(rotation_index: u8, reflect: bool) -> Self {
        SymmetryElement { rotation_index: rotation_index % 3, reflect }
    }

    /// All six elements in a fixed order.
    pub fn all() -> [SymmetryElement; 6] {
        [
            Self::new(0, false),
            Self::new(1, false),
            Self::new(2, false),
            Self::new(0, true),
            Self::new(1, true),
            Self::new(2, true),
        ]
    }

    pub fn apply(self, p: Point2) -> Point2 {
        let q = if self.reflect { Point2::new(p.x, -p.y) } else { p };
        match self.rotation_index {
            0 => q,
            k => {
                let (c, s) = RAY_DIRS[2 * k as usize];
                Point2::new(c * q.x - s * q.y, s * q.x + c * q.y)
            }
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(self, other: SymmetryElement) -> SymmetryElement {
        // s·R^k = R^{-k}·s
        if self.reflect {
            Self::new((3 + self.rotation_index - other.rotation_index) % 3, !other.reflect)
        } else {
            Self::new(self.rotation_index + other.rotation_index, other.reflect)
        }
    }

    pub fn inverse(self) -> SymmetryElement {
        if self.reflect {
            self
        } else {
            Self::new((3 - self.rotation_index) % 3, false)
        }
    }

    /// Index `0..6` of the ray `σ(ray_k)` for a ray of polar angle `k·π/3`.
    pub fn map_ray(self, k: usize) -> usize {
        let k = k as i64;
        let base = if self.reflect { -k } else { k };
        (base + 2 * self.rotation_index as i64).rem_euclid(6) as usize
    }
}

/// Distinct images of `p` under the group, duplicates merged within [`POINT_TOL`].
pub fn orbit(p: Point2) -> Vec<Point2> {
    let mut out: Vec<Point2> = Vec::with_capacity(6);
    for g in SymmetryElement::all() {
        let q = g.apply(p);
        if !out.iter().any(|o| o.dist(q) <= POINT_TOL) {
            out.push(q);
        }
    }
    out
}

/// Returns `(σ, q)` with `q = σ⁻¹(p)` in the closed sector of angle `[0, π/3]`,
/// so that `p = σ(q)`.
pub fn canonicalize(p: Point2) -> (SymmetryElement, Point2) {
    let theta = p.y.atan2(p.x);
    let sector = ((theta / (PI / 3.0)).floor() as i64).rem_euclid(6) as u8;
    let m = sector / 2;
    // even sectors are rotations of the fundamental one, odd sectors reflections
    let g = if sector % 2 == 0 {
        SymmetryElement::new(m, false)
    } else {
        SymmetryElement::new(m + 1, true)
    };
    let mut q = g.inverse().apply(p);
    if q.y < 0.0 && q.y > -POINT_TOL {
        q.y = 0.0;
    }
    (g, q)
}

/// Parameters of `D(ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub epsilon: f64,
    pub outer_x: f64,
    pub slit: [Point2; 2],
}

impl DomainSpec {
    pub const DEFAULT_OUTER_X: f64 = 235.0;
    pub const MAX_EPSILON: f64 = 1.0 / 200.0;
    pub const LEMMA1_MAX_EPSILON: f64 = 1.0 / 1600.0;

    pub fn new(epsilon: f64) -> Result<Self> {
        Self::with_outer_x(epsilon, Self::DEFAULT_OUTER_X)
    }

    pub fn with_outer_x(epsilon: f64, outer_x: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < Self::MAX_EPSILON) {
            return Err(Error::param(format!("epsilon must be < 1/200 and > 0 (got {epsilon})")));
        }
        if !(outer_x.is_finite() && outer_x > 18.0) {
            return Err(Error::param(format!("outer_x must exceed 18 (got {outer_x})")));
        }
        // rotated images of A9 and A8 on the 180° ray
        let slit = [Point2::on_ray(3, 18.0), Point2::on_ray(3, 16.0)];
        Ok(DomainSpec { epsilon, outer_x, slit })
    }

    pub fn validate(&self) -> Result<()> {
        Self::with_outer_x(self.epsilon, self.outer_x).map(|_| ())
    }

    /// Radius of the open disc `A = B(0, 1/10)` around the expected hot spot.
    pub const HOT_DISC_RADIUS: f64 = 0.1;
}

/// The vertices `A1 … A10` of the fundamental region.
pub fn vertices(spec: &DomainSpec) -> Result<[Point2; 10]> {
    spec.validate()?;
    Ok(raw_vertices(spec))
}

fn raw_vertices(spec: &DomainSpec) -> [Point2; 10] {
    [
        Point2::ORIGIN,
        Point2::on_ray(1, 2.0 / 7.0),
        Point2::new(5.0, 0.01),
        Point2::new(5.5, 0.005),
        Point2::new(6.0, spec.epsilon),
        Point2::new(6.5, 0.005),
        Point2::new(7.0, 0.01),
        Point2::on_ray(1, 16.0),
        Point2::on_ray(1, 18.0),
        Point2::new(spec.outer_x, 0.0),
    ]
}

/// Index of the edge `A_{j+1} → A_{j+2}` (0-based `j`) of `D1` that lies on a
/// symmetry axis rather than on `∂D`.
pub fn d1_seam_edge(j: usize) -> Option<usize> {
    match j {
        0 | 7 => Some(1), // on the 60° ray
        9 => Some(0),     // on the x-axis
        _ => None,
    }
}

/// Closed polygonal domain with holes and an optional slit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonWithSlit {
    /// Counterclockwise outer boundary (no repeated closing vertex).
    pub outer_loop: Vec<Point2>,
    /// Clockwise hole boundaries.
    pub hole_loops: Vec<Vec<Point2>>,
    pub slit: Option<[Point2; 2]>,
    /// Set when this polygon is `D(ε)`; enables the symmetric meshing path.
    pub spec: Option<DomainSpec>,
}

impl PolygonWithSlit {
    pub fn simple(outer_loop: Vec<Point2>) -> Self {
        PolygonWithSlit { outer_loop, hole_loops: Vec::new(), slit: None, spec: None }
    }

    /// All loops, outer first.
    pub fn loops(&self) -> impl Iterator<Item = &Vec<Point2>> {
        std::iter::once(&self.outer_loop).chain(self.hole_loops.iter())
    }

    /// Every boundary segment, including the slit.
    pub fn segments(&self) -> Vec<(Point2, Point2)> {
        let mut out = Vec::new();
        for lp in self.loops() {
            for i in 0..lp.len() {
                out.push((lp[i], lp[(i + 1) % lp.len()]));
            }
        }
        if let Some([a, b]) = self.slit {
            out.push((a, b));
        }
        out
    }

    /// Signed area of the region (outer minus holes).
    pub fn area(&self) -> f64 {
        self.loops().map(|l| signed_area(l)).sum()
    }

    /// Whether `p` lies in the closure of the domain (slit points included).
    pub fn contains(&self, p: Point2) -> bool {
        if self.on_boundary(p) {
            return true;
        }
        point_in_loop(&self.outer_loop, p) && !self.hole_loops.iter().any(|h| point_in_loop(h, p))
    }

    /// Whether `p` lies in the open domain (boundary and slit excluded).
    pub fn contains_open(&self, p: Point2) -> bool {
        !self.on_boundary(p)
            && point_in_loop(&self.outer_loop, p)
            && !self.hole_loops.iter().any(|h| point_in_loop(h, p))
    }

    pub fn on_boundary(&self, p: Point2) -> bool {
        self.segments()
            .iter()
            .any(|&(a, b)| point_segment_distance(p, a, b) <= POINT_TOL)
    }

    pub fn boundary_distance(&self, p: Point2) -> f64 {
        self.segments()
            .iter()
            .map(|&(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn signed_area(lp: &[Point2]) -> f64 {
    let n = lp.len();
    (0..n).map(|i| lp[i].cross(lp[(i + 1) % n])).sum::<f64>() * 0.5
}

/// Crossing-number point-in-polygon test (interior only; boundary undefined).
pub fn point_in_loop(lp: &[Point2], p: Point2) -> bool {
    let n = lp.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (lp[i], lp[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Whether a closed loop is simple, by exhaustive pairwise segment tests.
pub fn loop_is_simple(lp: &[Point2]) -> bool {
    let n = lp.len();
    for i in 0..n {
        let (a, b) = (lp[i], lp[(i + 1) % n]);
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (lp[j], lp[(j + 1) % n]);
            if segments_touch(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Closed segments `ab` and `cd` share a point (robust orientation tests).
pub fn segments_touch(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    let on = |p: Point2, q: Point2, r: Point2, o: f64| {
        o == 0.0
            && r.x >= p.x.min(q.x)
            && r.x <= p.x.max(q.x)
            && r.y >= p.y.min(q.y)
            && r.y <= p.y.max(q.y)
    };
    on(a, b, c, o1) || on(a, b, d, o2) || on(c, d, a, o3) || on(c, d, b, o4)
}

/// Robust orientation: positive when `a, b, c` turn counterclockwise.
pub fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    robust::orient2d(
        robust::Coord { x: a.x, y: a.y },
        robust::Coord { x: b.x, y: b.y },
        robust::Coord { x: c.x, y: c.y },
    )
}

/// Builds `D(ε)`: one outer loop, three holes and the slit.
pub fn build_domain(spec: &DomainSpec) -> Result<PolygonWithSlit> {
    let a = vertices(spec)?;
    // outer loop: A10 images on the even rays, A9 images on the odd rays
    let r9 = 18.0;
    let outer_loop: Vec<Point2> = (0..6)
        .map(|k| Point2::on_ray(k, if k % 2 == 0 { spec.outer_x } else { r9 }))
        .collect();

    // hole around the 60° ray: lower chain A2..A8 and its mirror across the ray
    let s60 = SymmetryElement::new(1, true);
    let mut base_hole = vec![a[1]];
    base_hole.extend((2..7).map(|i| s60.apply(a[i])));
    base_hole.push(a[7]);
    base_hole.extend((2..7).rev().map(|i| a[i]));
    let hole_loops: Vec<Vec<Point2>> = (0..3u8)
        .map(|k| {
            let rot = SymmetryElement::new(k, false);
            base_hole
                .iter()
                .enumerate()
                .map(|(i, &p)| match i {
                    0 => Point2::on_ray(rot.map_ray(1), 2.0 / 7.0),
                    6 => Point2::on_ray(rot.map_ray(1), 16.0),
                    _ => rot.apply(p),
                })
                .collect()
        })
        .collect();

    let poly = PolygonWithSlit {
        outer_loop,
        hole_loops,
        slit: Some(spec.slit),
        spec: Some(*spec),
    };
    for lp in poly.loops() {
        if !loop_is_simple(lp) {
            return Err(Error::Construction("boundary loop self-intersects".into()));
        }
    }
    Ok(poly)
}

/// `D1` as a simple counterclockwise polygon (the raw vertex order is clockwise).
pub fn fundamental_polygon(spec: &DomainSpec) -> Result<Vec<Point2>> {
    let a = vertices(spec)?;
    let mut lp: Vec<Point2> = a.to_vec();
    lp.reverse();
    Ok(lp)
}

/// Whether the canonical point `q` (angle in `[0, π/3]`) lies in the closure of `D1`.
fn in_closed_d1(spec: &DomainSpec, q: Point2) -> bool {
    let a = raw_vertices(spec);
    let n = a.len();
    for i in 0..n {
        if point_segment_distance(q, a[i], a[(i + 1) % n]) <= POINT_TOL {
            return true;
        }
    }
    point_in_loop(&a, q)
}

/// Whether `p` lies in the closure of `D`, counting both slit banks as boundary.
pub fn domain_closure_contains(spec: &DomainSpec, p: Point2) -> bool {
    in_closed_d1(spec, canonicalize(p).1)
}

/// Whether `p` lies in the closure of `D` minus the slit interior.
pub fn domain_contains(spec: &DomainSpec, p: Point2) -> bool {
    let (_, q) = canonicalize(p);
    if !in_closed_d1(spec, q) {
        return false;
    }
    let [s0, s1] = spec.slit;
    let on_slit = point_segment_distance(p, s0, s1) <= POINT_TOL;
    !on_slit || p.dist(s0) <= POINT_TOL || p.dist(s1) <= POINT_TOL
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionLabel {
    Inner,
    Exterior,
    BridgeInner,
    BridgeOuter,
    OutsideDomain,
}

/// Abscissae of `K3`, `K5`, `K7` in the canonical sector.
const K3_X: f64 = 5.0;
const K5_X: f64 = 6.0;
const K7_X: f64 = 7.0;

pub fn region_of(spec: &DomainSpec, p: Point2) -> RegionLabel {
    if !domain_contains(spec, p) {
        return RegionLabel::OutsideDomain;
    }
    let (_, q) = canonicalize(p);
    if q.x < K3_X {
        RegionLabel::Inner
    } else if q.x < K5_X {
        RegionLabel::BridgeInner
    } else if q.x <= K7_X {
        RegionLabel::BridgeOuter
    } else {
        RegionLabel::Exterior
    }
}

/// `K_j = A_j s(A_j)` for `j ∈ 3..=7`.
pub fn k_segment(spec: &DomainSpec, j: usize) -> Result<(Point2, Point2)> {
    if !(3..=7).contains(&j) {
        return Err(Error::param(format!("K_j is defined for j in 3..=7 (got {j})")));
    }
    let a = vertices(spec)?[j - 1];
    Ok((a, Point2::new(a.x, -a.y)))
}

/// All group images of `K_j` (three distinct segments).
pub fn k_segment_images(spec: &DomainSpec, j: usize) -> Result<Vec<(Point2, Point2)>> {
    let (a, b) = k_segment(spec, j)?;
    Ok((0..3u8)
        .map(|k| {
            let g = SymmetryElement::new(k, false);
            (g.apply(a), g.apply(b))
        })
        .collect())
}

/// The neck centres `A11` and `A12`.
pub fn neck_centers(spec: &DomainSpec) -> (Point2, Point2) {
    let e = spec.epsilon;
    let a11 = Point2::new(6.0 + 100.0 * e / (1.0 - 200.0 * e), 0.0);
    // line A5 A6 meets y = 0
    let a5 = Point2::new(6.0, e);
    let a6 = Point2::new(6.5, 0.005);
    let t = a5.y / (a5.y - a6.y);
    let a12 = Point2::new(a5.x + t * (a6.x - a5.x), 0.0);
    (a11, a12)
}

/// Test functions of the small-eigenvalue bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunctionKind {
    /// Equal to one on the hub, log-ramped to zero inside each neck.
    F1,
    /// Equal to one on the exterior, log-ramped to zero inside each neck.
    F2,
    /// `f1 / ∫f1 − f2 / ∫f2` with caller-supplied integrals.
    F { int_f1: f64, int_f2: f64 },
}

/// Evaluates the group-invariant test function at `p`.
pub fn test_function(spec: &DomainSpec, kind: TestFunctionKind, p: Point2) -> Result<f64> {
    spec.validate()?;
    let e = spec.epsilon;
    if e >= DomainSpec::LEMMA1_MAX_EPSILON {
        return Err(Error::param(format!("test functions require epsilon < 1/1600 (got {e})")));
    }
    // slit banks are boundary points where both test functions are continuous
    if !domain_closure_contains(spec, p) {
        return Err(Error::OutsideDomain { x: p.x, y: p.y });
    }
    let (_, q) = canonicalize(p);
    let (a11, a12) = neck_centers(spec);
    let r = q.norm();
    let inner = 400.0 * e;
    let log_span = (1.0 / (800.0 * e)).ln();

    let f1 = || {
        let d1 = q.dist(a11);
        if r > 6.0 || d1 < inner {
            0.0
        } else if d1 <= 0.5 {
            (d1 / inner).ln() / log_span
        } else {
            assert!(r < 6.0, "f1: |z| = 6 with d1 > 1/2 is unreachable in D");
            1.0
        }
    };
    let f2 = || {
        let d2 = q.dist(a12);
        if r < 6.0 || d2 < inner {
            0.0
        } else if d2 <= 0.5 {
            (d2 / inner).ln() / log_span
        } else {
            assert!(r > 6.0, "f2: |z| = 6 with d2 > 1/2 is unreachable in D");
            1.0
        }
    };
    Ok(match kind {
        TestFunctionKind::F1 => f1(),
        TestFunctionKind::F2 => f2(),
        TestFunctionKind::F { int_f1, int_f2 } => {
            if int_f1 <= 0.0 || int_f2 <= 0.0 {
                return Err(Error::param("normalising integrals must be positive"));
            }
            f1() / int_f1 - f2() / int_f2
        }
    })
}

/// Minimum and maximum direction angle of the edges `A_j → A_{j+1}`, j = 1..9.
pub fn angle_bounds(spec: &DomainSpec) -> Result<(f64, f64)> {
    let a = vertices(spec)?;
    let angles = a.windows(2).map(|w| {
        let d = w[1] - w[0];
        d.y.atan2(d.x)
    });
    let (lo, hi) = angles.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
    Ok((lo, hi))
}

/// The open cone of admissible monotonicity directions `(α2 − π/2, α1 + π/2)`.
pub fn monotonicity_cone(spec: &DomainSpec) -> Result<(f64, f64)> {
    let (a1, a2) = angle_bounds(spec)?;
    Ok((a2 - PI / 2.0, a1 + PI / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec() -> DomainSpec {
        DomainSpec::new(1.0 / 400.0).unwrap()
    }

    #[test]
    fn vertex_table() {
        let a = vertices(&spec()).unwrap();
        assert_eq!(a[4], Point2::new(6.0, 0.0025));
        assert_eq!(a[0], Point2::ORIGIN);
        assert_eq!(a[9], Point2::new(235.0, 0.0));
        assert_abs_diff_eq!(a[7].norm(), 16.0, epsilon = 1e-13);
        assert_abs_diff_eq!(a[8].norm(), 18.0, epsilon = 1e-13);
    }

    #[test]
    fn rejects_bad_epsilon() {
        assert!(DomainSpec::new(0.01).is_err());
        assert!(DomainSpec::new(0.0).is_err());
        assert!(DomainSpec::new(1.0 / 200.0).is_err());
        let msg = DomainSpec::new(0.01).unwrap_err().to_string();
        assert!(msg.contains("epsilon must be < 1/200"), "{msg}");
    }

    #[test]
    fn symmetry_examples() {
        let r = SymmetryElement::new(1, false).apply(Point2::new(1.0, 0.0));
        assert_abs_diff_eq!(r.x, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r.y, 3f64.sqrt() / 2.0, epsilon = 1e-15);
        let s = SymmetryElement::new(0, true).apply(Point2::new(2.0, 3.0));
        assert_eq!(s, Point2::new(2.0, -3.0));
        let p = Point2::new(0.3, -7.0);
        assert_eq!(SymmetryElement::IDENTITY.apply(p), p);
    }

    #[test]
    fn group_axioms_exhaustive() {
        let all = SymmetryElement::all();
        let probe = Point2::new(0.37, 0.11);
        for a in all {
            assert!(all.contains(&a.inverse()));
            assert_eq!(a.compose(a.inverse()), SymmetryElement::IDENTITY);
            for b in all {
                let ab = a.compose(b);
                assert!(all.contains(&ab));
                assert!(ab.apply(probe).dist(a.apply(b.apply(probe))) < 1e-14);
                for c in all {
                    assert_eq!(a.compose(b).compose(c), a.compose(b.compose(c)));
                }
            }
        }
        let images: Vec<Point2> = all.iter().map(|g| g.apply(probe)).collect();
        for i in 0..6 {
            for j in i + 1..6 {
                assert!(images[i].dist(images[j]) > 1e-3);
            }
        }
    }

    #[test]
    fn ray_mapping_matches_geometry() {
        for g in SymmetryElement::all() {
            for k in 0..6 {
                let p = g.apply(Point2::on_ray(k, 1.0));
                assert!(p.dist(Point2::on_ray(g.map_ray(k), 1.0)) < 1e-14);
            }
        }
    }

    #[test]
    fn orbit_sizes() {
        assert_eq!(orbit(Point2::ORIGIN).len(), 1);
        assert_eq!(orbit(Point2::new(5.0, 0.01)).len(), 6);
        assert_eq!(orbit(Point2::new(1.0, 0.0)).len(), 3);
    }

    #[test]
    fn canonical_representative_in_sector() {
        for i in 0..400 {
            let t = i as f64 * 0.0571;
            let p = Point2::new(3.0 * t.cos(), 3.0 * t.sin());
            let (g, q) = canonicalize(p);
            let ang = q.y.atan2(q.x);
            assert!((-1e-12..=PI / 3.0 + 1e-12).contains(&ang), "angle {ang}");
            assert!(g.apply(q).dist(p) < 1e-12);
        }
    }

    #[test]
    fn domain_topology() {
        let d = build_domain(&spec()).unwrap();
        assert_eq!(d.hole_loops.len(), 3);
        assert!(d.slit.is_some());
        assert!(signed_area(&d.outer_loop) > 0.0);
        for h in &d.hole_loops {
            assert!(signed_area(h) < 0.0);
            assert!(loop_is_simple(h));
        }
        let [s0, s1] = d.slit.unwrap();
        assert_eq!(s0, Point2::new(-18.0, 0.0));
        assert_eq!(s1, Point2::new(-16.0, 0.0));
    }

    #[test]
    fn slit_endpoints_on_loops() {
        for e in [1.0 / 250.0, 1.0 / 500.0, 1.0 / 1000.0, 1.0 / 3200.0] {
            let s = DomainSpec::new(e).unwrap();
            let d = build_domain(&s).unwrap();
            let [s0, s1] = d.slit.unwrap();
            assert!(d.outer_loop.iter().any(|p| p.dist(s0) <= 1e-12));
            assert!(d.hole_loops.iter().any(|h| h.iter().any(|p| p.dist(s1) <= 1e-12)));
            for lp in d.loops() {
                assert!(loop_is_simple(lp));
            }
            assert!(d.contains_open(Point2::ORIGIN));
        }
    }

    #[test]
    fn regions() {
        let s = spec();
        assert_eq!(region_of(&s, Point2::ORIGIN), RegionLabel::Inner);
        assert_eq!(region_of(&s, Point2::new(5.75, 0.0)), RegionLabel::BridgeInner);
        assert_eq!(region_of(&s, Point2::new(6.25, 0.0)), RegionLabel::BridgeOuter);
        assert_eq!(region_of(&s, Point2::new(100.0, 0.5)), RegionLabel::Exterior);
        assert_eq!(region_of(&s, Point2::new(6.0, 0.01)), RegionLabel::OutsideDomain);
        assert_eq!(region_of(&s, Point2::new(300.0, 0.0)), RegionLabel::OutsideDomain);
        assert_eq!(region_of(&s, Point2::new(-17.0, 0.0)), RegionLabel::OutsideDomain);
    }

    #[test]
    fn region_agrees_with_polygon() {
        let s = spec();
        let d = build_domain(&s).unwrap();
        let probes = [
            Point2::new(100.0, 0.5),
            Point2::new(-50.0, 60.0),
            Point2::new(0.0, 0.2),
            Point2::new(3.0, 3.0),
            Point2::new(-3.0, 0.0),
            Point2::new(17.0, 0.0),
        ];
        for p in probes {
            let inside = region_of(&s, p) != RegionLabel::OutsideDomain;
            assert_eq!(inside, d.contains_open(p), "{p}");
        }
    }

    #[test]
    fn k_segments() {
        let (a, b) = k_segment(&spec(), 5).unwrap();
        assert_eq!((a, b), (Point2::new(6.0, 0.0025), Point2::new(6.0, -0.0025)));
        let (a, b) = k_segment(&spec(), 3).unwrap();
        assert_eq!((a, b), (Point2::new(5.0, 0.01), Point2::new(5.0, -0.01)));
        let (a, b) = k_segment(&spec(), 4).unwrap();
        assert_eq!((a, b), (Point2::new(5.5, 0.005), Point2::new(5.5, -0.005)));
        assert!(k_segment(&spec(), 2).is_err());
        assert!(k_segment(&spec(), 8).is_err());
    }

    #[test]
    fn neck_centres_at_1_3200() {
        let s = DomainSpec::new(1.0 / 3200.0).unwrap();
        let (a11, a12) = neck_centers(&s);
        assert_abs_diff_eq!(a11.x, 6.0 + 1.0 / 30.0, epsilon = 1e-14);
        assert_abs_diff_eq!(a12.x, 6.0 - 1.0 / 30.0, epsilon = 1e-14);
        let tiny = DomainSpec::new(1e-12).unwrap();
        let (a11, a12) = neck_centers(&tiny);
        assert_abs_diff_eq!(a11.x, 6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(a12.x, 6.0, epsilon = 1e-9);
    }

    #[test]
    fn test_function_values() {
        let s = DomainSpec::new(1.0 / 3200.0).unwrap();
        let (a11, _) = neck_centers(&s);
        assert_eq!(test_function(&s, TestFunctionKind::F1, Point2::ORIGIN).unwrap(), 1.0);
        assert_eq!(test_function(&s, TestFunctionKind::F2, Point2::ORIGIN).unwrap(), 0.0);
        let p = Point2::new(a11.x - 0.5, 0.0);
        assert_abs_diff_eq!(test_function(&s, TestFunctionKind::F1, p).unwrap(), 1.0, epsilon = 1e-12);
        let p = Point2::new(a11.x - 0.1, 0.0);
        assert_eq!(test_function(&s, TestFunctionKind::F1, p).unwrap(), 0.0);
        assert_eq!(test_function(&s, TestFunctionKind::F2, Point2::new(100.0, 0.0)).unwrap(), 1.0);
        assert!(test_function(&spec(), TestFunctionKind::F1, Point2::ORIGIN).is_err());
        assert!(test_function(&s, TestFunctionKind::F1, Point2::new(400.0, 0.0)).is_err());
    }

    #[test]
    fn angle_bounds_default() {
        let (a1, a2) = angle_bounds(&spec()).unwrap();
        assert_abs_diff_eq!(a2, (8.0 * 3f64.sqrt() - 0.01).atan(), epsilon = 1e-15);
        assert_abs_diff_eq!(a2, 1.498_7, epsilon = 1e-4);
        assert_abs_diff_eq!(a1, (-9.0 * 3f64.sqrt()).atan2(226.0), epsilon = 1e-15);
        assert_abs_diff_eq!(a1, -0.068_9, epsilon = 1e-4);
        assert!(a2 - a1 < PI / 2.0);
    }
}
