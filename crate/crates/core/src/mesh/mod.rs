//! Graded conforming triangulations, symmetric meshing of `D(ε)` and
//! topology checks.

mod locate;
mod refine;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    self, canonicalize, point_in_loop, point_segment_distance, DomainSpec, Point2, PolygonWithSlit,
    RegionLabel, SymmetryElement,
};
pub use locate::barycentric;
use locate::{Bvh, EDGE_TOL};
use refine::{Pslg, RefineParams};

pub const DEFAULT_MIN_ANGLE: f64 = 20.0;
const MAX_POINTS: usize = 2_000_000;

/// Target edge lengths.
///
/// Away from the necks the size grows linearly with slope
/// `grading_ratio - 1` from `h_neck` at the narrowest point of each neck and
/// from `h_hub` at the origin, capped by `h_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeField {
    pub h_max: f64,
    pub h_neck: f64,
    pub h_hub: f64,
    pub grading_ratio: f64,
}

impl SizeField {
    pub fn uniform(h: f64) -> Self {
        SizeField { h_max: h, h_neck: h, h_hub: h, grading_ratio: 2.0 }
    }

    /// Default grading for `D(ε)`.
    pub fn for_domain(spec: &DomainSpec) -> Self {
        SizeField { h_max: 2.0, h_neck: spec.epsilon / 3.0, h_hub: 0.02, grading_ratio: 2.0 }
    }

    /// All lengths divided by `2^level`.
    pub fn refined(&self, level: u32) -> Self {
        let s = 0.5f64.powi(level as i32);
        SizeField {
            h_max: self.h_max * s,
            h_neck: self.h_neck * s,
            h_hub: self.h_hub * s,
            grading_ratio: self.grading_ratio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !(ok(self.h_max) && ok(self.h_neck) && ok(self.h_hub)) {
            return Err(Error::param("mesh sizes must be positive and finite"));
        }
        if self.h_neck > self.h_max {
            return Err(Error::param(format!(
                "h_neck ({}) must not exceed h_max ({})",
                self.h_neck, self.h_max
            )));
        }
        if !(1.2..=2.5).contains(&self.grading_ratio) {
            return Err(Error::param(format!(
                "grading_ratio must lie in [1.2, 2.5] (got {})",
                self.grading_ratio
            )));
        }
        Ok(())
    }

    fn slope(&self) -> f64 {
        self.grading_ratio - 1.0
    }

    /// Size at a canonical point of `D1`.
    pub fn at(&self, spec: Option<&DomainSpec>, p: Point2) -> f64 {
        let Some(spec) = spec else { return self.h_max };
        let (_, q) = canonicalize(p);
        let neck = point_segment_distance(q, Point2::new(6.0, 0.0), Point2::new(6.0, spec.epsilon));
        let hub = q.norm();
        let g = self.slope();
        self.h_max.min(self.h_neck + g * neck).min(self.h_hub + g * hub)
    }
}

/// Links each node of a replicated mesh to its `D1` source.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryMap {
    /// Group element (index into [`SymmetryElement::all`]) and `D1` node of each node.
    pub source: Vec<(usize, usize)>,
    /// `node_of[g][j]`: node carrying the image of `D1` node `j` under element `g`.
    pub node_of: Vec<Vec<usize>>,
}

impl SymmetryMap {
    /// Node holding `g(x_i)`.
    pub fn image(&self, g: SymmetryElement, i: usize) -> usize {
        let all = SymmetryElement::all();
        let (c, j) = self.source[i];
        let h = g.compose(all[c]);
        let k = all.iter().position(|&e| e == h).expect("group is closed");
        self.node_of[k][j]
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub nodes: Vec<Point2>,
    /// Counterclockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    /// Boundary edges with the id of the boundary component they belong to.
    pub boundary_edges: Vec<([usize; 2], usize)>,
    /// Slit bank pairs, both directions.
    pub slit_twins: BTreeMap<usize, usize>,
    /// Triangles allowed below the angle bound because they sit in a small input corner.
    pub exempt: Vec<bool>,
    pub size: SizeField,
    pub min_angle_deg: f64,
    pub spec: Option<DomainSpec>,
    pub symmetry: Option<SymmetryMap>,
    bvh: Bvh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologyReport {
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    pub boundary_components: usize,
    pub euler_characteristic: i64,
    pub min_angle_deg: f64,
    /// Minimum angle over triangles not exempted at small input corners.
    pub min_angle_regular_deg: f64,
    pub exempt_triangles: usize,
    pub min_edge: f64,
    pub max_edge: f64,
    /// Shortest and longest edge with both ends in the bridges (only for `D(ε)`).
    pub min_edge_in_bridges: Option<f64>,
    pub max_edge_in_bridges: Option<f64>,
    pub area: f64,
}

/// Triangulates `domain`. A `D(ε)` instance is meshed through its fundamental
/// region and replicated; any other polygon is meshed directly.
pub fn triangulate(domain: &PolygonWithSlit, size: &SizeField, min_angle_deg: f64) -> Result<Mesh> {
    size.validate()?;
    if !(min_angle_deg > 0.0 && min_angle_deg <= 30.0) {
        return Err(Error::param(format!("min_angle must lie in (0, 30] degrees (got {min_angle_deg})")));
    }
    match domain.spec {
        Some(spec) => triangulate_symmetric(&spec, size, min_angle_deg),
        None => triangulate_plain(domain, size, min_angle_deg),
    }
}

fn triangulate_plain(domain: &PolygonWithSlit, size: &SizeField, min_angle_deg: f64) -> Result<Mesh> {
    if domain.slit.is_some() {
        return Err(Error::Construction("slits are only supported on D(ε) instances".into()));
    }
    let mut points = Vec::new();
    let mut segments = Vec::new();
    for lp in domain.loops() {
        if lp.len() < 3 || !geometry::loop_is_simple(lp) {
            return Err(Error::Construction("degenerate boundary loop".into()));
        }
        let base = points.len();
        points.extend_from_slice(lp);
        for i in 0..lp.len() {
            segments.push([base + i, base + (i + 1) % lp.len()]);
        }
    }
    let h = size.h_max;
    let sizef = move |_p: Point2| h;
    let inside = |p: Point2| domain.contains_open(p);
    let r = refine::refine(
        &Pslg { points, segments },
        &RefineParams { min_angle_deg, size: &sizef, inside: &inside, max_points: MAX_POINTS },
    )?;
    Ok(Mesh::assemble(r.points, r.triangles, BTreeMap::new(), r.exempt, *size, min_angle_deg, None, None))
}

fn triangulate_symmetric(spec: &DomainSpec, size: &SizeField, min_angle_deg: f64) -> Result<Mesh> {
    spec.validate()?;
    let mut size = *size;
    size.h_neck = size.h_neck.min(spec.epsilon / 3.0);
    size.h_hub = size.h_hub.min(size.h_max);
    let a = geometry::vertices(spec)?;
    // The seam A8A9 becomes the slit on one ray; a midpoint guarantees it
    // carries interior nodes to duplicate.
    let mut points = a.to_vec();
    points.push(Point2::on_ray(1, 17.0));
    let mut segments: Vec<[usize; 2]> = (0..10).map(|i| [i, (i + 1) % 10]).collect();
    segments[7] = [7, 10];
    segments.push([10, 8]);
    let sizef = |p: Point2| size.at(Some(spec), p);
    let inside = |p: Point2| point_in_loop(&a, p);
    let d1 = refine::refine(
        &Pslg { points, segments },
        &RefineParams { min_angle_deg, size: &sizef, inside: &inside, max_points: MAX_POINTS },
    )?;

    #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
    enum Key {
        Origin,
        Seam(usize, usize),
        Own(usize, usize),
    }
    // Seam membership of each D1 node: the ray it lies on and its radius.
    let seam: Vec<Option<(usize, f64)>> = (0..d1.points.len())
        .map(|i| {
            let p = d1.points[i];
            let on0 = matches!(d1.input_index[i], Some(9)) || d1.segment_of[i] == Some(9);
            let on1 = matches!(d1.input_index[i], Some(1 | 7 | 8 | 10))
                || matches!(d1.segment_of[i], Some(0 | 7 | 10));
            if d1.input_index[i] == Some(0) {
                Some((usize::MAX, 0.0))
            } else if on0 {
                Some((0, p.x))
            } else if on1 {
                Some((1, p.norm()))
            } else {
                None
            }
        })
        .collect();
    // Slit nodes, endpoints included: the two banks meet only at the endpoints,
    // so sharing them would leave pinched vertices.
    let on_slit = |i: usize| matches!(d1.segment_of[i], Some(7 | 10)) || matches!(d1.input_index[i], Some(7 | 8 | 10));

    let all = SymmetryElement::all();
    let mut index: HashMap<Key, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut source = Vec::new();
    let mut node_of = vec![vec![0usize; d1.points.len()]; 6];
    let mut bank_side: Vec<(usize, usize, usize)> = Vec::new();
    for (c, g) in all.iter().enumerate() {
        for (j, &p) in d1.points.iter().enumerate() {
            let (key, pos) = match seam[j] {
                Some((usize::MAX, _)) => (Key::Origin, Point2::ORIGIN),
                Some((ray, r)) => {
                    let k = g.map_ray(ray);
                    if k == 3 && on_slit(j) {
                        (Key::Own(c, j), Point2::on_ray(k, r))
                    } else {
                        (Key::Seam(k, j), Point2::on_ray(k, r))
                    }
                }
                None => (Key::Own(c, j), g.apply(p)),
            };
            let id = *index.entry(key).or_insert_with(|| {
                nodes.push(pos);
                source.push((c, j));
                nodes.len() - 1
            });
            node_of[c][j] = id;
            if let Key::Own(_, _) = key {
                if seam[j].is_some() {
                    bank_side.push((j, c, id));
                }
            }
        }
    }
    let mut triangles = Vec::with_capacity(6 * d1.triangles.len());
    let mut exempt = Vec::with_capacity(6 * d1.triangles.len());
    for (c, g) in all.iter().enumerate() {
        for (t, tri) in d1.triangles.iter().enumerate() {
            let m = tri.map(|j| node_of[c][j]);
            triangles.push(if g.reflect { [m[0], m[2], m[1]] } else { m });
            exempt.push(d1.exempt[t]);
        }
    }
    let mut slit_twins = BTreeMap::new();
    for &(j, c, id) in &bank_side {
        for &(j2, c2, id2) in &bank_side {
            if j == j2 && c != c2 {
                slit_twins.insert(id, id2);
            }
        }
    }
    Ok(Mesh::assemble(
        nodes,
        triangles,
        slit_twins,
        exempt,
        size,
        min_angle_deg,
        Some(*spec),
        Some(SymmetryMap { source, node_of }),
    ))
}

impl Mesh {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        nodes: Vec<Point2>,
        triangles: Vec<[usize; 3]>,
        slit_twins: BTreeMap<usize, usize>,
        exempt: Vec<bool>,
        size: SizeField,
        min_angle_deg: f64,
        spec: Option<DomainSpec>,
        symmetry: Option<SymmetryMap>,
    ) -> Mesh {
        let bvh = Bvh::build(&nodes, &triangles);
        let mut mesh = Mesh {
            nodes,
            triangles,
            boundary_edges: Vec::new(),
            slit_twins,
            exempt,
            size,
            min_angle_deg,
            spec,
            symmetry,
            bvh,
        };
        mesh.boundary_edges = mesh.find_boundary();
        mesh
    }

    /// Builds a mesh from raw arrays (used by fixtures and tests).
    pub fn from_raw(nodes: Vec<Point2>, triangles: Vec<[usize; 3]>) -> Result<Mesh> {
        for t in &triangles {
            if t.iter().any(|&i| i >= nodes.len()) {
                return Err(Error::Construction("triangle references a missing node".into()));
            }
            let [a, b, c] = t.map(|i| nodes[i]);
            if (b - a).cross(c - a) <= 0.0 {
                return Err(Error::Construction("triangle with non-positive area".into()));
            }
        }
        let h = max_edge(&nodes, &triangles);
        let n = triangles.len();
        Ok(Mesh::assemble(nodes, triangles, BTreeMap::new(), vec![false; n], SizeField::uniform(h), 0.0, None, None))
    }

    /// Structured `nx × ny` rectangle mesh, each cell cut along the same diagonal.
    pub fn rectangle(w: f64, h: f64, nx: usize, ny: usize) -> Result<Mesh> {
        if nx == 0 || ny == 0 || !(w > 0.0 && h > 0.0) {
            return Err(Error::param("rectangle needs positive size and cell counts"));
        }
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push(Point2::new(w * i as f64 / nx as f64, h * j as f64 / ny as f64));
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut tris = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                tris.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                tris.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Mesh::from_raw(nodes, tris)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn tri_points(&self, t: usize) -> [Point2; 3] {
        self.triangles[t].map(|i| self.nodes[i])
    }

    pub fn tri_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.tri_points(t);
        0.5 * (b - a).cross(c - a)
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.tri_area(t)).sum()
    }

    pub fn centroid(&self, t: usize) -> Point2 {
        let [a, b, c] = self.tri_points(t);
        Point2::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
    }

    /// Sorted undirected edges with the triangles using them.
    pub fn edges(&self) -> BTreeMap<(usize, usize), Vec<usize>> {
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push(t);
            }
        }
        map
    }

    fn find_boundary(&self) -> Vec<([usize; 2], usize)> {
        let mut directed: Vec<[usize; 2]> = Vec::new();
        let edges = self.edges();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                if edges[&(a.min(b), a.max(b))].len() == 1 {
                    debug_assert_eq!(edges[&(a.min(b), a.max(b))][0], t);
                    directed.push([a, b]);
                }
            }
        }
        // union-find over boundary vertices
        let mut parent: HashMap<usize, usize> = HashMap::new();
        fn find(parent: &mut HashMap<usize, usize>, x: usize) -> usize {
            let p = *parent.entry(x).or_insert(x);
            if p == x {
                return x;
            }
            let r = find(parent, p);
            parent.insert(x, r);
            r
        }
        for &[a, b] in &directed {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent.insert(ra.max(rb), ra.min(rb));
            }
        }
        let mut ids: BTreeMap<usize, usize> = BTreeMap::new();
        let mut roots = Vec::with_capacity(directed.len());
        for &[a, _] in &directed {
            roots.push(find(&mut parent, a));
        }
        let mut sorted = roots.clone();
        sorted.sort_unstable();
        sorted.dedup();
        for (k, r) in sorted.into_iter().enumerate() {
            ids.insert(r, k);
        }
        let mut out: Vec<([usize; 2], usize)> =
            directed.into_iter().zip(roots).map(|(e, r)| (e, ids[&r])).collect();
        out.sort_unstable();
        out
    }

    /// Boundary node flags.
    pub fn boundary_nodes(&self) -> Vec<bool> {
        let mut b = vec![false; self.nodes.len()];
        for &([x, y], _) in &self.boundary_edges {
            b[x] = true;
            b[y] = true;
        }
        b
    }

    /// Local mesh size at each node: the longest incident edge.
    pub fn node_sizes(&self) -> Vec<f64> {
        let mut h = vec![0.0f64; self.nodes.len()];
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let l = self.nodes[a].dist(self.nodes[b]);
                h[a] = h[a].max(l);
                h[b] = h[b].max(l);
            }
        }
        h
    }

    /// Containing triangle and barycentric coordinates. Points within `1e-12`
    /// of several triangles resolve to the lowest triangle index.
    pub fn locate(&self, p: Point2) -> Option<(usize, [f64; 3])> {
        let mut best: Option<(usize, [f64; 3])> = None;
        self.bvh.candidates(p, EDGE_TOL, |t| {
            if best.is_some_and(|(b, _)| b < t) {
                return;
            }
            let [a, b, c] = self.tri_points(t);
            let lam = barycentric(a, b, c, p);
            let area2 = (b - a).cross(c - a);
            let lens = [b.dist(c), c.dist(a), a.dist(b)];
            let inside = (0..3).all(|i| lam[i] * area2 / lens[i] >= -EDGE_TOL);
            if inside {
                let mut l = lam.map(|x| x.clamp(0.0, 1.0));
                let s: f64 = l.iter().sum();
                for x in &mut l {
                    *x /= s;
                }
                best = Some((t, l));
            }
        });
        best
    }

    pub fn topology_report(&self) -> TopologyReport {
        let edges = self.edges();
        let nb = self.boundary_edges.iter().map(|&(_, c)| c + 1).max().unwrap_or(0);
        let mut min_angle = f64::INFINITY;
        let mut min_regular = f64::INFINITY;
        let mut min_edge = f64::INFINITY;
        let mut max_edge = 0.0f64;
        for (t, tri) in self.triangles.iter().enumerate() {
            let ang = min_angle_deg(self.tri_points(t));
            min_angle = min_angle.min(ang);
            if !self.exempt[t] {
                min_regular = min_regular.min(ang);
            }
            for k in 0..3 {
                let l = self.nodes[tri[k]].dist(self.nodes[tri[(k + 1) % 3]]);
                min_edge = min_edge.min(l);
                max_edge = max_edge.max(l);
            }
        }
        let bridge_edges = self.spec.map(|spec| {
            edges
                .keys()
                .filter(|&&(a, b)| {
                    let ra = geometry::region_of(&spec, self.nodes[a]);
                    let rb = geometry::region_of(&spec, self.nodes[b]);
                    is_bridge(ra) && is_bridge(rb)
                })
                .map(|&(a, b)| self.nodes[a].dist(self.nodes[b]))
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), l| (lo.min(l), hi.max(l)))
        });
        let (v, e, f) = (self.nodes.len(), edges.len(), self.triangles.len());
        TopologyReport {
            vertices: v,
            edges: e,
            faces: f,
            boundary_components: nb,
            euler_characteristic: v as i64 - e as i64 + f as i64,
            min_angle_deg: min_angle,
            min_angle_regular_deg: min_regular,
            exempt_triangles: self.exempt.iter().filter(|&&x| x).count(),
            min_edge,
            max_edge,
            min_edge_in_bridges: bridge_edges.map(|b| b.0),
            max_edge_in_bridges: bridge_edges.map(|b| b.1),
            area: self.area(),
        }
    }

    /// Structural checks: orientation, edge manifoldness, slit banks.
    pub fn validate(&self) -> Result<()> {
        for t in 0..self.triangles.len() {
            if self.tri_area(t) <= 0.0 {
                return Err(Error::Construction(format!("triangle {t} is not counterclockwise")));
            }
        }
        for (e, ts) in self.edges() {
            if ts.len() > 2 {
                return Err(Error::Construction(format!("edge {e:?} shared by {} triangles", ts.len())));
            }
        }
        for (&a, &b) in &self.slit_twins {
            if self.slit_twins.get(&b) != Some(&a) || self.nodes[a] != self.nodes[b] {
                return Err(Error::Construction(format!("slit twins {a} and {b} are inconsistent")));
            }
        }
        Ok(())
    }
}

fn is_bridge(r: RegionLabel) -> bool {
    matches!(r, RegionLabel::BridgeInner | RegionLabel::BridgeOuter)
}

fn max_edge(nodes: &[Point2], tris: &[[usize; 3]]) -> f64 {
    tris.iter()
        .flat_map(|t| (0..3).map(move |k| nodes[t[k]].dist(nodes[t[(k + 1) % 3]])))
        .fold(0.0, f64::max)
}

/// Smallest interior angle of a triangle, in degrees.
pub fn min_angle_deg([a, b, c]: [Point2; 3]) -> f64 {
    let ang = |p: Point2, q: Point2, r: Point2| {
        let (u, v) = (q - p, r - p);
        u.cross(v).abs().atan2(u.dot(v))
    };
    ang(a, b, c).min(ang(b, c, a)).min(ang(c, a, b)).to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rectangle_fixture() {
        let m = Mesh::rectangle(2.0, 1.0, 4, 2).unwrap();
        let r = m.topology_report();
        assert_eq!((r.vertices, r.faces, r.edges), (15, 16, 30));
        assert_eq!(r.euler_characteristic, 1);
        assert!((m.area() - 2.0).abs() < 1e-15);
        assert!((r.min_angle_deg - 45.0).abs() < 1e-9);
    }

    #[test]
    fn size_field_grades() {
        let spec = DomainSpec::new(1.0 / 3200.0).unwrap();
        let s = SizeField::for_domain(&spec);
        assert!((s.at(Some(&spec), Point2::new(6.0, 0.0)) - spec.epsilon / 3.0).abs() < 1e-15);
        assert!((s.at(Some(&spec), Point2::ORIGIN) - 0.02).abs() < 1e-15);
        assert_eq!(s.at(Some(&spec), Point2::new(200.0, 1.0)), 2.0);
        let g = SymmetryElement::new(2, true);
        let p = Point2::new(6.2, 0.001);
        assert!((s.at(Some(&spec), g.apply(p)) - s.at(Some(&spec), p)).abs() < 1e-12);
    }

    #[test]
    fn size_field_rejects_bad_ratio() {
        let mut s = SizeField::uniform(0.1);
        s.grading_ratio = 3.0;
        assert!(s.validate().is_err());
        s.grading_ratio = 2.0;
        s.h_neck = 0.2;
        assert!(s.validate().is_err());
    }
}
