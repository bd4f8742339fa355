//! Constrained Delaunay triangulation with Ruppert refinement.
//!
//! Insertion is flip-based (Lawson), so the structure is a valid triangulation
//! at every step and constrained edges are simply never flipped. Input
//! segments are first recovered by conforming splits inside a bounding
//! triangle, then triangles are refined until every non-exempt triangle meets
//! the angle bound and the local size bound.

use std::collections::{HashMap, HashSet, VecDeque};

use crate::error::{Error, Result};
use crate::geometry::Point2;

const NONE: u32 = u32::MAX;

/// Planar straight-line graph input.
pub(crate) struct Pslg {
    pub points: Vec<Point2>,
    pub segments: Vec<[usize; 2]>,
}

pub(crate) struct RefineParams<'a> {
    pub min_angle_deg: f64,
    pub size: &'a (dyn Fn(Point2) -> f64 + 'a),
    pub inside: &'a (dyn Fn(Point2) -> bool + 'a),
    pub max_points: usize,
}

pub(crate) struct Refined {
    pub points: Vec<Point2>,
    pub triangles: Vec<[usize; 3]>,
    /// Triangles left below the angle bound next to a small input angle.
    pub exempt: Vec<bool>,
    /// Input vertex index for points that came from the input.
    pub input_index: Vec<Option<usize>>,
    /// Input segment carrying each inserted segment point.
    pub segment_of: Vec<Option<usize>>,
}

#[derive(Clone, Copy)]
struct Tri {
    v: [u32; 3],
    n: [u32; 3],
    inside: bool,
}

enum Walk {
    Found(u32),
    Blocked(u32, u32),
}

struct Cdt {
    pts: Vec<Point2>,
    tris: Vec<Tri>,
    vtri: Vec<u32>,
    sub: HashMap<(u32, u32), u32>,
    seg_of: Vec<u32>,
    input: Vec<u32>,
    last: u32,
    turn: u32,
}

fn key(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    crate::geometry::orient(a, b, c)
}

fn incircle(a: Point2, b: Point2, c: Point2, d: Point2) -> f64 {
    robust::incircle(
        robust::Coord { x: a.x, y: a.y },
        robust::Coord { x: b.x, y: b.y },
        robust::Coord { x: c.x, y: c.y },
        robust::Coord { x: d.x, y: d.y },
    )
}

/// `c` lies strictly inside the diametral circle of `ab`.
fn encroaches(a: Point2, b: Point2, c: Point2) -> bool {
    (a - c).dot(b - c) < 0.0
}

pub(crate) fn circumcenter(a: Point2, b: Point2, c: Point2) -> Point2 {
    let ab = b - a;
    let ac = c - a;
    let d = 2.0 * ab.cross(ac);
    let ab2 = ab.dot(ab);
    let ac2 = ac.dot(ac);
    Point2::new(
        a.x + (ac.y * ab2 - ab.y * ac2) / d,
        a.y + (ab.x * ac2 - ac.x * ab2) / d,
    )
}

impl Cdt {
    fn new(bbox_pts: &[Point2]) -> Self {
        let (mut lo, mut hi) = (bbox_pts[0], bbox_pts[0]);
        for p in bbox_pts {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let c = lo.lerp(hi, 0.5);
        let l = (hi.x - lo.x).max(hi.y - lo.y).max(1.0) * 20.0;
        let pts = vec![
            Point2::new(c.x - 2.0 * l, c.y - l),
            Point2::new(c.x + 2.0 * l, c.y - l),
            Point2::new(c.x, c.y + 2.0 * l),
        ];
        Cdt {
            pts,
            tris: vec![Tri { v: [0, 1, 2], n: [NONE; 3], inside: false }],
            vtri: vec![0, 0, 0],
            sub: HashMap::new(),
            seg_of: vec![NONE; 3],
            input: vec![NONE; 3],
            last: 0,
            turn: 0,
        }
    }

    fn p(&self, v: u32) -> Point2 {
        self.pts[v as usize]
    }

    fn tri_pts(&self, t: u32) -> [Point2; 3] {
        let v = self.tris[t as usize].v;
        [self.p(v[0]), self.p(v[1]), self.p(v[2])]
    }

    fn replace_nb(&mut self, t: u32, old: u32, new: u32) {
        if t == NONE {
            return;
        }
        let tri = &mut self.tris[t as usize];
        for k in 0..3 {
            if tri.n[k] == old {
                tri.n[k] = new;
                return;
            }
        }
        panic!("neighbour link not found");
    }

    fn set(&mut self, t: u32, v: [u32; 3], n: [u32; 3], inside: bool) {
        let tri = Tri { v, n, inside };
        if t as usize == self.tris.len() {
            self.tris.push(tri);
        } else {
            self.tris[t as usize] = tri;
        }
        for &x in &v {
            self.vtri[x as usize] = t;
        }
    }

    fn is_constrained(&self, a: u32, b: u32) -> bool {
        self.sub.contains_key(&key(a, b))
    }

    /// Visibility walk to the triangle containing `p` (ignores constraints).
    fn locate(&mut self, p: Point2) -> u32 {
        let mut t = self.last;
        for _ in 0..(4 * self.tris.len() + 16) {
            self.turn = self.turn.wrapping_add(1);
            let off = (self.turn % 3) as usize;
            let tri = self.tris[t as usize];
            let mut moved = false;
            for kk in 0..3 {
                let i = (kk + off) % 3;
                let a = self.p(tri.v[(i + 1) % 3]);
                let b = self.p(tri.v[(i + 2) % 3]);
                if orient(a, b, p) < 0.0 {
                    let nb = tri.n[i];
                    assert!(nb != NONE, "point outside the bounding triangle");
                    t = nb;
                    moved = true;
                    break;
                }
            }
            if !moved {
                self.last = t;
                return t;
            }
        }
        panic!("point location did not terminate");
    }

    /// Straight walk from the centroid of `start` towards `p`, stopping at
    /// constrained edges.
    fn walk_constrained(&self, start: u32, p: Point2) -> Walk {
        let mut t = start;
        let [a, b, c] = self.tri_pts(start);
        let g = Point2::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0);
        let mut prev = NONE;
        for _ in 0..(4 * self.tris.len() + 16) {
            let tri = self.tris[t as usize];
            let mut next = None;
            let mut fallback = None;
            for i in 0..3 {
                if tri.n[i] == prev && prev != NONE {
                    continue;
                }
                let va = tri.v[(i + 1) % 3];
                let vb = tri.v[(i + 2) % 3];
                let (pa, pb) = (self.p(va), self.p(vb));
                if orient(pa, pb, p) < 0.0 {
                    let sa = orient(g, p, pa);
                    let sb = orient(g, p, pb);
                    if sa * sb <= 0.0 {
                        next = Some(i);
                        break;
                    }
                    fallback.get_or_insert(i);
                }
            }
            let Some(i) = next.or(fallback) else {
                return Walk::Found(t);
            };
            let va = tri.v[(i + 1) % 3];
            let vb = tri.v[(i + 2) % 3];
            if self.is_constrained(va, vb) || tri.n[i] == NONE {
                return Walk::Blocked(va, vb);
            }
            prev = t;
            t = tri.n[i];
        }
        Walk::Found(t)
    }

    fn find_edge(&self, a: u32, b: u32) -> Option<(u32, usize)> {
        let start = self.vtri[a as usize];
        let mut t = start;
        for _ in 0..10_000 {
            let tri = self.tris[t as usize];
            let i = tri.v.iter().position(|&x| x == a)?;
            if tri.v[(i + 1) % 3] == b {
                return Some((t, (i + 2) % 3));
            }
            if tri.v[(i + 2) % 3] == b {
                return Some((t, (i + 1) % 3));
            }
            // rotate counterclockwise around a
            let nb = tri.n[(i + 1) % 3];
            if nb == NONE || nb == start {
                break;
            }
            t = nb;
        }
        // boundary vertex: sweep the other way
        let mut t = start;
        for _ in 0..10_000 {
            let tri = self.tris[t as usize];
            let i = tri.v.iter().position(|&x| x == a)?;
            if tri.v[(i + 1) % 3] == b {
                return Some((t, (i + 2) % 3));
            }
            if tri.v[(i + 2) % 3] == b {
                return Some((t, (i + 1) % 3));
            }
            let nb = tri.n[(i + 2) % 3];
            if nb == NONE || nb == start {
                return None;
            }
            t = nb;
        }
        None
    }

    /// Triangles incident to `v`.
    fn star(&self, v: u32) -> Vec<u32> {
        let start = self.vtri[v as usize];
        let mut out = vec![start];
        let mut t = start;
        loop {
            let tri = self.tris[t as usize];
            let i = tri.v.iter().position(|&x| x == v).expect("stale vertex link");
            let nb = tri.n[(i + 1) % 3];
            if nb == NONE {
                break;
            }
            if nb == start {
                return out;
            }
            out.push(nb);
            t = nb;
        }
        let mut t = start;
        loop {
            let tri = self.tris[t as usize];
            let i = tri.v.iter().position(|&x| x == v).expect("stale vertex link");
            let nb = tri.n[(i + 2) % 3];
            if nb == NONE || nb == start {
                break;
            }
            out.push(nb);
            t = nb;
        }
        out
    }

    fn push_point(&mut self, p: Point2, seg: u32) -> u32 {
        self.pts.push(p);
        self.vtri.push(NONE);
        self.seg_of.push(seg);
        self.input.push(NONE);
        (self.pts.len() - 1) as u32
    }

    /// Inserts `p` into triangle `t`, splitting the edge it lies on if any.
    fn insert_in(&mut self, t: u32, p: Point2, seg: u32) -> u32 {
        let [a, b, c] = self.tri_pts(t);
        let o = [orient(b, c, p), orient(c, a, p), orient(a, b, p)];
        if let Some(i) = (0..3).find(|&i| o[i] == 0.0) {
            let tri = self.tris[t as usize];
            let va = tri.v[(i + 1) % 3];
            let vb = tri.v[(i + 2) % 3];
            return self.split_edge(va, vb, p, seg);
        }
        let v = self.push_point(p, seg);
        self.split_tri(t, v);
        v
    }

    fn split_tri(&mut self, t: u32, p: u32) {
        let tri = self.tris[t as usize];
        let [a, b, c] = tri.v;
        let [na, nb, nc] = tri.n;
        let t0 = t;
        let t1 = self.tris.len() as u32;
        let t2 = t1 + 1;
        let ins = tri.inside;
        self.set(t0, [a, b, p], [t1, t2, nc], ins);
        self.set(t1, [b, c, p], [t2, t0, na], ins);
        self.set(t2, [c, a, p], [t0, t1, nb], ins);
        self.replace_nb(na, t, t1);
        self.replace_nb(nb, t, t2);
        self.legalize(vec![t0, t1, t2], p);
    }

    /// Splits edge `ab` at `p`; keeps constrained sub-edges constrained.
    fn split_edge(&mut self, a: u32, b: u32, p: Point2, seg: u32) -> u32 {
        let (t, i) = self.find_edge(a, b).expect("edge to split is missing");
        let tri = self.tris[t as usize];
        // orient so that t = [ea, eb, c] with edge (ea, eb) opposite c
        let ea = tri.v[(i + 1) % 3];
        let eb = tri.v[(i + 2) % 3];
        let c = tri.v[i];
        let n_t_a = tri.n[(i + 1) % 3]; // opposite ea: edge (eb, c)
        let n_t_b = tri.n[(i + 2) % 3]; // opposite eb: edge (c, ea)
        let u = tri.n[i];
        let constrained = self.sub.remove(&key(a, b));
        let v = self.push_point(p, seg);
        let ta = t;
        let tb = self.tris.len() as u32;
        let ins_t = tri.inside;
        let mut created = vec![ta, tb];
        if u == NONE {
            self.set(ta, [ea, v, c], [tb, n_t_b, NONE], ins_t);
            self.set(tb, [v, eb, c], [n_t_a, ta, NONE], ins_t);
            self.replace_nb(n_t_a, t, tb);
        } else {
            let ut = self.tris[u as usize];
            let j = ut.v.iter().position(|&x| x != ea && x != eb).unwrap();
            let d = ut.v[j];
            // u = [d, eb, ea]
            let n_u_b = ut.n[(j + 1) % 3]; // opposite eb: edge (ea, d)
            let n_u_a = ut.n[(j + 2) % 3]; // opposite ea: edge (d, eb)
            let ub = u;
            let ua = tb + 1;
            let ins_u = ut.inside;
            self.set(ta, [ea, v, c], [tb, n_t_b, ua], ins_t);
            self.set(tb, [v, eb, c], [n_t_a, ta, ub], ins_t);
            self.set(ub, [eb, v, d], [ua, n_u_a, tb], ins_u);
            self.set(ua, [v, ea, d], [n_u_b, ub, ta], ins_u);
            self.replace_nb(n_t_a, t, tb);
            self.replace_nb(n_u_b, u, ua);
            created.push(ub);
            created.push(ua);
        }
        if let Some(s) = constrained {
            self.sub.insert(key(a, v), s);
            self.sub.insert(key(v, b), s);
        }
        self.legalize(created, v);
        v
    }

    fn legalize(&mut self, start: Vec<u32>, p: u32) {
        let mut stack = start;
        while let Some(t) = stack.pop() {
            let tri = self.tris[t as usize];
            let Some(i) = tri.v.iter().position(|&x| x == p) else { continue };
            let nb = tri.n[i];
            if nb == NONE {
                continue;
            }
            let a = tri.v[(i + 1) % 3];
            let b = tri.v[(i + 2) % 3];
            if self.is_constrained(a, b) {
                continue;
            }
            let nt = self.tris[nb as usize];
            let j = nt.v.iter().position(|&x| x != a && x != b).unwrap();
            let d = nt.v[j];
            if incircle(self.p(p), self.p(a), self.p(b), self.p(d)) <= 0.0 {
                continue;
            }
            // flip (a, b) -> (p, d)
            let n_t_a = tri.n[(i + 1) % 3]; // edge (b, p)
            let n_t_b = tri.n[(i + 2) % 3]; // edge (p, a)
            let n_nb_b = nt.n[(j + 1) % 3]; // nb = [d, b, a]: opposite b is edge (a, d)
            let n_nb_a = nt.n[(j + 2) % 3]; // edge (d, b)
            let ins = tri.inside;
            self.set(t, [p, a, d], [n_nb_b, nb, n_t_b], ins);
            self.set(nb, [p, d, b], [n_nb_a, n_t_a, t], ins);
            self.replace_nb(n_nb_b, nb, t);
            self.replace_nb(n_t_a, t, nb);
            stack.push(t);
            stack.push(nb);
        }
    }

    fn edge_apexes(&self, a: u32, b: u32) -> Vec<(u32, bool)> {
        let Some((t, i)) = self.find_edge(a, b) else { return Vec::new() };
        let tri = self.tris[t as usize];
        let mut out = vec![(tri.v[i], tri.inside)];
        let u = tri.n[i];
        if u != NONE {
            let ut = self.tris[u as usize];
            let j = ut.v.iter().position(|&x| x != a && x != b).unwrap();
            out.push((ut.v[j], ut.inside));
        }
        out
    }
}

/// Geometry of input vertices that bound small angles.
struct Corners {
    /// Segment endpoints for each input segment.
    seg_ends: Vec<[usize; 2]>,
    /// Input vertices whose incident segments meet below 60°.
    small: HashSet<usize>,
    /// Unordered pairs of input segments meeting at a small angle.
    small_pairs: HashSet<(usize, usize)>,
}

impl Corners {
    fn new(pslg: &Pslg) -> Self {
        let mut inc: HashMap<usize, Vec<usize>> = HashMap::new();
        for (s, &[a, b]) in pslg.segments.iter().enumerate() {
            inc.entry(a).or_default().push(s);
            inc.entry(b).or_default().push(s);
        }
        let mut small = HashSet::new();
        let mut small_pairs = HashSet::new();
        for (&v, segs) in &inc {
            for x in 0..segs.len() {
                for y in x + 1..segs.len() {
                    let (s1, s2) = (segs[x], segs[y]);
                    let other = |s: usize| {
                        let [a, b] = pslg.segments[s];
                        if a == v {
                            b
                        } else {
                            a
                        }
                    };
                    let d1 = pslg.points[other(s1)] - pslg.points[v];
                    let d2 = pslg.points[other(s2)] - pslg.points[v];
                    let ang = d1.cross(d2).abs().atan2(d1.dot(d2));
                    if ang < 60f64.to_radians() - 1e-9 {
                        small.insert(v);
                        small_pairs.insert((s1.min(s2), s1.max(s2)));
                    }
                }
            }
        }
        Corners { seg_ends: pslg.segments.clone(), small, small_pairs }
    }
}

pub(crate) fn refine(pslg: &Pslg, params: &RefineParams<'_>) -> Result<Refined> {
    if pslg.points.len() < 3 {
        return Err(Error::Construction("need at least three input points".into()));
    }
    for (i, p) in pslg.points.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::Construction(format!("input point {i} is not finite")));
        }
        for q in &pslg.points[..i] {
            if p.dist(*q) == 0.0 {
                return Err(Error::Construction(format!("duplicate input point {p}")));
            }
        }
    }
    for &[a, b] in &pslg.segments {
        if a == b || a >= pslg.points.len() || b >= pslg.points.len() {
            return Err(Error::Construction("degenerate input segment".into()));
        }
    }
    let corners = Corners::new(pslg);
    let mut cdt = Cdt::new(&pslg.points);
    let mut ids = Vec::with_capacity(pslg.points.len());
    for (i, &p) in pslg.points.iter().enumerate() {
        let t = cdt.locate(p);
        let v = cdt.insert_in(t, p, NONE);
        cdt.input[v as usize] = i as u32;
        ids.push(v);
    }

    let shells = |cdt: &Cdt, a: u32, b: u32| -> Point2 {
        let (pa, pb) = (cdt.p(a), cdt.p(b));
        let ia = cdt.input[a as usize] != NONE;
        let ib = cdt.input[b as usize] != NONE;
        if ia == ib {
            return pa.lerp(pb, 0.5);
        }
        let (from, to) = if ia { (pa, pb) } else { (pb, pa) };
        let len = from.dist(to);
        let d = 2f64.powf((len / 2.0).log2().round());
        from.lerp(to, d / len)
    };

    // recover segments by conforming splits
    let mut subs: Vec<(u32, u32, u32)> = pslg
        .segments
        .iter()
        .enumerate()
        .map(|(s, &[a, b])| (ids[a], ids[b], s as u32))
        .collect();
    loop {
        let mut next = Vec::with_capacity(subs.len());
        let mut split_any = false;
        for &(a, b, s) in &subs {
            let present = cdt.find_edge(a, b).is_some();
            let enc = present
                && cdt
                    .edge_apexes(a, b)
                    .iter()
                    .any(|&(c, _)| encroaches(cdt.p(a), cdt.p(b), cdt.p(c)));
            if present && !enc {
                next.push((a, b, s));
                continue;
            }
            split_any = true;
            let m = shells(&cdt, a, b);
            let t = cdt.locate(m);
            let v = cdt.insert_in(t, m, s);
            next.push((a, v, s));
            next.push((v, b, s));
            if cdt.pts.len() > params.max_points {
                return Err(Error::Refinement("segment recovery exceeded the point budget".into()));
            }
        }
        subs = next;
        if !split_any {
            break;
        }
    }
    for &(a, b, s) in &subs {
        cdt.sub.insert(key(a, b), s);
    }

    // classify connected regions between constrained edges
    let nt = cdt.tris.len();
    let mut region = vec![usize::MAX; nt];
    let mut nreg = 0;
    for seed in 0..nt {
        if region[seed] != usize::MAX {
            continue;
        }
        let [a, b, c] = cdt.tri_pts(seed as u32);
        let g = Point2::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0);
        let touches_super = cdt.tris[seed].v.iter().any(|&v| v < 3);
        let inside = !touches_super && (params.inside)(g);
        let mut stack = vec![seed];
        region[seed] = nreg;
        while let Some(t) = stack.pop() {
            cdt.tris[t].inside = inside;
            let tri = cdt.tris[t];
            for i in 0..3 {
                let nb = tri.n[i];
                if nb == NONE || region[nb as usize] != usize::MAX {
                    continue;
                }
                if cdt.is_constrained(tri.v[(i + 1) % 3], tri.v[(i + 2) % 3]) {
                    continue;
                }
                region[nb as usize] = nreg;
                stack.push(nb as usize);
            }
        }
        nreg += 1;
    }

    let sin_min = params.min_angle_deg.to_radians().sin();
    let segs_of = |cdt: &Cdt, v: u32| -> Vec<usize> {
        let s = cdt.seg_of[v as usize];
        if s != NONE {
            return vec![s as usize];
        }
        let inp = cdt.input[v as usize];
        if inp == NONE {
            return Vec::new();
        }
        corners
            .seg_ends
            .iter()
            .enumerate()
            .filter(|(_, e)| e.contains(&(inp as usize)))
            .map(|(s, _)| s)
            .collect()
    };
    // (angle-bad, size-bad, exempt)
    let classify = |cdt: &Cdt, t: u32| -> (bool, bool, bool) {
        let tri = cdt.tris[t as usize];
        let [a, b, c] = cdt.tri_pts(t);
        let l = [b.dist(c), c.dist(a), a.dist(b)];
        let (imin, lmin) = l
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, x)| if x < acc.1 { (i, x) } else { acc });
        let lmax = l.iter().copied().fold(0.0, f64::max);
        let area2 = (b - a).cross(c - a).abs();
        let r = l[0] * l[1] * l[2] / (2.0 * area2);
        let angle_bad = lmin / (2.0 * r) < sin_min;
        let g = Point2::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0);
        let size_bad = lmax > (params.size)(g);
        let mut exempt = false;
        if angle_bad {
            let y = tri.v[(imin + 1) % 3];
            let z = tri.v[(imin + 2) % 3];
            let sy = segs_of(cdt, y);
            let sz = segs_of(cdt, z);
            'outer: for &s1 in &sy {
                for &s2 in &sz {
                    if s1 != s2 && corners.small_pairs.contains(&(s1.min(s2), s1.max(s2))) {
                        exempt = true;
                        break 'outer;
                    }
                }
            }
            let apex = tri.v[imin];
            let ia = cdt.input[apex as usize];
            if ia != NONE && corners.small.contains(&(ia as usize)) {
                exempt = true;
            }
        }
        (angle_bad, size_bad, exempt)
    };

    let mut bad: VecDeque<(u32, [u32; 3])> = VecDeque::new();
    for t in 0..cdt.tris.len() as u32 {
        if cdt.tris[t as usize].inside {
            bad.push_back((t, cdt.tris[t as usize].v));
        }
    }
    let mut seg_queue: VecDeque<(u32, u32)> = VecDeque::new();

    let check_star = |cdt: &Cdt, v: u32, bad: &mut VecDeque<(u32, [u32; 3])>, segq: &mut VecDeque<(u32, u32)>| {
        for t in cdt.star(v) {
            let tri = cdt.tris[t as usize];
            if !tri.inside {
                continue;
            }
            bad.push_back((t, tri.v));
            for i in 0..3 {
                let a = tri.v[(i + 1) % 3];
                let b = tri.v[(i + 2) % 3];
                if cdt.is_constrained(a, b) && encroaches(cdt.p(a), cdt.p(b), cdt.p(tri.v[i])) {
                    segq.push_back((a, b));
                }
            }
        }
    };

    let mut guard = 0usize;
    loop {
        guard += 1;
        if cdt.pts.len() > params.max_points || guard > 50 * params.max_points {
            return Err(Error::Refinement(format!(
                "quality targets unreachable within {} points (min angle {}°)",
                params.max_points, params.min_angle_deg
            )));
        }
        if let Some((a, b)) = seg_queue.pop_front() {
            let Some(&s) = cdt.sub.get(&key(a, b)) else { continue };
            let m = shells(&cdt, a, b);
            let v = cdt.split_edge(a, b, m, s);
            check_star(&cdt, v, &mut bad, &mut seg_queue);
            continue;
        }
        let Some((t, verts)) = bad.pop_front() else { break };
        if cdt.tris[t as usize].v != verts || !cdt.tris[t as usize].inside {
            continue;
        }
        let (angle_bad, size_bad, exempt) = classify(&cdt, t);
        if !(size_bad || (angle_bad && !exempt)) {
            continue;
        }
        let [a, b, c] = cdt.tri_pts(t);
        let cc = circumcenter(a, b, c);
        let tc = match cdt.walk_constrained(t, cc) {
            Walk::Blocked(x, y) => {
                seg_queue.push_back((x, y));
                bad.push_back((t, verts));
                continue;
            }
            Walk::Found(tc) => tc,
        };
        // encroachment pre-check over the would-be cavity
        let mut enc = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![tc];
        seen.insert(tc);
        while let Some(u) = stack.pop() {
            let tri = cdt.tris[u as usize];
            for i in 0..3 {
                let x = tri.v[(i + 1) % 3];
                let y = tri.v[(i + 2) % 3];
                if cdt.is_constrained(x, y) {
                    if encroaches(cdt.p(x), cdt.p(y), cc) {
                        enc.push((x, y));
                    }
                    continue;
                }
                let nb = tri.n[i];
                if nb == NONE || seen.contains(&nb) {
                    continue;
                }
                let [p0, p1, p2] = cdt.tri_pts(nb);
                if incircle(p0, p1, p2, cc) > 0.0 {
                    seen.insert(nb);
                    stack.push(nb);
                }
            }
        }
        if !enc.is_empty() {
            enc.sort_unstable();
            enc.dedup();
            seg_queue.extend(enc);
            bad.push_back((t, verts));
            continue;
        }
        let [q0, q1, q2] = cdt.tri_pts(tc);
        if q0.dist(cc).min(q1.dist(cc)).min(q2.dist(cc)) <= 1e-14 * (1.0 + cc.norm()) {
            continue;
        }
        let v = cdt.insert_in(tc, cc, NONE);
        check_star(&cdt, v, &mut bad, &mut seg_queue);
    }

    // compact
    let mut map = vec![usize::MAX; cdt.pts.len()];
    let mut points = Vec::new();
    let mut input_index = Vec::new();
    let mut segment_of = Vec::new();
    let mut triangles = Vec::new();
    let mut exempt = Vec::new();
    for t in 0..cdt.tris.len() as u32 {
        let tri = cdt.tris[t as usize];
        if !tri.inside {
            continue;
        }
        let mut out = [0usize; 3];
        for (k, &v) in tri.v.iter().enumerate() {
            let vi = v as usize;
            if map[vi] == usize::MAX {
                map[vi] = points.len();
                points.push(cdt.pts[vi]);
                input_index.push((cdt.input[vi] != NONE).then_some(cdt.input[vi] as usize));
                segment_of.push((cdt.seg_of[vi] != NONE).then_some(cdt.seg_of[vi] as usize));
            }
            out[k] = map[vi];
        }
        let (angle_bad, _, ex) = classify(&cdt, t);
        triangles.push(out);
        exempt.push(angle_bad && ex);
    }
    Ok(Refined { points, triangles, exempt, input_index, segment_of })
}
