//! Reflected Brownian motion in polygonal domains.
//!
//! Paths follow an Euler scheme with specular reflection off boundary walls.
//! Target contact is detected by intersecting every straight piece of a step
//! with the target segments, so thin targets are not missed between samples.
//! Each coordinate has variance `t`, so `E|X_t − X_0|² = 2t` away from the
//! boundary.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    canonicalize, k_segment_images, point_in_loop, point_segment_distance, region_of, POINT_TOL,
    segment_intersection, signed_area, vertices, DomainSpec, Point2, PolygonWithSlit, RegionLabel,
    SymmetryElement,
};
use crate::par;

pub const MAX_REFLECTIONS: usize = 8;
pub const MIN_PATHS: usize = 1000;
/// Upper bound on the time step anywhere in a bridge.
pub const NECK_DT_CAP: f64 = 1e-4;
const BLOCK: usize = 250;
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Reflection {
    /// Mirror the overshoot across the violated wall.
    #[default]
    Specular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbmConfig {
    /// Base time step. Inside a bridge of `D(ε)` the step is reduced to
    /// `min(dt, 1e−4, 4w² − 15ε²/4)` with `w` the local half-width: `ε²/4` at
    /// the neck, and a step of about one channel width elsewhere, which the
    /// reflection loop folds back exactly in a straight strip.
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub reflection: Reflection,
}

impl Default for RbmConfig {
    fn default() -> Self {
        RbmConfig { dt: 1e-4, horizon: 0.5, n_paths: 10_000, seed: 0, reflection: Reflection::Specular }
    }
}

impl RbmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param(format!("dt must be positive (got {})", self.dt)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::param(format!("horizon must be positive (got {})", self.horizon)));
        }
        if self.n_paths < MIN_PATHS {
            return Err(Error::param(format!(
                "n_paths must be at least {MIN_PATHS} (got {})",
                self.n_paths
            )));
        }
        Ok(())
    }
}

/// Counters accumulated over all simulated steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RbmDiagnostics {
    pub steps: u64,
    pub reflections: u64,
    /// Steps whose reflection did not settle within the iteration cap.
    pub clamps: u64,
}

impl RbmDiagnostics {
    fn add(&mut self, o: &RbmDiagnostics) {
        self.steps += o.steps;
        self.reflections += o.reflections;
        self.clamps += o.clamps;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitEstimate {
    pub probability: f64,
    /// Half-width of the 95% interval.
    pub half_width: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// True when the Wilson interval replaced the normal approximation.
    pub wilson: bool,
    pub hits: usize,
    pub n_paths: usize,
    pub target: String,
    pub horizon: f64,
    pub diagnostics: RbmDiagnostics,
}

impl HitEstimate {
    fn from_counts(hits: usize, n: usize, target: &str, horizon: f64, diagnostics: RbmDiagnostics) -> Self {
        let (p, half_width, ci_low, ci_high, wilson) = confidence_interval(hits, n);
        HitEstimate {
            probability: p,
            half_width,
            ci_low,
            ci_high,
            wilson,
            hits,
            n_paths: n,
            target: target.to_string(),
            horizon,
            diagnostics,
        }
    }

    /// Whether the interval lies strictly above zero.
    pub fn excludes_zero(&self) -> bool {
        self.ci_low > 0.0
    }
}

/// 95% interval for a binomial proportion: normal approximation, or Wilson's
/// score interval when fewer than five successes or failures were seen.
pub fn confidence_interval(hits: usize, n: usize) -> (f64, f64, f64, f64, bool) {
    let nf = n as f64;
    let p = hits as f64 / nf;
    if hits >= 5 && n - hits >= 5 {
        let h = Z95 * (p * (1.0 - p) / nf).sqrt();
        return (p, h, (p - h).max(0.0), (p + h).min(1.0), false);
    }
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let h = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (centre - h).max(0.0) };
    let hi = if hits == n { 1.0 } else { (centre + h).min(1.0) };
    (p, 0.5 * (hi - lo), lo, hi, true)
}

#[derive(Debug, Clone, Copy)]
struct Wall {
    a: Point2,
    b: Point2,
    /// Slit banks reflect from both sides; loop edges only from the left.
    two_sided: bool,
    lo: Point2,
    hi: Point2,
}

/// Uniform bucket grid over the walls' bounding box.
#[derive(Debug, Clone)]
struct WallGrid {
    origin: Point2,
    cell: f64,
    nx: usize,
    ny: usize,
    start: Vec<u32>,
    items: Vec<u32>,
}

/// Whether segment `ab` meets the closed box `[lo, hi]` (Liang–Barsky clip).
fn segment_meets_box(a: Point2, b: Point2, lo: Point2, hi: Point2) -> bool {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-d.x, a.x - lo.x), (d.x, hi.x - a.x), (-d.y, a.y - lo.y), (d.y, hi.y - a.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

impl WallGrid {
    const MAX_CELLS_PER_SIDE: usize = 1024;

    fn build(walls: &[Wall]) -> Self {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for w in walls {
            lo = Point2::new(lo.x.min(w.lo.x), lo.y.min(w.lo.y));
            hi = Point2::new(hi.x.max(w.hi.x), hi.y.max(w.hi.y));
        }
        let extent = (hi.x - lo.x).max(hi.y - lo.y).max(1e-12);
        let cell = extent / Self::MAX_CELLS_PER_SIDE as f64;
        let nx = (((hi.x - lo.x) / cell).ceil() as usize).max(1);
        let ny = (((hi.y - lo.y) / cell).ceil() as usize).max(1);
        let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); nx * ny];
        let pad = 1e-9 * cell;
        let grid = WallGrid { origin: lo, cell, nx, ny, start: Vec::new(), items: Vec::new() };
        for (i, w) in walls.iter().enumerate() {
            let (i0, j0) = grid.cell_of(w.lo);
            let (i1, j1) = grid.cell_of(w.hi);
            for j in j0..=j1 {
                for ii in i0..=i1 {
                    let clo = Point2::new(lo.x + ii as f64 * cell - pad, lo.y + j as f64 * cell - pad);
                    let chi = Point2::new(clo.x + cell + 2.0 * pad, clo.y + cell + 2.0 * pad);
                    if segment_meets_box(w.a, w.b, clo, chi) {
                        buckets[j * nx + ii].push(i as u32);
                    }
                }
            }
        }
        let mut start = Vec::with_capacity(nx * ny + 1);
        let mut items = Vec::new();
        start.push(0);
        for b in buckets {
            items.extend(b);
            start.push(items.len() as u32);
        }
        WallGrid { start, items, ..grid }
    }

    fn cell_of(&self, p: Point2) -> (usize, usize) {
        // float-to-int casts saturate, so truncation of a non-negative value is its floor
        let i = (((p.x - self.origin.x) / self.cell).max(0.0) as usize).min(self.nx - 1);
        let j = (((p.y - self.origin.y) / self.cell).max(0.0) as usize).min(self.ny - 1);
        (i, j)
    }
}

/// A polygonal domain prepared for path simulation.
#[derive(Debug, Clone)]
pub struct RbmDomain {
    walls: Vec<Wall>,
    grid: WallGrid,
    poly: PolygonWithSlit,
    spec: Option<DomainSpec>,
    /// Vertices of `D1` when the domain is `D(ε)`.
    d1: Option<[Point2; 10]>,
}

impl RbmDomain {
    pub fn new(poly: &PolygonWithSlit) -> Result<Self> {
        let mut walls = Vec::new();
        let mut push = |a: Point2, b: Point2, two_sided: bool| {
            walls.push(Wall {
                a,
                b,
                two_sided,
                lo: Point2::new(a.x.min(b.x), a.y.min(b.y)),
                hi: Point2::new(a.x.max(b.x), a.y.max(b.y)),
            });
        };
        for (k, lp) in poly.loops().enumerate() {
            if lp.len() < 3 {
                return Err(Error::param("boundary loop with fewer than three vertices"));
            }
            // interior on the left: outer loop counterclockwise, holes clockwise
            let ccw = signed_area(lp) > 0.0;
            let flip = (k == 0) != ccw;
            let n = lp.len();
            for i in 0..n {
                let (a, b) = (lp[i], lp[(i + 1) % n]);
                if flip {
                    push(b, a, false);
                } else {
                    push(a, b, false);
                }
            }
        }
        if let Some([a, b]) = poly.slit {
            push(a, b, true);
        }
        let grid = WallGrid::build(&walls);
        let d1 = poly.spec.as_ref().map(vertices).transpose()?;
        Ok(RbmDomain { walls, grid, poly: poly.clone(), spec: poly.spec, d1 })
    }

    pub fn for_spec(spec: &DomainSpec) -> Result<Self> {
        Self::new(&crate::geometry::build_domain(spec)?)
    }

    pub fn polygon(&self) -> &PolygonWithSlit {
        &self.poly
    }

    /// Closure membership; slit banks count as boundary.
    pub fn contains(&self, p: Point2) -> bool {
        match &self.d1 {
            Some(a) => {
                let (_, q) = canonicalize(p);
                point_in_loop(a, q)
                    || (0..a.len()).any(|i| point_segment_distance(q, a[i], a[(i + 1) % a.len()]) <= POINT_TOL)
            }
            None => self.poly.contains(p),
        }
    }

    /// Step size used at `p` for a base step `dt`.
    pub fn local_dt(&self, p: Point2, dt: f64) -> f64 {
        let (Some(spec), Some(a)) = (&self.spec, &self.d1) else { return dt };
        // bridges run along the rays at 0, 2π/3 and 4π/3
        for k in [0, 2, 4] {
            let u = Point2::on_ray(k, 1.0);
            if let Some(w) = bridge_profile(a, p.dot(u)) {
                if u.cross(p).abs() <= 2.0 * w {
                    let e2 = spec.epsilon * spec.epsilon;
                    return dt.min(NECK_DT_CAP).min(4.0 * w * w - 3.75 * e2);
                }
            }
        }
        dt
    }

    /// Earliest wall crossed by the move `from → to`, skipping wall `skip`.
    fn first_crossing(&self, from: Point2, to: Point2, skip: usize) -> Option<(usize, f64)> {
        let lo = Point2::new(from.x.min(to.x), from.y.min(to.y));
        let hi = Point2::new(from.x.max(to.x), from.y.max(to.y));
        let (i0, j0) = self.grid.cell_of(lo);
        let (i1, j1) = self.grid.cell_of(hi);
        let mut best: Option<(usize, f64)> = None;
        if (i1 - i0 + 1) * (j1 - j0 + 1) > 16 {
            for i in 0..self.walls.len() {
                self.test_wall(i, from, to, lo, hi, skip, &mut best);
            }
            return best;
        }
        for j in j0..=j1 {
            for ii in i0..=i1 {
                let c = j * self.grid.nx + ii;
                for &w in &self.grid.items[self.grid.start[c] as usize..self.grid.start[c + 1] as usize] {
                    self.test_wall(w as usize, from, to, lo, hi, skip, &mut best);
                }
            }
        }
        best
    }

    #[allow(clippy::too_many_arguments)]
    #[inline]
    fn test_wall(
        &self,
        i: usize,
        from: Point2,
        to: Point2,
        lo: Point2,
        hi: Point2,
        skip: usize,
        best: &mut Option<(usize, f64)>,
    ) {
        let w = &self.walls[i];
        if i == skip || w.hi.x < lo.x || w.lo.x > hi.x || w.hi.y < lo.y || w.lo.y > hi.y {
            return;
        }
        let d = w.b - w.a;
        let s_to = d.cross(to - w.a);
        let crosses = if w.two_sided { d.cross(from - w.a) * s_to < 0.0 } else { s_to < 0.0 };
        if !crosses {
            return;
        }
        if let Some(t) = crossing_parameter(from, to, w.a, w.b) {
            // ties go to the lower index so the result does not depend on bucket order
            if best.is_none_or(|(bi, bt)| t < bt || (t == bt && i < bi)) {
                *best = Some((i, t));
            }
        }
    }
}

/// Parameter along `from → to` where it meets the wall `a → b`. A move
/// starting on the wall (after a clamp) or passing through a wall endpoint
/// may round just outside the unit ranges, so both ends get a little slack.
fn crossing_parameter(from: Point2, to: Point2, a: Point2, b: Point2) -> Option<f64> {
    const SLACK: f64 = 1e-9;
    let r = to - from;
    let s = b - a;
    let denom = r.cross(s);
    if denom == 0.0 {
        return None;
    }
    let ap = a - from;
    let t = ap.cross(s) / denom;
    let u = ap.cross(r) / denom;
    ((-SLACK..=1.0).contains(&t) && (-SLACK..=1.0 + SLACK).contains(&u)).then_some(t.max(0.0))
}

/// Half-width of the bridge of `D(ε)` at canonical abscissa `x ∈ [5, 7]`.
pub fn bridge_half_width(spec: &DomainSpec, x: f64) -> Option<f64> {
    bridge_profile(&vertices(spec).ok()?, x)
}

fn bridge_profile(a: &[Point2; 10], x: f64) -> Option<f64> {
    if !(5.0..=7.0).contains(&x) {
        return None;
    }
    // A3..A7 are a[2..7] with abscissae 5, 5.5, 6, 6.5, 7
    let i = (((x - 5.0) / 0.5).floor() as usize).min(3);
    let (p, q) = (a[2 + i], a[3 + i]);
    Some(p.y + (q.y - p.y) * (x - p.x) / (q.x - p.x))
}

fn reflect(q: Point2, a: Point2, b: Point2) -> Point2 {
    let d = b - a;
    let t = (q - a).dot(d) / d.dot(d);
    let foot = a.lerp(b, t);
    foot * 2.0 - q
}

/// One Euler step with its straight pieces (start, reflection points, end).
#[derive(Debug, Clone, Copy)]
pub struct Step {
    pub end: Point2,
    pub reflections: u32,
    pub clamped: bool,
    points: [Point2; MAX_REFLECTIONS + 3],
    len: usize,
}

impl Step {
    /// Consecutive straight pieces travelled during the step.
    pub fn pieces(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        self.points[..self.len].windows(2).map(|w| (w[0], w[1]))
    }

    /// Bounding box of all pieces.
    pub fn bounds(&self) -> (Point2, Point2) {
        let pts = &self.points[..self.len];
        let mut lo = pts[0];
        let mut hi = pts[0];
        for p in &pts[1..] {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        (lo, hi)
    }
}

/// Moves `p` by `√dt · noise` and reflects the overshoot back into the
/// closure of the domain. After `MAX_REFLECTIONS` reflections the point is
/// clamped to the last boundary contact.
pub fn simulate_step(dom: &RbmDomain, p: Point2, dt: f64, noise: [f64; 2]) -> Step {
    let s = dt.sqrt();
    let mut points = [p; MAX_REFLECTIONS + 3];
    let mut len = 1;
    let mut from = p;
    let mut to = Point2::new(p.x + s * noise[0], p.y + s * noise[1]);
    let mut skip = usize::MAX;
    let mut reflections = 0;
    let mut clamped = false;
    while let Some((w, t)) = dom.first_crossing(from, to, skip) {
        let h = from.lerp(to, t);
        points[len] = h;
        len += 1;
        if reflections as usize == MAX_REFLECTIONS {
            to = h;
            clamped = true;
            break;
        }
        let wall = dom.walls[w];
        to = reflect(to, wall.a, wall.b);
        from = h;
        skip = w;
        reflections += 1;
    }
    // the last reflection leaves `to` on the inner side of the wall just hit
    // unless rounding put it a hair outside
    if !clamped && skip != usize::MAX {
        let w = dom.walls[skip];
        if !w.two_sided && (w.b - w.a).cross(to - w.a) < 0.0 {
            to = from;
            clamped = true;
        }
    }
    points[len] = to;
    len += 1;
    debug_assert!(dom.contains(to), "simulated position {to} left the domain");
    Step { end: to, reflections, clamped, points, len }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of path block `b` for base seed `seed`.
fn block_seed(seed: u64, b: usize) -> u64 {
    splitmix64(seed ^ splitmix64(b as u64))
}

type Segment = (Point2, Point2);

/// Runs one path, recording the first hitting time of each target. The path
/// stops once `decide` returns an outcome. Steps never straddle a checkpoint.
fn run_path<R: Rng>(
    dom: &RbmDomain,
    start: Point2,
    dt: f64,
    checkpoints: &[f64],
    targets: &[&[Segment]],
    decide: &(dyn Fn(&[Option<f64>], f64, bool) -> Option<bool> + Sync),
    rng: &mut R,
    diag: &mut RbmDiagnostics,
) -> bool {
    let mut hits: Vec<Option<f64>> = targets
        .iter()
        .map(|segs| segs.iter().any(|&(a, b)| point_segment_distance(start, a, b) <= 1e-12).then_some(0.0))
        .collect();
    let horizon = *checkpoints.last().expect("at least one checkpoint");
    let mut t = 0.0;
    let mut p = start;
    let mut next = 0;
    loop {
        let finished = next == checkpoints.len();
        if let Some(outcome) = decide(&hits, t, finished) {
            return outcome;
        }
        if finished {
            // decide must settle at the horizon
            return false;
        }
        let h = dom.local_dt(p, dt).min(checkpoints[next] - t);
        let noise = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let step = simulate_step(dom, p, h, noise);
        diag.steps += 1;
        diag.reflections += step.reflections as u64;
        diag.clamps += step.clamped as u64;
        t += h;
        if checkpoints[next] - t <= 1e-12 * horizon.max(1.0) {
            t = checkpoints[next];
            next += 1;
        }
        let (lo, hi) = step.bounds();
        for (k, segs) in targets.iter().enumerate() {
            if hits[k].is_some() {
                continue;
            }
            let touched = segs.iter().any(|&(a, b)| {
                a.x.max(b.x) >= lo.x
                    && a.x.min(b.x) <= hi.x
                    && a.y.max(b.y) >= lo.y
                    && a.y.min(b.y) <= hi.y
                    && step.pieces().any(|(u, v)| segment_intersection(u, v, a, b).is_some())
            });
            if touched {
                hits[k] = Some(t);
            }
        }
        p = step.end;
    }
}

/// Runs `cfg.n_paths` paths in fixed blocks and counts successes.
fn count_successes(
    dom: &RbmDomain,
    start: Point2,
    cfg: &RbmConfig,
    checkpoints: &[f64],
    targets: &[&[Segment]],
    decide: &(dyn Fn(&[Option<f64>], f64, bool) -> Option<bool> + Sync),
) -> (usize, RbmDiagnostics) {
    let blocks = cfg.n_paths.div_ceil(BLOCK);
    let per_block = par::map_range(blocks, |b| {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(block_seed(cfg.seed, b));
        let mut diag = RbmDiagnostics::default();
        let n = BLOCK.min(cfg.n_paths - b * BLOCK);
        let hits = (0..n)
            .filter(|_| run_path(dom, start, cfg.dt, checkpoints, targets, decide, &mut rng, &mut diag))
            .count();
        (hits, diag)
    });
    let mut diag = RbmDiagnostics::default();
    let mut hits = 0;
    for (h, d) in &per_block {
        hits += h;
        diag.add(d);
    }
    (hits, diag)
}

/// A named set of target segments, optionally standing for the region of
/// `D(ε)` they enclose (a start inside that region has already hit it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub name: String,
    pub segments: Vec<(Point2, Point2)>,
    pub region: Option<RegionLabel>,
}

impl Target {
    pub fn new(name: impl Into<String>, segments: Vec<(Point2, Point2)>) -> Self {
        Target { name: name.into(), segments, region: None }
    }

    /// `I` (entered through the `K3` images) or `E` (through the `K7` images).
    pub fn region(spec: &DomainSpec, region: RegionLabel) -> Result<Self> {
        let (j, name) = match region {
            RegionLabel::Inner => (3, "I"),
            RegionLabel::Exterior => (7, "E"),
            other => return Err(Error::param(format!("no entry segments for region {other:?}"))),
        };
        Ok(Target { name: name.into(), segments: k_segment_images(spec, j)?, region: Some(region) })
    }

    /// The images of `K_j` under the rotations.
    pub fn k_images(spec: &DomainSpec, js: &[usize]) -> Result<Self> {
        let mut segments = Vec::new();
        let mut name = String::new();
        for &j in js {
            segments.extend(k_segment_images(spec, j)?);
            if !name.is_empty() {
                name.push('+');
            }
            name.push_str(&format!("K{j}"));
        }
        Ok(Target { name, segments, region: None })
    }
}

/// Probability that the path started at `start` touches `target` before `cfg.horizon`.
pub fn hitting_probability(dom: &RbmDomain, start: Point2, target: &Target, cfg: &RbmConfig) -> Result<HitEstimate> {
    cfg.validate()?;
    if !dom.contains(start) {
        return Err(Error::OutsideDomain { x: start.x, y: start.y });
    }
    let inside = match (target.region, &dom.spec) {
        (Some(r), Some(spec)) => region_of(spec, start) == r,
        _ => false,
    };
    if inside {
        let diag = RbmDiagnostics::default();
        return Ok(HitEstimate::from_counts(cfg.n_paths, cfg.n_paths, &target.name, cfg.horizon, diag));
    }
    let decide = |h: &[Option<f64>], _t: f64, finished: bool| {
        if h[0].is_some() {
            Some(true)
        } else if finished {
            Some(false)
        } else {
            None
        }
    };
    let (hits, diag) =
        count_successes(dom, start, cfg, &[cfg.horizon], &[&target.segments], &decide);
    Ok(HitEstimate::from_counts(hits, cfg.n_paths, &target.name, cfg.horizon, diag))
}

/// One line of `rbm.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmRow {
    pub target: String,
    pub start_id: usize,
    pub start: Point2,
    pub estimate: f64,
    pub ci_halfwidth: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Result of a minimum over a start grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEstimate {
    /// Estimate at the start with the smallest probability.
    pub min: HitEstimate,
    pub rows: Vec<RbmRow>,
}

fn grid_minimum(
    starts: &[Point2],
    first_id: usize,
    cfg: &RbmConfig,
    estimate: impl Fn(Point2, &RbmConfig) -> Result<HitEstimate>,
) -> Result<GridEstimate> {
    let mut rows = Vec::new();
    let mut min: Option<HitEstimate> = None;
    for (i, &s) in starts.iter().enumerate() {
        let id = first_id + i;
        let run = RbmConfig { seed: splitmix64(cfg.seed.wrapping_add(id as u64)), ..*cfg };
        let est = estimate(s, &run)?;
        rows.push(RbmRow {
            target: est.target.clone(),
            start_id: id,
            start: s,
            estimate: est.probability,
            ci_halfwidth: est.half_width,
            n_paths: est.n_paths,
            dt: run.dt,
            seed: run.seed,
        });
        if min.as_ref().is_none_or(|m| est.probability < m.probability) {
            min = Some(est);
        }
    }
    let min = min.ok_or_else(|| Error::param("empty start grid"))?;
    Ok(GridEstimate { min, rows })
}

/// Canonical abscissae of the start grids in the two bridge halves.
pub const P1_INNER_STARTS: [f64; 3] = [5.25, 5.5, 5.75];
pub const P1_OUTER_STARTS: [f64; 3] = [6.25, 6.5, 6.75];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P1Estimate {
    /// Starts in `M_i`, target `I` (reached through `K3`).
    pub inner: GridEstimate,
    /// Starts in `M_e`, target `E` (reached through `K7`).
    pub outer: GridEstimate,
}

impl P1Estimate {
    /// The smaller of the two grid minima.
    pub fn min(&self) -> &HitEstimate {
        if self.inner.min.probability <= self.outer.min.probability {
            &self.inner.min
        } else {
            &self.outer.min
        }
    }
}

/// Lower estimate of `P(τ_I < 1/2)` over starts in `M_i`, and the symmetric
/// quantity for `M_e` and `E`, on the bridge selected by `g`.
pub fn estimate_p1_on(spec: &DomainSpec, g: SymmetryElement, cfg: &RbmConfig) -> Result<P1Estimate> {
    spec.validate()?;
    let dom = RbmDomain::for_spec(spec)?;
    let run = *cfg;
    let inner_t = Target::region(spec, RegionLabel::Inner)?;
    let outer_t = Target::region(spec, RegionLabel::Exterior)?;
    let starts = |xs: &[f64]| xs.iter().map(|&x| g.apply(Point2::new(x, 0.0))).collect::<Vec<_>>();
    let inner = grid_minimum(&starts(&P1_INNER_STARTS), 0, &run, |s, c| {
        hitting_probability(&dom, s, &inner_t, c)
    })?;
    let outer = grid_minimum(&starts(&P1_OUTER_STARTS), P1_INNER_STARTS.len(), &run, |s, c| {
        hitting_probability(&dom, s, &outer_t, c)
    })?;
    Ok(P1Estimate { inner, outer })
}

pub fn estimate_p1(spec: &DomainSpec, cfg: &RbmConfig) -> Result<P1Estimate> {
    estimate_p1_on(spec, SymmetryElement::IDENTITY, cfg)
}

fn polyline_segments(gamma: &[Point2]) -> Vec<Segment> {
    gamma.windows(2).map(|w| (w[0], w[1])).collect()
}

fn distance_to_polyline(p: Point2, gamma: &[Point2]) -> f64 {
    if gamma.len() == 1 {
        return p.dist(gamma[0]);
    }
    gamma
        .windows(2)
        .map(|w| point_segment_distance(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

/// First sample point of `gamma` lying in `I`.
fn first_inner_point(spec: &DomainSpec, gamma: &[Point2]) -> Option<Point2> {
    const SAMPLES: usize = 16;
    gamma.windows(2).find_map(|w| {
        (0..=SAMPLES)
            .map(|k| w[0].lerp(w[1], k as f64 / SAMPLES as f64))
            .find(|&p| region_of(spec, p) == RegionLabel::Inner)
    })
}

fn validate_gamma(spec: &DomainSpec, gamma: &[Point2]) -> Result<Point2> {
    if gamma.len() < 2 || gamma.iter().any(|p| !p.is_finite()) {
        return Err(Error::param("gamma must be a polyline with at least two finite vertices"));
    }
    let diameter = gamma
        .iter()
        .flat_map(|a| gamma.iter().map(move |b| a.dist(*b)))
        .fold(0.0, f64::max);
    if diameter < 1e-10 {
        return Err(Error::param(format!("gamma has diameter {diameter:e} < 1e-10")));
    }
    first_inner_point(spec, gamma).ok_or_else(|| Error::param("gamma does not intersect I"))
}

/// Upper edge of `D1` in the inner region at canonical abscissa `x`.
fn inner_upper(spec: &DomainSpec, x: f64) -> f64 {
    let a = vertices(spec).expect("validated spec");
    let (a2, a3) = (a[1], a[2]);
    if x <= a2.x {
        x * 3f64.sqrt()
    } else {
        a2.y + (a3.y - a2.y) * (x - a2.x) / (a3.x - a2.x)
    }
}

/// Deterministic start grid in `I` within unit distance of `gamma`: points
/// half way between the arm axis and the arm edge, at canonical abscissae
/// stepping back from the first point of `gamma` inside `I`.
pub fn p2_start_grid(spec: &DomainSpec, gamma: &[Point2]) -> Result<Vec<Point2>> {
    let anchor = validate_gamma(spec, gamma)?;
    let (g, q) = canonicalize(anchor);
    let mut out = Vec::new();
    for dx in [0.0, 0.25, 0.5, 0.75] {
        let x = (q.x - dx).min(4.95);
        if x < 0.05 {
            continue;
        }
        let p = g.apply(Point2::new(x, 0.5 * inner_upper(spec, x)));
        if region_of(spec, p) == RegionLabel::Inner
            && distance_to_polyline(p, gamma) > 1e-9
            && distance_to_polyline(p, gamma) <= 1.0
        {
            out.push(p);
        }
    }
    if out.is_empty() {
        return Err(Error::param("no start grid point of I lies within unit distance of gamma"));
    }
    Ok(out)
}

/// `P(τ_γ < 1/2, τ_{TK4} > 1)` from a single start.
pub fn p2_probability(dom: &RbmDomain, spec: &DomainSpec, start: Point2, gamma: &[Point2], cfg: &RbmConfig) -> Result<HitEstimate> {
    cfg.validate()?;
    if !dom.contains(start) {
        return Err(Error::OutsideDomain { x: start.x, y: start.y });
    }
    let gamma_segs = polyline_segments(gamma);
    let k4 = k_segment_images(spec, 4)?;
    let decide = |h: &[Option<f64>], t: f64, finished: bool| {
        if h[1].is_some() {
            return Some(false);
        }
        match h[0] {
            None if t >= 0.5 => Some(false),
            Some(s) if finished => Some(s <= 0.5),
            _ => None,
        }
    };
    let (hits, diag) = count_successes(dom, start, cfg, &[0.5, 1.0], &[&gamma_segs, &k4], &decide);
    Ok(HitEstimate::from_counts(hits, cfg.n_paths, "gamma-before-1/2-avoiding-TK4-before-1", 1.0, diag))
}

/// Minimum of the `p2` estimate over the start grid of `p2_start_grid`.
pub fn estimate_p2(spec: &DomainSpec, gamma: &[Point2], cfg: &RbmConfig) -> Result<GridEstimate> {
    spec.validate()?;
    let starts = p2_start_grid(spec, gamma)?;
    let dom = RbmDomain::for_spec(spec)?;
    grid_minimum(&starts, P1_INNER_STARTS.len() + P1_OUTER_STARTS.len(), cfg, |s, c| {
        p2_probability(&dom, spec, s, gamma, c)
    })
}

/// Default `γ`: the axis of the canonical bridge from `x = 4` to `x = 5.25`,
/// crossing `K3` into the bridge.
pub fn default_gamma() -> Vec<Point2> {
    vec![Point2::new(4.0, 0.0), Point2::new(5.25, 0.0)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mu2Bound {
    pub value: f64,
    /// `p1 p2 = 1`, where the bound is infinite.
    pub saturated: bool,
}

/// `−log(1 − p1 p2)`.
pub fn mu2_lower_bound(p1: f64, p2: f64) -> Result<Mu2Bound> {
    for (name, p) in [("p1", p1), ("p2", p2)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::param(format!("{name} must lie in [0, 1] (got {p})")));
        }
    }
    let x = p1 * p2;
    if x >= 1.0 {
        return Ok(Mu2Bound { value: f64::INFINITY, saturated: true });
    }
    Ok(Mu2Bound { value: -(-x).ln_1p(), saturated: false })
}
