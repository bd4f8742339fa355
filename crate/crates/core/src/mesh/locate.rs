//! Bounding-volume hierarchy over triangle boxes for point location.

use crate::geometry::Point2;

const LEAF: usize = 4;
pub(crate) const EDGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Point2,
    hi: Point2,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Point2::new(f64::INFINITY, f64::INFINITY),
            hi: Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: Point2) {
        self.lo = Point2::new(self.lo.x.min(p.x), self.lo.y.min(p.y));
        self.hi = Point2::new(self.hi.x.max(p.x), self.hi.y.max(p.y));
    }

    fn union(&mut self, o: &Aabb) {
        self.grow(o.lo);
        self.grow(o.hi);
    }

    fn contains(&self, p: Point2, tol: f64) -> bool {
        p.x >= self.lo.x - tol && p.x <= self.hi.x + tol && p.y >= self.lo.y - tol && p.y <= self.hi.y + tol
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bbox: Aabb, start: usize, end: usize },
    Inner { bbox: Aabb, left: usize, right: usize },
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl Bvh {
    pub fn build(nodes: &[Point2], tris: &[[usize; 3]]) -> Self {
        if tris.is_empty() {
            return Bvh::default();
        }
        let boxes: Vec<Aabb> = tris
            .iter()
            .map(|t| {
                let mut b = Aabb::empty();
                for &i in t {
                    b.grow(nodes[i]);
                }
                b
            })
            .collect();
        let mut bvh = Bvh { nodes: Vec::new(), order: (0..tris.len()).collect() };
        bvh.split(&boxes, 0, tris.len());
        bvh
    }

    fn split(&mut self, boxes: &[Aabb], start: usize, end: usize) -> usize {
        let mut bbox = Aabb::empty();
        for &t in &self.order[start..end] {
            bbox.union(&boxes[t]);
        }
        let id = self.nodes.len();
        if end - start <= LEAF {
            self.nodes.push(Node::Leaf { bbox, start, end });
            return id;
        }
        self.nodes.push(Node::Leaf { bbox, start, end });
        let wide = bbox.hi.x - bbox.lo.x >= bbox.hi.y - bbox.lo.y;
        let centre = |t: usize| {
            let b = &boxes[t];
            if wide {
                b.lo.x + b.hi.x
            } else {
                b.lo.y + b.hi.y
            }
        };
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centre(a).total_cmp(&centre(b)).then(a.cmp(&b))
        });
        let left = self.split(boxes, start, mid);
        let right = self.split(boxes, mid, end);
        self.nodes[id] = Node::Inner { bbox, left, right };
        id
    }

    /// Calls `f` on every triangle whose box contains `p`.
    pub fn candidates(&self, p: Point2, tol: f64, mut f: impl FnMut(usize)) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            match &self.nodes[n] {
                Node::Leaf { bbox, start, end } => {
                    if bbox.contains(p, tol) {
                        for &t in &self.order[*start..*end] {
                            f(t);
                        }
                    }
                }
                Node::Inner { bbox, left, right } => {
                    if bbox.contains(p, tol) {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
    }
}

/// Barycentric coordinates of `p` in triangle `abc`.
pub fn barycentric(a: Point2, b: Point2, c: Point2, p: Point2) -> [f64; 3] {
    let det = (b - a).cross(c - a);
    let l1 = (p - a).cross(c - a) / det;
    let l2 = (b - a).cross(p - a) / det;
    [1.0 - l1 - l2, l1, l2]
}
