//! Nearest-hit ray casting: watertight ray/triangle test over a
//! median-split bounding volume hierarchy.

use super::{Mesh, Vec3};

/// Nearest forward intersection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub triangle: usize,
    /// Weights of the triangle's three corners, summing to 1.
    pub barycentrics: [f64; 3],
    pub distance: f64,
}

impl Hit {
    /// True when `self` should replace `best`: nearer, or equally near with a
    /// lower triangle index.
    fn beats(&self, best: &Option<Hit>) -> bool {
        match best {
            None => true,
            Some(b) => self.distance < b.distance || (self.distance == b.distance && self.triangle < b.triangle),
        }
    }
}

/// Watertight ray/triangle intersection (Woop, Benthin and Wald, 2013).
///
/// Two-sided. Returns `(barycentrics, distance)` for hits with distance > 0.
pub fn intersect_triangle(origin: &Vec3, dir: &Vec3, v: [Vec3; 3]) -> Option<([f64; 3], f64)> {
    let kz = dir.iamax();
    let mut kx = (kz + 1) % 3;
    let mut ky = (kx + 1) % 3;
    if dir[kz] < 0.0 {
        std::mem::swap(&mut kx, &mut ky);
    }
    let sz = 1.0 / dir[kz];
    let sx = dir[kx] * sz;
    let sy = dir[ky] * sz;

    let [a, b, c] = v.map(|p| p - origin);
    let shear = |p: &Vec3| (p[kx] - sx * p[kz], p[ky] - sy * p[kz]);
    let (ax, ay) = shear(&a);
    let (bx, by) = shear(&b);
    let (cx, cy) = shear(&c);

    let u = cx * by - cy * bx;
    let w_v = ax * cy - ay * cx;
    let w = bx * ay - by * ax;
    if (u < 0.0 || w_v < 0.0 || w < 0.0) && (u > 0.0 || w_v > 0.0 || w > 0.0) {
        return None;
    }
    let det = u + w_v + w;
    if det == 0.0 {
        return None;
    }
    let t_scaled = u * (sz * a[kz]) + w_v * (sz * b[kz]) + w * (sz * c[kz]);
    let t = t_scaled / det;
    if !(t > 0.0) || !t.is_finite() {
        return None;
    }
    Some(([u / det, w_v / det, w / det], t))
}

/// Scans every triangle. Reference for [`RayCaster`].
pub fn ray_intersect_brute(mesh: &Mesh, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
    let mut best = None;
    for t in 0..mesh.triangle_count() {
        if let Some((barycentrics, distance)) = intersect_triangle(origin, dir, mesh.corners(t)) {
            let hit = Hit {
                triangle: t,
                barycentrics,
                distance,
            };
            if hit.beats(&best) {
                best = Some(hit);
            }
        }
    }
    best
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.lo = self.lo.inf(&o.lo);
        self.hi = self.hi.sup(&o.hi);
    }

    /// Entry distance of the ray, or `None` when it misses or starts past `t_max`.
    fn entry(&self, origin: &Vec3, inv: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.lo[k] - origin[k]) * inv[k];
            let b = (self.hi[k] - origin[k]) * inv[k];
            // f64::min/max drop a NaN operand (origin on a slab plane, zero direction)
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1).then_some(t0)
    }
}

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    /// Leaf: range into `order`. Interior: `start` is the right child, left is `self + 1`.
    start: usize,
    count: usize,
}

const LEAF_SIZE: usize = 4;

/// Ray caster over an immutable mesh.
#[derive(Clone, Debug)]
pub struct RayCaster<'m> {
    mesh: &'m Mesh,
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl<'m> RayCaster<'m> {
    pub fn new(mesh: &'m Mesh) -> Self {
        let mut caster = Self {
            mesh,
            nodes: Vec::new(),
            order: (0..mesh.triangle_count()).collect(),
        };
        let boxes: Vec<Aabb> = (0..mesh.triangle_count())
            .map(|t| {
                let mut b = Aabb::empty();
                for p in mesh.corners(t) {
                    b.grow(&p);
                }
                // pad so rounding in the slab test never rejects an edge hit
                let pad = 1e-9 * (b.hi - b.lo).amax() + 1e-12;
                b.lo.add_scalar_mut(-pad);
                b.hi.add_scalar_mut(pad);
                b
            })
            .collect();
        let centroids: Vec<Vec3> = boxes.iter().map(|b| (b.lo + b.hi) * 0.5).collect();
        if !caster.order.is_empty() {
            let n = caster.order.len();
            caster.build(0, n, &boxes, &centroids);
        }
        caster
    }

    pub fn mesh(&self) -> &'m Mesh {
        self.mesh
    }

    fn build(&mut self, start: usize, end: usize, boxes: &[Aabb], centroids: &[Vec3]) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &t in &self.order[start..end] {
            bounds.merge(&boxes[t]);
            cbounds.grow(&centroids[t]);
        }
        let me = self.nodes.len();
        self.nodes.push(Node {
            bounds,
            start,
            count: end - start,
        });
        let extent = cbounds.hi - cbounds.lo;
        if end - start <= LEAF_SIZE || extent.amax() == 0.0 {
            return me;
        }
        let axis = extent.imax();
        let mid = (start + end) / 2;
        // index tie-break keeps the build independent of sort stability
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
        });
        self.build(start, mid, boxes, centroids);
        let right = self.build(mid, end, boxes, centroids);
        self.nodes[me].start = right;
        self.nodes[me].count = 0;
        me
    }

    /// Nearest forward hit; equal distances resolve to the lower triangle index.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = dir.map(|d| 1.0 / d);
        let mut best: Option<Hit> = None;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            let limit = best.map_or(f64::INFINITY, |h| h.distance);
            if node.bounds.entry(origin, &inv, limit).is_none() {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start..node.start + node.count] {
                    if let Some((barycentrics, distance)) = intersect_triangle(origin, dir, self.mesh.corners(t)) {
                        let hit = Hit {
                            triangle: t,
                            barycentrics,
                            distance,
                        };
                        if hit.beats(&best) {
                            best = Some(hit);
                        }
                    }
                }
            } else {
                // visit the nearer child first
                let (l, r) = (ni + 1, node.start);
                let el = self.nodes[l].bounds.entry(origin, &inv, limit);
                let er = self.nodes[r].bounds.entry(origin, &inv, limit);
                match (el, er) {
                    (Some(a), Some(b)) if a <= b => stack.extend([r, l]),
                    (Some(_), Some(_)) => stack.extend([l, r]),
                    (Some(_), None) => stack.push(l),
                    (None, Some(_)) => stack.push(r),
                    (None, None) => {}
                }
            }
        }
        best
    }

    /// True when nothing blocks the segment from `origin` to `origin + dir * max_dist`.
    pub fn unoccluded(&self, origin: &Vec3, dir: &Vec3, max_dist: f64) -> bool {
        self.intersect(origin, dir).is_none_or(|h| h.distance >= max_dist)
    }
}
