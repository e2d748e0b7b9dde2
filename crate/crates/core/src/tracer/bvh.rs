//! Median-split bounding volume hierarchy over mesh triangles.

use crate::math::Vec3;
use crate::scene::{Ray, TriangleMesh};

const LEAF_SIZE: usize = 4;
const DET_EPS: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub triangle: u32,
    /// (b0, b1, b2), weights of the triangle's three vertices.
    pub barycentrics: [f64; 3],
}

/// Möller–Trumbore ray/triangle test, returning `(t, b1, b2)` for any `t`.
#[inline]
pub fn intersect_triangle(ray: &Ray, v0: &Vec3, v1: &Vec3, v2: &Vec3) -> Option<(f64, f64, f64)> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let p = ray.dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < DET_EPS {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - v0;
    let b1 = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&b1) {
        return None;
    }
    let q = s.cross(&e1);
    let b2 = ray.dir.dot(&q) * inv;
    if b2 < 0.0 || b1 + b2 > 1.0 {
        return None;
    }
    Some((e2.dot(&q) * inv, b1, b2))
}

#[derive(Clone, Copy, Debug)]
struct Node {
    min: Vec3,
    max: Vec3,
    /// Leaf: first index into `order`. Interior: index of the left child
    /// (the right child follows the left subtree).
    start: u32,
    /// Leaf triangle count, 0 for interior nodes.
    count: u32,
    right: u32,
}

#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Bvh {
        let mut order: Vec<u32> = (0..mesh.faces.len() as u32).collect();
        let bounds: Vec<(Vec3, Vec3, Vec3)> = (0..mesh.faces.len())
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                let min = a.inf(&b).inf(&c);
                let max = a.sup(&b).sup(&c);
                (min, max, (a + b + c) / 3.0)
            })
            .collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            build_node(&mut nodes, &mut order, 0, &bounds);
        }
        Bvh { nodes, order }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Triangle permutation; leaves reference contiguous runs of it.
    pub fn order(&self) -> &[u32] {
        &self.order
    }

    /// Leaves as `(min, max, triangles)`.
    pub fn leaves(&self) -> impl Iterator<Item = (Vec3, Vec3, &[u32])> {
        self.nodes.iter().filter(|n| n.count > 0).map(|n| {
            let s = n.start as usize;
            (n.min, n.max, &self.order[s..s + n.count as usize])
        })
    }

    /// Nearest hit with `t` in `(t_min, t_max)`; exact ties go to the lower
    /// triangle id.
    pub fn intersect(&self, mesh: &TriangleMesh, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        self.traverse(ray, t_min, t_max, |tri, limit| {
            let [a, b, c] = mesh.triangle(tri as usize);
            if let Some((t, b1, b2)) = intersect_triangle(ray, &a, &b, &c) {
                if t > t_min && t < *limit {
                    let better = match best {
                        None => true,
                        Some(h) => t < h.t || (t == h.t && tri < h.triangle),
                    };
                    if better {
                        best = Some(Hit {
                            t,
                            triangle: tri,
                            barycentrics: [1.0 - b1 - b2, b1, b2],
                        });
                        // Keep equal-t candidates reachable for the tie-break.
                        *limit = t.next_up();
                    }
                }
            }
            false
        });
        best
    }

    /// Whether any triangle is hit with `t` in `(t_min, t_max)`.
    pub fn any_hit(&self, mesh: &TriangleMesh, ray: &Ray, t_min: f64, t_max: f64) -> bool {
        let mut found = false;
        self.traverse(ray, t_min, t_max, |tri, _| {
            let [a, b, c] = mesh.triangle(tri as usize);
            if let Some((t, _, _)) = intersect_triangle(ray, &a, &b, &c) {
                if t > t_min && t < t_max {
                    found = true;
                    return true;
                }
            }
            false
        });
        found
    }

    fn traverse(&self, ray: &Ray, t_min: f64, t_max: f64, mut visit: impl FnMut(u32, &mut f64) -> bool) {
        if self.nodes.is_empty() {
            return;
        }
        let inv = ray.dir.map(|d| 1.0 / d);
        let mut limit = t_max;
        let mut stack = [0u32; 64];
        let mut sp = 1;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if !slab(&node.min, &node.max, ray, &inv, t_min, limit) {
                continue;
            }
            if node.count > 0 {
                let s = node.start as usize;
                for &tri in &self.order[s..s + node.count as usize] {
                    if visit(tri, &mut limit) {
                        return;
                    }
                }
            } else {
                stack[sp] = node.right;
                stack[sp + 1] = node.start;
                sp += 2;
            }
        }
    }
}

#[inline]
fn slab(min: &Vec3, max: &Vec3, ray: &Ray, inv: &Vec3, t_min: f64, t_max: f64) -> bool {
    let mut lo = t_min;
    let mut hi = t_max;
    for k in 0..3 {
        let a = (min[k] - ray.origin[k]) * inv[k];
        let b = (max[k] - ray.origin[k]) * inv[k];
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        // NaN from 0 * inf (ray in the slab plane) must not cull the box.
        if a > lo {
            lo = a;
        }
        if b < hi {
            hi = b;
        }
    }
    lo <= hi
}

fn build_node(nodes: &mut Vec<Node>, order: &mut [u32], offset: usize, bounds: &[(Vec3, Vec3, Vec3)]) -> u32 {
    let (mut min, mut max) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
    let (mut cmin, mut cmax) = (min, max);
    for &t in order.iter() {
        let (lo, hi, c) = &bounds[t as usize];
        min = min.inf(lo);
        max = max.sup(hi);
        cmin = cmin.inf(c);
        cmax = cmax.sup(c);
    }
    let id = nodes.len() as u32;
    nodes.push(Node {
        min,
        max,
        start: offset as u32,
        count: order.len() as u32,
        right: 0,
    });
    if order.len() <= LEAF_SIZE {
        return id;
    }
    let axis = (cmax - cmin).imax();
    order.sort_by(|a, b| {
        bounds[*a as usize].2[axis]
            .total_cmp(&bounds[*b as usize].2[axis])
            .then(a.cmp(b))
    });
    let mid = order.len() / 2;
    let (left, right) = order.split_at_mut(mid);
    let l = build_node(nodes, left, offset, bounds);
    let r = build_node(nodes, right, offset + mid, bounds);
    nodes[id as usize].start = l;
    nodes[id as usize].count = 0;
    nodes[id as usize].right = r;
    id
}
