//! 2D Delaunay triangulation and first-order neighbour queries.
//!
//! Incremental Bowyer-Watson insertion over a triangulation closed by "ghost"
//! triangles that join every convex-hull edge to a vertex at infinity, so hull
//! growth needs no special casing. Orientation and in-circle tests use
//! adaptive exact arithmetic, so the result is a true Delaunay triangulation
//! for any finite input.
//!
//! Cocircular configurations are resolved deterministically: among four
//! cocircular points the shared diagonal is the one incident to the
//! lexicographically smallest `(x, y)` point. Exact duplicates collapse onto
//! one vertex; coincident points are neighbours of each other and share the
//! neighbours of their representative.

use std::cmp::Ordering;

use nalgebra::Point2;
use robust::{incircle, orient2d, Coord};

use crate::error::GeometryError;

const GHOST: u32 = u32::MAX;
const NONE: u32 = u32::MAX;

/// Delaunay triangulation of a point set, with per-point neighbour sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    point_count: usize,
    triangles: Vec<[usize; 3]>,
    neighbors: Vec<Vec<usize>>,
}

impl Triangulation {
    pub fn point_count(&self) -> usize {
        self.point_count
    }

    /// Counter-clockwise (in a y-up frame) triangles over input point indices.
    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Sorted indices sharing a triangle edge with `i`.
    pub fn first_order_neighbors(&self, i: usize) -> Result<&[usize], GeometryError> {
        self.neighbors
            .get(i)
            .map(Vec::as_slice)
            .ok_or(GeometryError::IndexOutOfRange {
                index: i,
                len: self.point_count,
            })
    }
}

/// Builds the Delaunay triangulation of `points`.
pub fn delaunay(points: &[Point2<f64>]) -> Result<Triangulation, GeometryError> {
    if points.len() < 3 {
        return Err(GeometryError::DegenerateInput(format!(
            "Delaunay triangulation needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(GeometryError::DegenerateInput("non-finite point".into()));
    }

    let mut order: Vec<u32> = (0..points.len() as u32).collect();
    order.sort_by(|&a, &b| lex_cmp(&points[a as usize], &points[b as usize]).then(a.cmp(&b)));
    let mut rank = vec![0u32; points.len()];
    let mut representative: Vec<u32> = (0..points.len() as u32).collect();
    let mut r = 0u32;
    for (k, &i) in order.iter().enumerate() {
        if k > 0 {
            let prev = order[k - 1];
            if points[prev as usize] == points[i as usize] {
                representative[i as usize] = representative[prev as usize];
                rank[i as usize] = rank[prev as usize];
                continue;
            }
            r += 1;
        }
        rank[i as usize] = r;
    }
    let distinct: Vec<u32> = (0..points.len() as u32)
        .filter(|&i| representative[i as usize] == i)
        .collect();

    let (a, b, c) = first_triangle(points, &distinct).ok_or_else(|| {
        GeometryError::DegenerateInput("all points are collinear or coincident".into())
    })?;
    let mut dt = Builder::new(points, &rank, a, b, c);
    for &i in &distinct {
        if i != a && i != b && i != c {
            dt.insert(i);
        }
    }
    dt.resolve_cocircular();
    Ok(dt.finish(&representative))
}

fn lex_cmp(a: &Point2<f64>, b: &Point2<f64>) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y))
}

fn coord(p: &Point2<f64>) -> Coord<f64> {
    Coord { x: p.x, y: p.y }
}

/// First two distinct points in input order plus the first point not collinear
/// with them, returned in counter-clockwise order.
fn first_triangle(points: &[Point2<f64>], distinct: &[u32]) -> Option<(u32, u32, u32)> {
    let a = *distinct.first()?;
    let b = *distinct.get(1)?;
    let c = distinct[2..].iter().copied().find(|&c| {
        orient2d(
            coord(&points[a as usize]),
            coord(&points[b as usize]),
            coord(&points[c as usize]),
        ) != 0.0
    })?;
    let o = orient2d(
        coord(&points[a as usize]),
        coord(&points[b as usize]),
        coord(&points[c as usize]),
    );
    Some(if o > 0.0 { (a, b, c) } else { (a, c, b) })
}

#[derive(Debug, Clone)]
struct Tri {
    v: [u32; 3],
    /// `n[i]` is the triangle across the edge opposite `v[i]`.
    n: [u32; 3],
    alive: bool,
}

impl Tri {
    fn is_ghost(&self) -> bool {
        self.v[2] == GHOST
    }

    /// Edge opposite `v[i]`, oriented as it appears in this triangle.
    fn edge(&self, i: usize) -> (u32, u32) {
        (self.v[(i + 1) % 3], self.v[(i + 2) % 3])
    }

    fn slot_of_edge(&self, a: u32, b: u32) -> Option<usize> {
        (0..3).find(|&i| self.edge(i) == (a, b))
    }

    fn slot_of_vertex(&self, v: u32) -> usize {
        (0..3)
            .find(|&i| self.v[i] == v)
            .expect("vertex belongs to triangle")
    }
}

struct Builder<'a> {
    pts: &'a [Point2<f64>],
    rank: &'a [u32],
    tris: Vec<Tri>,
    free: Vec<u32>,
    last: u32,
    /// Generation-stamped per-triangle marks used during cavity search.
    mark: Vec<u32>,
    generation: u32,
}

impl<'a> Builder<'a> {
    fn new(pts: &'a [Point2<f64>], rank: &'a [u32], a: u32, b: u32, c: u32) -> Self {
        let mut dt = Self {
            pts,
            rank,
            tris: Vec::with_capacity(2 * pts.len() + 8),
            free: Vec::new(),
            last: 0,
            mark: Vec::new(),
            generation: 0,
        };
        let t = dt.alloc([a, b, c]);
        let g0 = dt.alloc([c, b, GHOST]);
        let g1 = dt.alloc([a, c, GHOST]);
        let g2 = dt.alloc([b, a, GHOST]);
        dt.link_among(&[t, g0, g1, g2]);
        dt.last = t;
        dt
    }

    fn p(&self, i: u32) -> Coord<f64> {
        coord(&self.pts[i as usize])
    }

    fn alloc(&mut self, v: [u32; 3]) -> u32 {
        let tri = Tri {
            v,
            n: [NONE; 3],
            alive: true,
        };
        if let Some(id) = self.free.pop() {
            self.tris[id as usize] = tri;
            id
        } else {
            self.tris.push(tri);
            self.mark.push(0);
            (self.tris.len() - 1) as u32
        }
    }

    /// Links every pair of the given triangles that share an edge.
    fn link_among(&mut self, ids: &[u32]) {
        for &t in ids {
            for i in 0..3 {
                let (a, b) = self.tris[t as usize].edge(i);
                for &u in ids {
                    if u != t {
                        if self.tris[u as usize].slot_of_edge(b, a).is_some() {
                            self.tris[t as usize].n[i] = u;
                        }
                    }
                }
            }
        }
    }

    fn strictly_between(&self, a: u32, b: u32, p: Coord<f64>) -> bool {
        let (pa, pb) = (self.p(a), self.p(b));
        let within = |lo: f64, hi: f64, x: f64| (lo < x && x < hi) || (hi < x && x < lo);
        if pa.x != pb.x {
            within(pa.x, pb.x, p.x)
        } else {
            within(pa.y, pb.y, p.y)
        }
    }

    fn in_conflict(&self, t: u32, p: Coord<f64>) -> bool {
        let tri = &self.tris[t as usize];
        let [a, b, c] = tri.v;
        if tri.is_ghost() {
            let o = orient2d(self.p(a), self.p(b), p);
            o > 0.0 || (o == 0.0 && self.strictly_between(a, b, p))
        } else {
            incircle(self.p(a), self.p(b), self.p(c), p) > 0.0
        }
    }

    /// Visibility walk to a triangle whose circumdisk (or ghost half-plane)
    /// contains `p`.
    fn locate(&self, p: Coord<f64>) -> u32 {
        let mut t = self.last;
        let limit = 4 * self.tris.len() + 16;
        for step in 0..limit {
            let tri = &self.tris[t as usize];
            if tri.is_ghost() {
                return t;
            }
            let mut moved = false;
            for k in 0..3 {
                let i = (k + step) % 3;
                let (a, b) = tri.edge(i);
                if orient2d(self.p(a), self.p(b), p) < 0.0 {
                    t = tri.n[i];
                    moved = true;
                    break;
                }
            }
            if !moved {
                return t;
            }
        }
        // unreachable for Delaunay triangulations; keep a correct fallback
        (0..self.tris.len() as u32)
            .find(|&t| self.tris[t as usize].alive && self.in_conflict(t, p))
            .expect("some triangle conflicts with a new point")
    }

    fn insert(&mut self, pi: u32) {
        let p = self.p(pi);
        let mut seed = self.locate(p);
        if !self.in_conflict(seed, p) {
            seed = (0..self.tris.len() as u32)
                .find(|&t| self.tris[t as usize].alive && self.in_conflict(t, p))
                .expect("some triangle conflicts with a new point");
        }

        self.generation += 2;
        let in_cavity = self.generation;
        let outside = self.generation + 1;
        self.mark[seed as usize] = in_cavity;
        let mut stack = vec![seed];
        let mut cavity = vec![seed];
        // (a, b, outside triangle) for every cavity boundary edge
        let mut boundary: Vec<(u32, u32, u32)> = Vec::new();
        while let Some(t) = stack.pop() {
            for i in 0..3 {
                let nb = self.tris[t as usize].n[i];
                let m = self.mark[nb as usize];
                if m == in_cavity {
                    continue;
                }
                if m != outside && self.in_conflict(nb, p) {
                    self.mark[nb as usize] = in_cavity;
                    stack.push(nb);
                    cavity.push(nb);
                } else {
                    self.mark[nb as usize] = outside;
                    let (a, b) = self.tris[t as usize].edge(i);
                    boundary.push((a, b, nb));
                }
            }
        }
        for &t in &cavity {
            self.tris[t as usize].alive = false;
            self.free.push(t);
        }

        let mut created = Vec::with_capacity(boundary.len());
        for &(a, b, out) in &boundary {
            let v = if a == GHOST {
                [b, pi, GHOST]
            } else if b == GHOST {
                [pi, a, GHOST]
            } else {
                [a, b, pi]
            };
            let t = self.alloc(v);
            let slot = self.tris[t as usize]
                .slot_of_edge(a, b)
                .expect("boundary edge");
            self.tris[t as usize].n[slot] = out;
            let back = self.tris[out as usize]
                .slot_of_edge(b, a)
                .expect("outside shares edge");
            self.tris[out as usize].n[back] = t;
            created.push(t);
        }
        // new triangles fan around `pi`; pair them up along their spokes
        for idx in 0..created.len() {
            let t = created[idx];
            for i in 0..3 {
                if self.tris[t as usize].n[i] != NONE {
                    continue;
                }
                let (a, b) = self.tris[t as usize].edge(i);
                let partner = created
                    .iter()
                    .copied()
                    .find(|&u| u != t && self.tris[u as usize].slot_of_edge(b, a).is_some())
                    .expect("cavity is closed");
                self.tris[t as usize].n[i] = partner;
            }
        }
        if let Some(&t) = created.iter().find(|&&t| !self.tris[t as usize].is_ghost()) {
            self.last = t;
        }
    }

    /// Flips cocircular quads so their diagonal touches the lexicographically
    /// smallest of the four points.
    fn resolve_cocircular(&mut self) {
        let mut stack: Vec<(u32, usize)> = Vec::new();
        for t in 0..self.tris.len() as u32 {
            if self.tris[t as usize].alive && !self.tris[t as usize].is_ghost() {
                stack.extend((0..3).map(|i| (t, i)));
            }
        }
        let mut budget = 64 * self.tris.len() + 1024;
        while let Some((t, i)) = stack.pop() {
            let tri = &self.tris[t as usize];
            if !tri.alive || tri.is_ghost() {
                continue;
            }
            let nb = tri.n[i];
            let other = &self.tris[nb as usize];
            if other.is_ghost() {
                continue;
            }
            let a = tri.v[i];
            let (b, c) = tri.edge(i);
            let d = other.v[other.slot_of_edge(c, b).expect("shared edge")];
            let ic = incircle(self.p(a), self.p(b), self.p(c), self.p(d));
            let flip = ic > 0.0
                || (ic == 0.0 && {
                    let min = [a, b, c, d]
                        .into_iter()
                        .min_by_key(|&v| self.rank[v as usize])
                        .unwrap();
                    min == a || min == d
                });
            if !flip || budget == 0 {
                continue;
            }
            budget -= 1;
            self.flip(t, i);
            for s in 0..3 {
                stack.push((t, s));
                stack.push((nb, s));
            }
        }
    }

    /// Replaces diagonal `b-c` of the quad `(a, b, c) | (d, c, b)` by `a-d`.
    fn flip(&mut self, t: u32, i: usize) {
        let nb = self.tris[t as usize].n[i];
        let a = self.tris[t as usize].v[i];
        let (b, c) = self.tris[t as usize].edge(i);
        let j = self.tris[nb as usize]
            .slot_of_edge(c, b)
            .expect("shared edge");
        let d = self.tris[nb as usize].v[j];

        let t_ref = &self.tris[t as usize];
        let n_ab = t_ref.n[t_ref.slot_of_vertex(c)];
        let n_ca = t_ref.n[t_ref.slot_of_vertex(b)];
        let nb_ref = &self.tris[nb as usize];
        let n_bd = nb_ref.n[nb_ref.slot_of_vertex(c)];
        let n_dc = nb_ref.n[nb_ref.slot_of_vertex(b)];

        // t becomes (a, b, d), nb becomes (a, d, c)
        self.tris[t as usize].v = [a, b, d];
        self.tris[t as usize].n = [n_bd, nb, n_ab];
        self.tris[nb as usize].v = [a, d, c];
        self.tris[nb as usize].n = [n_dc, n_ca, t];

        let s = self.tris[n_bd as usize]
            .slot_of_edge(d, b)
            .expect("outer edge");
        self.tris[n_bd as usize].n[s] = t;
        let s = self.tris[n_ca as usize]
            .slot_of_edge(a, c)
            .expect("outer edge");
        self.tris[n_ca as usize].n[s] = nb;
    }

    fn finish(self, representative: &[u32]) -> Triangulation {
        let n = self.pts.len();
        let mut triangles = Vec::new();
        let mut rep_neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
        for tri in self.tris.iter().filter(|t| t.alive && !t.is_ghost()) {
            let v = tri.v.map(|x| x as usize);
            triangles.push(v);
            for k in 0..3 {
                rep_neighbors[v[k]].push(v[(k + 1) % 3]);
                rep_neighbors[v[k]].push(v[(k + 2) % 3]);
            }
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, &r) in representative.iter().enumerate() {
            members[r as usize].push(i);
        }
        let mut neighbors = vec![Vec::new(); n];
        for (i, &r) in representative.iter().enumerate() {
            let r = r as usize;
            let mut set: Vec<usize> = rep_neighbors[r]
                .iter()
                .flat_map(|&q| members[q].iter().copied())
                .chain(members[r].iter().copied().filter(|&j| j != i))
                .collect();
            set.sort_unstable();
            set.dedup();
            neighbors[i] = set;
        }
        Triangulation {
            point_count: n,
            triangles,
            neighbors,
        }
    }
}
