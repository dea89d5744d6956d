//! Conforming triangulations of axis-aligned rectangles.
//!
//! Every mesh is a set of leaves of a binary bisection forest rooted at the
//! elements of a structured macro mesh. Elements are stored in newest-vertex
//! order `[z0, z1, z2]`: the refinement edge is `z0 z1` and `z2` is the newest
//! vertex. Bisection inserts the midpoint `m` of `z0 z1` and produces the
//! children `[z2, z0, m]` and `[z1, z2, m]`.
//!
//! Elements are identified across meshes by their [`ElementKey`] (root plus
//! bisection path) and vertices by their exact coordinates, so independently
//! adapted meshes sharing a macro mesh can be overlaid exactly.

pub mod vtk;

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Marker for the missing neighbour of a boundary edge.
pub const NO_ELEMENT: usize = usize::MAX;

const MAX_DEPTH: u8 = 120;

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if !(x1 > x0 && y1 > y0) || ![x0, x1, y0, y1].iter().all(|v| v.is_finite()) {
            return Err(Error::Input(format!("degenerate rectangle [{x0},{x1}]x[{y0},{y1}]")));
        }
        Ok(Rect { x0, x1, y0, y1 })
    }

    pub fn unit_square() -> Self {
        Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 }
    }

    /// `(-1, 1)^2`
    pub fn symmetric_square() -> Self {
        Rect { x0: -1.0, x1: 1.0, y0: -1.0, y1: 1.0 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    fn on_boundary(&self, p: Point) -> bool {
        p[0] == self.x0 || p[0] == self.x1 || p[1] == self.y0 || p[1] == self.y1
    }
}

/// Position of an element in the bisection forest.
///
/// Bit `i` of `path` is the child taken at depth `i + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ElementKey {
    pub root: u32,
    pub depth: u8,
    pub path: u128,
}

impl ElementKey {
    pub fn root(root: u32) -> Self {
        ElementKey { root, depth: 0, path: 0 }
    }

    pub fn child(&self, which: u8) -> Self {
        debug_assert!(which < 2);
        ElementKey {
            root: self.root,
            depth: self.depth + 1,
            path: self.path | ((which as u128) << self.depth),
        }
    }

    pub fn parent(&self) -> Option<Self> {
        (self.depth > 0).then(|| self.ancestor(self.depth - 1))
    }

    /// Ancestor at `depth` (which must not exceed `self.depth`).
    pub fn ancestor(&self, depth: u8) -> Self {
        debug_assert!(depth <= self.depth);
        let mask = if depth == 0 { 0 } else { (1u128 << depth) - 1 };
        ElementKey { root: self.root, depth, path: self.path & mask }
    }

    /// Which child of its parent this key is.
    pub fn branch(&self) -> Option<u8> {
        (self.depth > 0).then(|| ((self.path >> (self.depth - 1)) & 1) as u8)
    }

    pub fn is_ancestor_of(&self, other: &ElementKey) -> bool {
        self.root == other.root && self.depth <= other.depth && other.ancestor(self.depth) == *self
    }
}

fn midpoint(a: Point, b: Point) -> Point {
    [(a[0] + b[0]) * 0.5 + 0.0, (a[1] + b[1]) * 0.5 + 0.0]
}

fn bisect(pts: [Point; 3], which: u8) -> [Point; 3] {
    let m = midpoint(pts[0], pts[1]);
    if which == 0 {
        [pts[2], pts[0], m]
    } else {
        [pts[1], pts[2], m]
    }
}

fn point_key(p: Point) -> (u64, u64) {
    ((p[0] + 0.0).to_bits(), (p[1] + 0.0).to_bits())
}

fn cmp_points(a: &Point, b: &Point) -> std::cmp::Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}

/// Structured macro triangulation: every cell of an `nx x ny` grid is split
/// along its `(x0,y0)-(x1,y1)` diagonal, which is the refinement edge of both
/// halves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroMesh {
    domain: Rect,
    nx: usize,
    ny: usize,
    vertices: Vec<Point>,
    elements: Vec<[usize; 3]>,
}

impl MacroMesh {
    pub fn structured(domain: Rect, nx: usize, ny: usize) -> Result<Arc<Self>> {
        if nx == 0 || ny == 0 {
            return Err(Error::Input("macro mesh needs at least one cell per direction".into()));
        }
        Rect::new(domain.x0, domain.x1, domain.y0, domain.y1)?;
        let hx = (domain.x1 - domain.x0) / nx as f64;
        let hy = (domain.y1 - domain.y0) / ny as f64;
        let coord = |i: usize, n: usize, lo: f64, hi: f64, h: f64| {
            if i == n {
                hi
            } else {
                lo + i as f64 * h
            }
        };
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([
                    coord(i, nx, domain.x0, domain.x1, hx) + 0.0,
                    coord(j, ny, domain.y0, domain.y1, hy) + 0.0,
                ]);
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut elements = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (p00, p10, p01, p11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
                elements.push([p11, p00, p10]);
                elements.push([p00, p11, p01]);
            }
        }
        Ok(Arc::new(MacroMesh { domain, nx, ny, vertices, elements }))
    }

    /// Square domain with `n` cells per side.
    pub fn square(domain: Rect, n: usize) -> Result<Arc<Self>> {
        Self::structured(domain, n, n)
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    pub fn cells(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    /// Grid spacing `(hx, hy)`.
    pub fn spacing(&self) -> (f64, f64) {
        (
            (self.domain.x1 - self.domain.x0) / self.nx as f64,
            (self.domain.y1 - self.domain.y0) / self.ny as f64,
        )
    }

    pub fn root_count(&self) -> usize {
        self.elements.len()
    }

    fn root_points(&self, root: u32) -> [Point; 3] {
        let e = self.elements[root as usize];
        [self.vertices[e[0]], self.vertices[e[1]], self.vertices[e[2]]]
    }

    /// Coordinates of the element identified by `key`.
    pub fn element_points(&self, key: ElementKey) -> Result<[Point; 3]> {
        if key.root as usize >= self.elements.len() {
            return Err(Error::Structure(format!("root {} not in macro mesh", key.root)));
        }
        let mut pts = self.root_points(key.root);
        for d in 0..key.depth {
            pts = bisect(pts, ((key.path >> d) & 1) as u8);
        }
        Ok(pts)
    }

    /// The macro triangulation itself as a mesh.
    pub fn mesh(self: &Arc<Self>) -> Mesh {
        let leaves = (0..self.elements.len() as u32)
            .map(|r| (ElementKey::root(r), self.root_points(r)))
            .collect();
        Mesh::from_leaves(self.clone(), leaves)
    }

    /// Uniform mesh obtained by bisecting every element `levels` times.
    pub fn uniform(self: &Arc<Self>, levels: usize) -> Mesh {
        let mut m = self.mesh();
        for _ in 0..levels {
            let all: Vec<usize> = (0..m.element_count()).collect();
            m = m.refine(&all).expect("all element ids are valid");
        }
        m
    }
}

/// Edge of a triangulation with its incident elements.
#[derive(Clone, Debug)]
pub struct Edge {
    pub vertices: [usize; 2],
    /// `elements[1] == NO_ELEMENT` on the boundary.
    pub elements: [usize; 2],
    /// Unit normal pointing out of `elements[0]`.
    pub normal: [f64; 2],
    pub length: f64,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.elements[1] == NO_ELEMENT
    }
}

/// Conforming triangulation, immutable once built.
#[derive(Clone, Debug)]
pub struct Mesh {
    macro_mesh: Arc<MacroMesh>,
    generation: u64,
    keys: Vec<ElementKey>,
    key_index: HashMap<ElementKey, usize>,
    elements: Vec<[usize; 3]>,
    vertices: Vec<Point>,
    areas: Vec<f64>,
    diameters: Vec<f64>,
    grads: Vec<[[f64; 2]; 3]>,
    edges: Vec<Edge>,
    element_edges: Vec<[usize; 3]>,
}

impl Mesh {
    /// Builds a mesh from forest leaves and their coordinates. Elements are
    /// ordered by key and vertices lexicographically, so the result depends
    /// only on the leaf set.
    fn from_leaves(macro_mesh: Arc<MacroMesh>, mut leaves: Vec<(ElementKey, [Point; 3])>) -> Mesh {
        leaves.sort_by(|a, b| a.0.cmp(&b.0));
        leaves.dedup_by(|a, b| a.0 == b.0);

        let mut vertices: Vec<Point> = leaves.iter().flat_map(|(_, p)| p.iter().copied()).collect();
        vertices.sort_by(cmp_points);
        vertices.dedup_by(|a, b| point_key(*a) == point_key(*b));
        let vindex: HashMap<(u64, u64), usize> =
            vertices.iter().enumerate().map(|(i, p)| (point_key(*p), i)).collect();

        let n = leaves.len();
        let mut keys = Vec::with_capacity(n);
        let mut elements = Vec::with_capacity(n);
        let mut areas = Vec::with_capacity(n);
        let mut diameters = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(n);
        for (key, pts) in &leaves {
            keys.push(*key);
            elements.push([
                vindex[&point_key(pts[0])],
                vindex[&point_key(pts[1])],
                vindex[&point_key(pts[2])],
            ]);
            let (area, g) = p1_geometry(pts);
            areas.push(area);
            grads.push(g);
            let d = |a: Point, b: Point| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            diameters.push(d(pts[0], pts[1]).max(d(pts[1], pts[2])).max(d(pts[2], pts[0])));
        }
        let key_index = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();

        let mut edge_map: HashMap<(usize, usize), usize> = HashMap::with_capacity(2 * n);
        let mut edges: Vec<Edge> = Vec::with_capacity(2 * n);
        let mut element_edges = Vec::with_capacity(n);
        for (e, tri) in elements.iter().enumerate() {
            let mut local = [0usize; 3];
            for (l, slot) in local.iter_mut().enumerate() {
                let (a, b) = (tri[l], tri[(l + 1) % 3]);
                let k = (a.min(b), a.max(b));
                *slot = match edge_map.get(&k) {
                    Some(&id) => {
                        edges[id].elements[1] = e;
                        id
                    }
                    None => {
                        let (pa, pb) = (vertices[a], vertices[b]);
                        let (dx, dy) = (pb[0] - pa[0], pb[1] - pa[1]);
                        let length = (dx * dx + dy * dy).sqrt();
                        // counter-clockwise elements: outward normal of a->b is (dy, -dx)
                        edges.push(Edge {
                            vertices: [a, b],
                            elements: [e, NO_ELEMENT],
                            normal: [dy / length, -dx / length],
                            length,
                        });
                        edge_map.insert(k, edges.len() - 1);
                        edges.len() - 1
                    }
                };
            }
            element_edges.push(local);
        }

        Mesh {
            macro_mesh,
            generation: next_generation(),
            keys,
            key_index,
            elements,
            vertices,
            areas,
            diameters,
            grads,
            edges,
            element_edges,
        }
    }

    /// Rebuilds a mesh from its leaf keys (used when restoring checkpoints).
    pub fn from_keys(macro_mesh: Arc<MacroMesh>, keys: &[ElementKey]) -> Result<Mesh> {
        let leaves = keys
            .iter()
            .map(|k| macro_mesh.element_points(*k).map(|p| (*k, p)))
            .collect::<Result<Vec<_>>>()?;
        let mesh = Mesh::from_leaves(macro_mesh, leaves);
        mesh.audit()?;
        Ok(mesh)
    }

    pub fn macro_mesh(&self) -> &Arc<MacroMesh> {
        &self.macro_mesh
    }

    pub fn domain(&self) -> Rect {
        self.macro_mesh.domain
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn keys(&self) -> &[ElementKey] {
        &self.keys
    }

    pub fn element_index(&self, key: &ElementKey) -> Option<usize> {
        self.key_index.get(key).copied()
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn area(&self, e: usize) -> f64 {
        self.areas[e]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// Element diameter `h_K` (longest edge).
    pub fn diameter(&self, e: usize) -> f64 {
        self.diameters[e]
    }

    /// Local mesh size `sqrt(2 |K|)`; equals the grid spacing of a
    /// structured mesh of right isosceles triangles.
    pub fn size(&self, e: usize) -> f64 {
        (2.0 * self.areas[e]).sqrt()
    }

    pub fn max_diameter(&self) -> f64 {
        self.diameters.iter().cloned().fold(0.0, f64::max)
    }

    /// Gradients of the three barycentric coordinates on element `e`.
    pub fn grads(&self, e: usize) -> &[[f64; 2]; 3] {
        &self.grads[e]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edge ids of element `e`, local edge `l` joining vertices `l` and `l+1`.
    pub fn element_edges(&self, e: usize) -> [usize; 3] {
        self.element_edges[e]
    }

    pub fn points(&self, e: usize) -> [Point; 3] {
        let t = self.elements[e];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn centroid(&self, e: usize) -> Point {
        let p = self.points(e);
        [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0]
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn shares_roots_with(&self, other: &Mesh) -> bool {
        Arc::ptr_eq(&self.macro_mesh, &other.macro_mesh) || *self.macro_mesh == *other.macro_mesh
    }

    /// Smallest interior angle over all elements, in radians.
    pub fn min_angle(&self) -> f64 {
        (0..self.element_count())
            .map(|e| {
                let p = self.points(e);
                (0..3)
                    .map(|i| {
                        let (a, b, c) = (p[i], p[(i + 1) % 3], p[(i + 2) % 3]);
                        let u = [b[0] - a[0], b[1] - a[1]];
                        let v = [c[0] - a[0], c[1] - a[1]];
                        let cos = (u[0] * v[0] + u[1] * v[1])
                            / ((u[0] * u[0] + u[1] * u[1]).sqrt() * (v[0] * v[0] + v[1] * v[1]).sqrt());
                        cos.clamp(-1.0, 1.0).acos()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Edge-incidence audit: positive orientation, no hanging nodes, boundary
    /// edges on the domain boundary, area equal to the domain area.
    pub fn audit(&self) -> Result<()> {
        for e in 0..self.element_count() {
            if !(self.areas[e] > 0.0) {
                return Err(Error::Structure(format!("element {e} is not positively oriented")));
            }
        }
        let dom = self.domain();
        for (i, edge) in self.edges.iter().enumerate() {
            if edge.is_boundary() {
                let (a, b) = (self.vertices[edge.vertices[0]], self.vertices[edge.vertices[1]]);
                let on_same_side = (a[0] == b[0] && (a[0] == dom.x0 || a[0] == dom.x1))
                    || (a[1] == b[1] && (a[1] == dom.y0 || a[1] == dom.y1));
                if !(on_same_side && dom.on_boundary(a) && dom.on_boundary(b)) {
                    return Err(Error::Structure(format!("edge {i} has one neighbour but is interior (hanging node)")));
                }
            }
        }
        let rel = (self.total_area() - dom.area()).abs() / dom.area();
        if rel > 1e-12 {
            return Err(Error::Structure(format!("area mismatch {rel:.3e}")));
        }
        Ok(())
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&e| e >= self.element_count()) {
            Some(e) => Err(Error::Input(format!("element id {e} out of range ({} elements)", self.element_count()))),
            None => Ok(()),
        }
    }

    /// Newest-vertex bisection of the marked elements plus conformity closure.
    pub fn refine(&self, marked: &[usize]) -> Result<Mesh> {
        self.check_ids(marked)?;
        let ek = |a: usize, b: usize| (a.min(b), a.max(b));
        let mut split: HashSet<(usize, usize)> = marked
            .iter()
            .map(|&e| {
                let t = self.elements[e];
                ek(t[0], t[1])
            })
            .collect();
        // conformity closure
        loop {
            let mut changed = false;
            for t in &self.elements {
                let re = ek(t[0], t[1]);
                if !split.contains(&re) && (split.contains(&ek(t[1], t[2])) || split.contains(&ek(t[2], t[0]))) {
                    split.insert(re);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let mut leaves = Vec::with_capacity(self.element_count() + 4 * split.len());
        for (e, t) in self.elements.iter().enumerate() {
            let key = self.keys[e];
            let pts = self.points(e);
            if !split.contains(&ek(t[0], t[1])) {
                leaves.push((key, pts));
                continue;
            }
            if key.depth >= MAX_DEPTH {
                return Err(Error::Input(format!("refinement depth limit {MAX_DEPTH} reached")));
            }
            // child 0 = [z2, z0, m] has refinement edge z2 z0, child 1 = [z1, z2, m] has z1 z2
            for (which, edge) in [(0u8, ek(t[2], t[0])), (1u8, ek(t[1], t[2]))] {
                let ckey = key.child(which);
                let cpts = bisect(pts, which);
                if split.contains(&edge) {
                    leaves.push((ckey.child(0), bisect(cpts, 0)));
                    leaves.push((ckey.child(1), bisect(cpts, 1)));
                } else {
                    leaves.push((ckey, cpts));
                }
            }
        }
        Ok(Mesh::from_leaves(self.macro_mesh.clone(), leaves))
    }

    /// Merges sibling pairs around removable newest vertices whose whole patch
    /// is marked. A merge happens only if every resulting parent satisfies
    /// `diameter <= floor(centroid)`. One level per call; macro roots are never
    /// merged.
    pub fn coarsen<F: Fn(Point) -> f64>(&self, marked: &[usize], floor: F) -> Result<Mesh> {
        self.check_ids(marked)?;
        let mut is_marked = vec![false; self.element_count()];
        for &e in marked {
            is_marked[e] = true;
        }
        let mut patches: Vec<Vec<usize>> = vec![Vec::new(); self.vertex_count()];
        for (e, t) in self.elements.iter().enumerate() {
            for &v in t {
                patches[v].push(e);
            }
        }

        let mut merged = vec![false; self.element_count()];
        let mut parents: Vec<ElementKey> = Vec::new();
        for (v, patch) in patches.iter().enumerate() {
            if !(patch.len() == 2 || patch.len() == 4) {
                continue;
            }
            let removable = patch
                .iter()
                .all(|&e| is_marked[e] && self.keys[e].depth > 0 && self.elements[e][2] == v);
            if !removable {
                continue;
            }
            let mut ps: Vec<ElementKey> = patch.iter().map(|&e| self.keys[e].parent().unwrap()).collect();
            ps.sort();
            let pairs_complete = ps.chunks(2).all(|c| c.len() == 2 && c[0] == c[1]);
            if !pairs_complete {
                continue;
            }
            ps.dedup();
            let mut parent_pts = Vec::with_capacity(ps.len());
            let mut ok = true;
            for p in &ps {
                let pts = self.macro_mesh.element_points(*p)?;
                let diam = diameter(&pts);
                let c = [(pts[0][0] + pts[1][0] + pts[2][0]) / 3.0, (pts[0][1] + pts[1][1] + pts[2][1]) / 3.0];
                if diam > floor(c) {
                    ok = false;
                    break;
                }
                parent_pts.push((*p, pts));
            }
            if !ok {
                continue;
            }
            for &e in patch {
                merged[e] = true;
            }
            parents.extend(parent_pts.into_iter().map(|(k, _)| k));
        }

        if parents.is_empty() {
            return Ok(self.regenerated());
        }
        let mut leaves: Vec<(ElementKey, [Point; 3])> = (0..self.element_count())
            .filter(|&e| !merged[e])
            .map(|e| (self.keys[e], self.points(e)))
            .collect();
        for p in parents {
            leaves.push((p, self.macro_mesh.element_points(p)?));
        }
        Ok(Mesh::from_leaves(self.macro_mesh.clone(), leaves))
    }

    fn regenerated(&self) -> Mesh {
        let mut m = self.clone();
        m.generation = next_generation();
        m
    }

    /// Finest common refinement of two meshes over the same macro mesh.
    pub fn common_refinement(a: &Mesh, b: &Mesh) -> Result<Mesh> {
        if !a.shares_roots_with(b) {
            return Err(Error::Structure("meshes have different macro meshes".into()));
        }
        if a.generation == b.generation {
            return Ok(a.clone());
        }
        let mut ancestors: HashSet<ElementKey> = HashSet::new();
        for k in a.keys.iter().chain(b.keys.iter()) {
            for d in 0..k.depth {
                ancestors.insert(k.ancestor(d));
            }
        }
        let mut leaves: Vec<(ElementKey, [Point; 3])> = Vec::with_capacity(a.element_count().max(b.element_count()));
        for (mesh, skip_shared) in [(a, false), (b, true)] {
            for (e, k) in mesh.keys.iter().enumerate() {
                if ancestors.contains(k) || (skip_shared && a.key_index.contains_key(k)) {
                    continue;
                }
                leaves.push((*k, mesh.points(e)));
            }
        }
        let mesh = Mesh::from_leaves(a.macro_mesh.clone(), leaves);
        if (mesh.total_area() - a.total_area()).abs() > 1e-12 * a.total_area() {
            return Err(Error::Structure("meshes are not refinements of the same forest".into()));
        }
        Ok(mesh)
    }

    /// For every element of `self`, the index of its ancestor-or-self in
    /// `coarse`. Fails unless `self` refines `coarse`.
    pub fn ancestors_in(&self, coarse: &Mesh) -> Result<Vec<usize>> {
        if !self.shares_roots_with(coarse) {
            return Err(Error::Structure("meshes have different macro meshes".into()));
        }
        self.keys
            .iter()
            .map(|k| {
                (0..=k.depth)
                    .rev()
                    .find_map(|d| coarse.key_index.get(&k.ancestor(d)).copied())
                    .ok_or_else(|| Error::Structure(format!("element {k:?} has no ancestor in the coarse mesh")))
            })
            .collect()
    }

    /// True if every element of `self` descends from (or equals) an element
    /// of `coarse`, i.e. the P1 space of `coarse` is contained in ours.
    pub fn refines(&self, coarse: &Mesh) -> bool {
        self.ancestors_in(coarse).is_ok()
    }

    /// Interpolation weights of `coarse` nodal values at the vertices of
    /// `self`, as rows `(fine vertex, [(coarse vertex, weight)])`.
    ///
    /// Midpoint values are built by repeated halving along the bisection
    /// path, so vertices shared with `coarse` get weight exactly 1.
    pub fn prolongation_from(&self, coarse: &Mesh) -> Result<Prolongation> {
        let anc = self.ancestors_in(coarse)?;
        let mut rows: Vec<Option<Vec<(usize, f64)>>> = vec![None; self.vertex_count()];
        for (e, key) in self.keys.iter().enumerate() {
            let t = self.elements[e];
            if t.iter().all(|&v| rows[v].is_some()) {
                continue;
            }
            let ce = anc[e];
            let ck = coarse.keys[ce];
            let mut w = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
            for d in ck.depth..key.depth {
                let which = ((key.path >> d) & 1) as u8;
                let m = [(w[0][0] + w[1][0]) * 0.5, (w[0][1] + w[1][1]) * 0.5, (w[0][2] + w[1][2]) * 0.5];
                w = if which == 0 { [w[2], w[0], m] } else { [w[1], w[2], m] };
            }
            let ct = coarse.elements[ce];
            for (l, &v) in t.iter().enumerate() {
                if rows[v].is_none() {
                    rows[v] = Some(
                        (0..3)
                            .filter(|&i| w[l][i] != 0.0)
                            .map(|i| (ct[i], w[l][i]))
                            .collect(),
                    );
                }
            }
        }
        Ok(Prolongation {
            rows: rows.into_iter().map(|r| r.expect("every vertex belongs to an element")).collect(),
            source_vertices: coarse.vertex_count(),
        })
    }
}

fn diameter(p: &[Point; 3]) -> f64 {
    let d = |a: Point, b: Point| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    d(p[0], p[1]).max(d(p[1], p[2])).max(d(p[2], p[0]))
}

/// Signed area and barycentric gradients of a triangle.
pub fn p1_geometry(p: &[Point; 3]) -> (f64, [[f64; 2]; 3]) {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
        g[i] = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
    }
    (0.5 * det, g)
}

/// Sparse prolongation operator between nested P1 spaces.
#[derive(Clone, Debug)]
pub struct Prolongation {
    rows: Vec<Vec<(usize, f64)>>,
    source_vertices: usize,
}

impl Prolongation {
    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn target_len(&self) -> usize {
        self.rows.len()
    }

    pub fn source_len(&self) -> usize {
        self.source_vertices
    }

    /// Coarse nodal values to fine nodal values.
    pub fn apply(&self, coarse: &[f64]) -> Vec<f64> {
        assert_eq!(coarse.len(), self.source_vertices);
        self.rows.iter().map(|r| r.iter().map(|&(j, w)| w * coarse[j]).sum()).collect()
    }

    /// Transpose action, fine dual vector to coarse dual vector.
    pub fn apply_transpose(&self, fine: &[f64]) -> Vec<f64> {
        assert_eq!(fine.len(), self.rows.len());
        let mut out = vec![0.0; self.source_vertices];
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, w) in r {
                out[j] += w * fine[i];
            }
        }
        out
    }
}
