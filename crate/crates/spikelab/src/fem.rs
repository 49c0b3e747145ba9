//! Graded triangulations of the domain and the weighted Neumann operator
//! `-div(a grad u) + a u` with natural boundary data, discretized with
//! piecewise-linear conforming elements.

use crate::geometry::DomainGeometry;
use crate::vec2::Vec2;
use crate::{Error, Result};
use std::collections::HashMap;
use std::sync::OnceLock;

/// Smallest permitted local element size; grading requests below this are
/// refused (double-precision geometry limit).
pub const H_MIN_FLOOR: f64 = 1e-12;

// ---------------------------------------------------------------------------
// weight fields

/// The positive smooth coefficient a(x) of the operator.
#[derive(Debug, Clone)]
pub enum WeightField {
    Constant(f64),
    /// a(x) = x1^k1 * x2^k2; the domain closure must sit in the open
    /// positive quadrant.
    Monomial { k1: u32, k2: u32 },
    /// a(x) = base + amp * exp(-|x - center|^2 / width^2). With `center`
    /// on the boundary this puts a strict boundary maximum with vanishing
    /// normal derivative there.
    BoundaryBump { base: f64, amp: f64, center: Vec2, width: f64 },
    Product(Box<WeightField>, Box<WeightField>),
}

impl WeightField {
    pub fn eval(&self, x: Vec2) -> f64 {
        match self {
            WeightField::Constant(c) => *c,
            WeightField::Monomial { k1, k2 } => x.x.powi(*k1 as i32) * x.y.powi(*k2 as i32),
            WeightField::BoundaryBump { base, amp, center, width } => {
                base + amp * (-(x - *center).norm2() / (width * width)).exp()
            }
            WeightField::Product(u, v) => u.eval(x) * v.eval(x),
        }
    }

    pub fn grad(&self, x: Vec2) -> Vec2 {
        match self {
            WeightField::Constant(_) => Vec2::ZERO,
            WeightField::Monomial { k1, k2 } => {
                let a = self.eval(x);
                Vec2::new(*k1 as f64 / x.x * a, *k2 as f64 / x.y * a)
            }
            WeightField::BoundaryBump { amp, center, width, .. } => {
                let d = x - *center;
                let e = amp * (-d.norm2() / (width * width)).exp();
                (-2.0 * e / (width * width)) * d
            }
            WeightField::Product(u, v) => v.eval(x) * u.grad(x) + u.eval(x) * v.grad(x),
        }
    }

    pub fn grad_log(&self, x: Vec2) -> Vec2 {
        self.grad(x) / self.eval(x)
    }

    /// Analytic Hessian, returned row-major as [[axx, axy], [axy, ayy]].
    pub fn hess(&self, x: Vec2) -> [[f64; 2]; 2] {
        match self {
            WeightField::Constant(_) => [[0.0; 2]; 2],
            WeightField::Monomial { k1, k2 } => {
                let a = self.eval(x);
                let (k1, k2) = (*k1 as f64, *k2 as f64);
                let axx = k1 * (k1 - 1.0) * a / (x.x * x.x);
                let ayy = k2 * (k2 - 1.0) * a / (x.y * x.y);
                let axy = k1 * k2 * a / (x.x * x.y);
                [[axx, axy], [axy, ayy]]
            }
            WeightField::BoundaryBump { amp, center, width, .. } => {
                let d = x - *center;
                let w2 = width * width;
                let e = amp * (-d.norm2() / w2).exp();
                let axx = e * (4.0 * d.x * d.x / (w2 * w2) - 2.0 / w2);
                let ayy = e * (4.0 * d.y * d.y / (w2 * w2) - 2.0 / w2);
                let axy = e * 4.0 * d.x * d.y / (w2 * w2);
                [[axx, axy], [axy, ayy]]
            }
            WeightField::Product(u, v) => {
                let (hu, hv) = (u.hess(x), v.hess(x));
                let (gu, gv) = (u.grad(x), v.grad(x));
                let (fu, fv) = (u.eval(x), v.eval(x));
                let mut h = [[0.0; 2]; 2];
                let gu = [gu.x, gu.y];
                let gv = [gv.x, gv.y];
                for r in 0..2 {
                    for c in 0..2 {
                        h[r][c] = fv * hu[r][c] + fu * hv[r][c] + gu[r] * gv[c] + gu[c] * gv[r];
                    }
                }
                h
            }
        }
    }

    /// Validates positivity over the mesh nodes and quadrant placement for
    /// monomial factors.
    pub fn validate(&self, dom: &DomainGeometry, nodes: &[Vec2]) -> Result<()> {
        if self.has_monomial() && !dom.in_positive_quadrant() {
            return Err(Error::Mesh(
                "monomial weight requires the domain closure in the open positive quadrant".into(),
            ));
        }
        for &p in nodes {
            if self.eval(p) <= 0.0 {
                return Err(Error::Mesh(format!(
                    "weight is not positive at node ({}, {})",
                    p.x, p.y
                )));
            }
        }
        Ok(())
    }

    fn has_monomial(&self) -> bool {
        match self {
            WeightField::Monomial { .. } => true,
            WeightField::Product(u, v) => u.has_monomial() || v.has_monomial(),
            _ => false,
        }
    }
}

// ---------------------------------------------------------------------------
// size field and mesh

/// Target local element size: `h` far away, shrinking linearly toward each
/// grading center down to that center's floor.
#[derive(Debug, Clone)]
pub struct SizeField {
    pub h: f64,
    pub centers: Vec<(Vec2, f64)>,
}

impl SizeField {
    pub fn at(&self, x: Vec2) -> f64 {
        let mut s = self.h;
        for &(c, hm) in &self.centers {
            s = s.min(hm.max(0.2 * x.dist(c)));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    /// Unit outward normal of the edge.
    pub normal: Vec2,
}

#[derive(Debug)]
pub struct Mesh {
    pub nodes: Vec<Vec2>,
    pub triangles: Vec<[usize; 3]>,
    /// Consecutive along the boundary loop, counterclockwise.
    pub boundary_edges: Vec<BoundaryEdge>,
    pub is_boundary: Vec<bool>,
    pub node_size: Vec<f64>,
    pub size: SizeField,
    locator: OnceLock<Locator>,
}

impl Mesh {
    pub fn min_angle_deg(&self) -> f64 {
        let mut worst = 180.0f64;
        for t in &self.triangles {
            let p = [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]];
            for i in 0..3 {
                let u = (p[(i + 1) % 3] - p[i]).normalized();
                let v = (p[(i + 2) % 3] - p[i]).normalized();
                worst = worst.min(u.dot(v).clamp(-1.0, 1.0).acos().to_degrees());
            }
        }
        worst
    }

    pub fn boundary_length(&self) -> f64 {
        self.boundary_edges
            .iter()
            .map(|e| self.nodes[e.nodes[0]].dist(self.nodes[e.nodes[1]]))
            .sum()
    }

    /// Plain-text export: header "nodes N / triangles M", coordinates,
    /// then index triples.
    pub fn export_text(&self) -> String {
        let mut out = format!("nodes {} / triangles {}\n", self.nodes.len(), self.triangles.len());
        for p in &self.nodes {
            out.push_str(&format!("{:.17e} {:.17e}\n", p.x, p.y));
        }
        for t in &self.triangles {
            out.push_str(&format!("{} {} {}\n", t[0], t[1], t[2]));
        }
        out
    }

    fn locator(&self) -> &Locator {
        self.locator.get_or_init(|| Locator::build(self))
    }

    /// Triangle containing `x` with barycentric coordinates, if any.
    pub fn locate(&self, x: Vec2) -> Option<(usize, [f64; 3])> {
        self.locator().locate(self, x)
    }

    /// P1 interpolation of a nodal field; nearest-node fallback just
    /// outside the mesh (within one local size).
    pub fn eval_p1(&self, u: &[f64], x: Vec2) -> Option<f64> {
        let (t, b) = self.locate(x)?;
        let tri = self.triangles[t];
        Some(b[0] * u[tri[0]] + b[1] * u[tri[1]] + b[2] * u[tri[2]])
    }

    /// P1 interpolation with linear extrapolation from the best-fitting
    /// triangle when `x` falls outside the polygonal hull (boundary nodes
    /// of a different mesh of the same smooth domain do).
    pub fn eval_p1_extrapolate(&self, u: &[f64], x: Vec2) -> f64 {
        if let Some(v) = self.eval_p1(u, x) {
            return v;
        }
        // the least-negative barycentric fit wins; first-order accurate
        // just outside the hull
        let mut best = f64::NEG_INFINITY;
        let mut val = 0.0;
        for t in &self.triangles {
            let p = [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]];
            let det = (p[1] - p[0]).cross(p[2] - p[0]);
            if det.abs() < 1e-300 {
                continue;
            }
            let b0 = (p[1] - x).cross(p[2] - x) / det;
            let b1 = (p[2] - x).cross(p[0] - x) / det;
            let b2 = 1.0 - b0 - b1;
            // normalize the deficit by the local size so tiny core
            // triangles compete fairly with coarse far-field ones
            let local = self.node_size[t[0]].min(self.node_size[t[1]]).min(self.node_size[t[2]]);
            let score = b0.min(b1).min(b2) * local;
            if score > best {
                best = score;
                val = b0 * u[t[0]] + b1 * u[t[1]] + b2 * u[t[2]];
            }
        }
        val
    }
}

/// Uniform-grid point locator over triangle bounding boxes.
#[derive(Debug)]
struct Locator {
    cell: f64,
    origin: Vec2,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl Locator {
    fn build(mesh: &Mesh) -> Locator {
        let mut lo = mesh.nodes[0];
        let mut hi = mesh.nodes[0];
        for p in &mesh.nodes {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let cell = mesh.size.h.max(1e-12);
        let nx = (((hi.x - lo.x) / cell).ceil() as usize + 1).max(1);
        let ny = (((hi.y - lo.y) / cell).ceil() as usize + 1).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        for (ti, t) in mesh.triangles.iter().enumerate() {
            let p = [mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]];
            let bx0 = ((p[0].x.min(p[1].x).min(p[2].x) - lo.x) / cell) as usize;
            let bx1 = (((p[0].x.max(p[1].x).max(p[2].x) - lo.x) / cell) as usize).min(nx - 1);
            let by0 = ((p[0].y.min(p[1].y).min(p[2].y) - lo.y) / cell) as usize;
            let by1 = (((p[0].y.max(p[1].y).max(p[2].y) - lo.y) / cell) as usize).min(ny - 1);
            for by in by0..=by1 {
                for bx in bx0..=bx1 {
                    buckets[by * nx + bx].push(ti as u32);
                }
            }
        }
        Locator { cell, origin: lo, nx, ny, buckets }
    }

    fn locate(&self, mesh: &Mesh, x: Vec2) -> Option<(usize, [f64; 3])> {
        let bx = ((x.x - self.origin.x) / self.cell).floor();
        let by = ((x.y - self.origin.y) / self.cell).floor();
        if bx < 0.0 || by < 0.0 || bx as usize >= self.nx || by as usize >= self.ny {
            return None;
        }
        let idx = by as usize * self.nx + bx as usize;
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &ti in &self.buckets[idx] {
            let t = mesh.triangles[ti as usize];
            let (p0, p1, p2) = (mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]);
            let det = (p1 - p0).cross(p2 - p0);
            if det.abs() < f64::MIN_POSITIVE {
                continue;
            }
            let b1 = (x - p0).cross(p2 - p0) / det;
            let b2 = (p1 - p0).cross(x - p0) / det;
            let b0 = 1.0 - b1 - b2;
            let slack = b0.min(b1).min(b2);
            if slack >= -1e-12 {
                return Some((ti as usize, [b0, b1, b2]));
            }
            if best.map_or(true, |(_, _, s)| slack > s) {
                best = Some((ti as usize, [b0, b1, b2], slack));
            }
        }
        // tolerate tiny excursions from curved-boundary chords
        match best {
            Some((ti, b, slack)) if slack > -1e-6 => Some((ti, b)),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// mesh generation

/// Graded Delaunay mesh: boundary nodes marched by local size, geometric
/// rings around each grading center, a hex lattice elsewhere.
pub fn build_mesh(dom: &DomainGeometry, h: f64, centers: &[(Vec2, f64)]) -> Result<Mesh> {
    if h <= 0.0 {
        return Err(Error::Mesh(format!("target size {h} must be positive")));
    }
    for &(c, hm) in centers {
        if hm < H_MIN_FLOOR {
            return Err(Error::Mesh(format!(
                "grading request {hm:e} at ({}, {}) is below the {H_MIN_FLOOR:e} floor and is refused",
                c.x, c.y
            )));
        }
        if hm > h {
            return Err(Error::Mesh(format!("grading size {hm} exceeds the target size {h}")));
        }
    }
    let size = SizeField { h, centers: centers.to_vec() };

    // boundary march, anchored at boundary-adjacent grading centers
    let mut anchors: Vec<f64> = Vec::new();
    for &(c, hm) in centers {
        let (s, d) = nearest_boundary_param(dom, c);
        if d < 10.0 * hm {
            anchors.push(s);
        }
    }
    anchors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    anchors.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if anchors.is_empty() {
        anchors.push(0.0);
    }

    let mut bparams: Vec<f64> = Vec::new();
    let na = anchors.len();
    for i in 0..na {
        let s_a = anchors[i];
        let s_b = if i + 1 < na { anchors[i + 1] } else { anchors[0] + 1.0 };
        // march, then rescale the steps so the interval closes exactly
        let mut ts = vec![s_a];
        let mut t = s_a;
        loop {
            let ds = size.at(dom.point(t)) / dom.velocity(t).norm();
            t += ds;
            ts.push(t);
            if t >= s_b {
                break;
            }
        }
        let scale = (s_b - s_a) / (ts[ts.len() - 1] - s_a);
        for (k, &tk) in ts.iter().enumerate().take(ts.len() - 1) {
            if k == 0 {
                bparams.push(s_a);
            } else {
                bparams.push(s_a + (tk - s_a) * scale);
            }
        }
    }
    let nb = bparams.len();
    if nb < 8 {
        return Err(Error::Mesh("boundary resolution produced fewer than 8 nodes".into()));
    }

    let mut nodes: Vec<Vec2> = bparams.iter().map(|&s| dom.point(s)).collect();
    let mut structural = nodes.len();

    // proximity structure over the boundary polyline
    let bprox = SegmentProx::new(&nodes);

    let mut grid = PointGrid::new(h);
    for (i, &p) in nodes.iter().enumerate() {
        grid.insert(p, i);
    }

    // geometric rings around each grading center
    let mut ring_pts: Vec<(f64, Vec2)> = Vec::new();
    for &(c, hm) in centers {
        if dom.contains(c) || bprox.dist(c) < 10.0 * hm {
            ring_pts.push((hm, c));
        }
        let r_stop = 2.6 * h;
        let mut r = hm;
        let mut k = 0;
        while r < r_stop {
            let local = size.at(c + Vec2::new(r, 0.0));
            let n_pts = ((std::f64::consts::TAU * r) / (0.5 * local)).ceil().max(8.0) as usize;
            let phase = 0.381966 * std::f64::consts::TAU * k as f64;
            for j in 0..n_pts {
                let ang = phase + std::f64::consts::TAU * j as f64 / n_pts as f64;
                let p = c + r * Vec2::new(ang.cos(), ang.sin());
                if dom.contains(p) && bprox.dist(p) > 0.45 * size.at(p) {
                    ring_pts.push((size.at(p), p));
                }
            }
            r *= 1.35;
            k += 1;
        }
    }
    ring_pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for (s, p) in ring_pts {
        if grid.nearest_within(p, 0.5 * s).is_none() {
            grid.insert(p, nodes.len());
            nodes.push(p);
        }
    }
    structural = structural.max(nodes.len());

    // hex lattice at the far-field size
    let (lo, hi) = dom.bbox();
    let dy = h * 3.0f64.sqrt() / 2.0;
    let mut row = 0usize;
    let mut y = lo.y + 0.5 * dy;
    while y < hi.y {
        let x0 = lo.x + if row % 2 == 0 { 0.5 * h } else { h };
        let mut x = x0;
        while x < hi.x {
            let p = Vec2::new(x, y);
            if dom.contains(p) && bprox.dist(p) > 0.6 * size.at(p) {
                let s = size.at(p);
                if grid.nearest_within(p, 0.6 * s).is_none() {
                    grid.insert(p, nodes.len());
                    nodes.push(p);
                }
            }
            x += h;
        }
        y += dy;
        row += 1;
    }

    // Delaunay, two Laplacian smoothing passes on lattice nodes, re-Delaunay
    let mut tris = delaunay(&nodes)?;
    for _ in 0..2 {
        let mut acc = vec![Vec2::ZERO; nodes.len()];
        let mut cnt = vec![0u32; nodes.len()];
        for t in &tris {
            for i in 0..3 {
                let a = t[i];
                let b = t[(i + 1) % 3];
                acc[a] = acc[a] + nodes[b];
                cnt[a] += 1;
                acc[b] = acc[b] + nodes[a];
                cnt[b] += 1;
            }
        }
        for i in structural..nodes.len() {
            if cnt[i] > 0 {
                let target = acc[i] / cnt[i] as f64;
                if dom.contains(target) && bprox.dist(target) > 0.5 * size.at(target) {
                    nodes[i] = target;
                }
            }
        }
        tris = delaunay(&nodes)?;
    }

    // drop triangles outside the (possibly nonconvex) domain
    tris.retain(|t| {
        let c = (nodes[t[0]] + nodes[t[1]] + nodes[t[2]]) / 3.0;
        dom.contains(c)
    });

    // boundary loop edges must exist in the triangulation
    let mut edge_set: std::collections::HashSet<(usize, usize)> = std::collections::HashSet::new();
    for t in &tris {
        for i in 0..3 {
            let (a, b) = (t[i], t[(i + 1) % 3]);
            edge_set.insert((a.min(b), a.max(b)));
        }
    }
    let mut boundary_edges = Vec::with_capacity(nb);
    for i in 0..nb {
        let (a, b) = (i, (i + 1) % nb);
        if !edge_set.contains(&(a.min(b), a.max(b))) {
            return Err(Error::Mesh(format!(
                "boundary edge {a}-{b} missing from the triangulation"
            )));
        }
        let e = nodes[b] - nodes[a];
        boundary_edges.push(BoundaryEdge {
            nodes: [a, b],
            normal: Vec2::new(e.y, -e.x).normalized(),
        });
    }

    let mut is_boundary = vec![false; nodes.len()];
    for f in is_boundary.iter_mut().take(nb) {
        *f = true;
    }
    let node_size = nodes.iter().map(|&p| size.at(p)).collect();

    Ok(Mesh {
        nodes,
        triangles: tris,
        boundary_edges,
        is_boundary,
        node_size,
        size,
        locator: OnceLock::new(),
    })
}

/// Closest boundary parameter without the interior-point requirement of
/// `dist_to_boundary` (used to anchor boundary grading centers).
pub fn nearest_boundary_param(dom: &DomainGeometry, p: Vec2) -> (f64, f64) {
    const SCAN: usize = 1024;
    let mut best = (0.0, f64::INFINITY);
    for i in 0..SCAN {
        let s = i as f64 / SCAN as f64;
        let d = dom.point(s).dist(p);
        if d < best.1 {
            best = (s, d);
        }
    }
    // golden-section polish
    let g = |s: f64| dom.point(s).dist(p);
    let (mut lo, mut hi) = (best.0 - 1.0 / SCAN as f64, best.0 + 1.0 / SCAN as f64);
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let (mut gc, mut gd) = (g(c), g(d));
    while hi - lo > 1e-14 {
        if gc < gd {
            hi = d;
            d = c;
            gd = gc;
            c = hi - phi * (hi - lo);
            gc = g(c);
        } else {
            lo = c;
            c = d;
            gc = gd;
            d = lo + phi * (hi - lo);
            gd = g(d);
        }
    }
    let s = 0.5 * (lo + hi);
    (s.rem_euclid(1.0), g(s))
}

fn delaunay(nodes: &[Vec2]) -> Result<Vec<[usize; 3]>> {
    use spade::{DelaunayTriangulation, Point2, Triangulation};
    let mut dt: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    let mut handle_to_node = HashMap::new();
    for (i, p) in nodes.iter().enumerate() {
        let h = dt
            .insert(Point2::new(p.x, p.y))
            .map_err(|e| Error::Mesh(format!("triangulation rejected node {i}: {e:?}")))?;
        handle_to_node.insert(h, i);
    }
    if handle_to_node.len() != nodes.len() {
        return Err(Error::Mesh("duplicate nodes in triangulation input".into()));
    }
    let mut tris = Vec::with_capacity(dt.num_inner_faces());
    for f in dt.inner_faces() {
        let vs = f.vertices();
        let t = [
            handle_to_node[&vs[0].fix()],
            handle_to_node[&vs[1].fix()],
            handle_to_node[&vs[2].fix()],
        ];
        tris.push(t);
    }
    Ok(tris)
}

/// Spatial hash for rejection-radius queries during node placement.
struct PointGrid {
    cell: f64,
    map: HashMap<(i64, i64), Vec<(Vec2, usize)>>,
}

impl PointGrid {
    fn new(cell: f64) -> Self {
        PointGrid { cell, map: HashMap::new() }
    }

    fn key(&self, p: Vec2) -> (i64, i64) {
        ((p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64)
    }

    fn insert(&mut self, p: Vec2, idx: usize) {
        self.map.entry(self.key(p)).or_default().push((p, idx));
    }

    fn nearest_within(&self, p: Vec2, r: f64) -> Option<usize> {
        let (kx, ky) = self.key(p);
        let span = (r / self.cell).ceil() as i64;
        for dx in -span..=span {
            for dy in -span..=span {
                if let Some(v) = self.map.get(&(kx + dx, ky + dy)) {
                    for &(q, idx) in v {
                        if q.dist(p) < r {
                            return Some(idx);
                        }
                    }
                }
            }
        }
        None
    }
}

/// Distance queries against a closed polyline (the marched boundary).
struct SegmentProx {
    pts: Vec<Vec2>,
    grid: HashMap<(i64, i64), Vec<u32>>,
    cell: f64,
}

impl SegmentProx {
    fn new(pts: &[Vec2]) -> Self {
        let n = pts.len();
        let mut maxlen = 0.0f64;
        for i in 0..n {
            maxlen = maxlen.max(pts[i].dist(pts[(i + 1) % n]));
        }
        let cell = maxlen.max(1e-12);
        let mut grid: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for i in 0..n {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            let kx0 = ((a.x.min(b.x)) / cell).floor() as i64;
            let kx1 = ((a.x.max(b.x)) / cell).floor() as i64;
            let ky0 = ((a.y.min(b.y)) / cell).floor() as i64;
            let ky1 = ((a.y.max(b.y)) / cell).floor() as i64;
            for kx in kx0..=kx1 {
                for ky in ky0..=ky1 {
                    grid.entry((kx, ky)).or_default().push(i as u32);
                }
            }
        }
        SegmentProx { pts: pts.to_vec(), grid, cell }
    }

    /// Distance to the polyline; exact within the 3x3 cell neighborhood,
    /// a safe lower bound beyond it.
    fn dist(&self, p: Vec2) -> f64 {
        let kx = (p.x / self.cell).floor() as i64;
        let ky = (p.y / self.cell).floor() as i64;
        let n = self.pts.len();
        let mut best = f64::INFINITY;
        let mut found = false;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(v) = self.grid.get(&(kx + dx, ky + dy)) {
                    for &i in v {
                        let a = self.pts[i as usize];
                        let b = self.pts[(i as usize + 1) % n];
                        best = best.min(seg_dist(p, a, b));
                        found = true;
                    }
                }
            }
        }
        if found {
            best
        } else {
            self.cell
        }
    }
}

fn seg_dist(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.norm2()).clamp(0.0, 1.0);
    p.dist(a + t * ab)
}

// ---------------------------------------------------------------------------
// sparse matrices and the direct solver

#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn from_rows(rows: Vec<std::collections::BTreeMap<usize, f64>>) -> Csr {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for r in rows {
            for (c, v) in r {
                col_idx.push(c);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Csr { n, row_ptr, col_idx, vals }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
    }

    pub fn symmetry_defect(&self) -> f64 {
        let mut lookup = HashMap::new();
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                lookup.insert((i, self.col_idx[k]), self.vals[k]);
            }
        }
        let mut d = 0.0f64;
        for (&(i, j), &v) in &lookup {
            d = d.max((v - lookup.get(&(j, i)).copied().unwrap_or(0.0)).abs());
        }
        d
    }
}

/// Reverse Cuthill-McKee ordering: perm[new] = old.
pub fn rcm_order(a: &Csr) -> Vec<usize> {
    let n = a.n;
    let degree = |i: usize| a.row_ptr[i + 1] - a.row_ptr[i];
    // pseudo-peripheral start by double BFS
    let bfs_far = |start: usize| -> usize {
        let mut seen = vec![false; n];
        let mut q = std::collections::VecDeque::from([start]);
        seen[start] = true;
        let mut last = start;
        while let Some(u) = q.pop_front() {
            last = u;
            for k in a.row_ptr[u]..a.row_ptr[u + 1] {
                let v = a.col_idx[k];
                if !seen[v] {
                    seen[v] = true;
                    q.push_back(v);
                }
            }
        }
        last
    };
    let start = bfs_far(bfs_far(0));

    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let mut q = std::collections::VecDeque::new();
    let enqueue_component = |s: usize, seen: &mut Vec<bool>, q: &mut std::collections::VecDeque<usize>| {
        seen[s] = true;
        q.push_back(s);
    };
    enqueue_component(start, &mut seen, &mut q);
    loop {
        while let Some(u) = q.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = (a.row_ptr[u]..a.row_ptr[u + 1])
                .map(|k| a.col_idx[k])
                .filter(|&v| !seen[v])
                .collect();
            nbrs.sort_by_key(|&v| degree(v));
            for v in nbrs {
                if !seen[v] {
                    seen[v] = true;
                    q.push_back(v);
                }
            }
        }
        match (0..n).find(|&i| !seen[i]) {
            Some(s) => enqueue_component(s, &mut seen, &mut q),
            None => break,
        }
    }
    order.reverse();
    order
}

/// Symmetric profile (skyline) LDL^T factorization of a permuted sparse
/// matrix. Pivots may be negative (the Newton Jacobian is indefinite);
/// positive-definiteness can be queried after factorization.
pub struct SkylineLdl {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    first: Vec<usize>,
    rows: Vec<Vec<f64>>,
    diag: Vec<f64>,
    pub positive_definite: bool,
}

impl SkylineLdl {
    pub fn factor(a: &Csr, perm: Vec<usize>) -> Result<SkylineLdl> {
        let n = a.n;
        let mut inv_perm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }
        let inv_perm_local = inv_perm;
        let inv_perm = &inv_perm_local;
        // profile: first nonzero column per permuted row
        let mut first = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            let mut f = new;
            for k in a.row_ptr[old]..a.row_ptr[old + 1] {
                f = f.min(inv_perm[a.col_idx[k]]);
            }
            first[new] = f;
        }
        // column profile must be monotone enough for skyline access:
        // entry (i,j) with j<i requires first[i] <= j, which holds by
        // construction; but the factor fills the whole profile band.
        let mut rows: Vec<Vec<f64>> = (0..n).map(|i| vec![0.0; i - first[i]]).collect();
        let mut diag = vec![0.0; n];
        for (new, &old) in perm.iter().enumerate() {
            for k in a.row_ptr[old]..a.row_ptr[old + 1] {
                let j = inv_perm[a.col_idx[k]];
                match j.cmp(&new) {
                    std::cmp::Ordering::Less => rows[new][j - first[new]] = a.vals[k],
                    std::cmp::Ordering::Equal => diag[new] = a.vals[k],
                    std::cmp::Ordering::Greater => {}
                }
            }
        }

        // in-place LDL^T restricted to the profile
        let mut positive_definite = true;
        let mut scale = 0.0f64;
        for &d in &diag {
            scale = scale.max(d.abs());
        }
        for i in 0..n {
            // update row i against previous rows
            for j in first[i]..i {
                let mut s = rows[i][j - first[i]];
                let lo = first[i].max(first[j]);
                for k in lo..j {
                    s -= rows[i][k - first[i]] * rows[j][k - first[j]] * diag[k];
                }
                rows[i][j - first[i]] = s / diag[j];
            }
            let mut d = diag[i];
            for k in first[i]..i {
                let l = rows[i][k - first[i]];
                d -= l * l * diag[k];
            }
            if d <= 0.0 {
                positive_definite = false;
            }
            if d.abs() <= 1e-300 * scale.max(1.0) {
                return Err(Error::Solve(format!("zero pivot at permuted row {i}")));
            }
            diag[i] = d;
        }
        Ok(SkylineLdl { n, perm, first, rows, diag, positive_definite })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        for i in 0..n {
            let mut s = y[i];
            for k in self.first[i]..i {
                s -= self.rows[i][k - self.first[i]] * y[k];
            }
            y[i] = s;
        }
        for i in 0..n {
            y[i] /= self.diag[i];
        }
        for i in (0..n).rev() {
            let yi = y[i];
            for k in self.first[i]..i {
                y[k] -= self.rows[i][k - self.first[i]] * yi;
            }
        }
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.perm[i]] = y[i];
        }
        x
    }
}

/// Direct solve with iterative refinement to relative residual `tol`.
pub fn solve_refined(a: &Csr, ldl: &SkylineLdl, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let bn = b.iter().fold(0.0f64, |s, &v| s + v * v).sqrt();
    if bn == 0.0 {
        return Ok(vec![0.0; a.n]);
    }
    let mut x = ldl.solve(b);
    let mut r = vec![0.0; a.n];
    for _ in 0..6 {
        a.matvec(&x, &mut r);
        for i in 0..a.n {
            r[i] = b[i] - r[i];
        }
        let rn = r.iter().fold(0.0f64, |s, &v| s + v * v).sqrt();
        if rn <= tol * bn {
            return Ok(x);
        }
        let dx = ldl.solve(&r);
        for i in 0..a.n {
            x[i] += dx[i];
        }
    }
    a.matvec(&x, &mut r);
    for i in 0..a.n {
        r[i] = b[i] - r[i];
    }
    let rn = r.iter().fold(0.0f64, |s, &v| s + v * v).sqrt();
    if rn <= tol * bn {
        Ok(x)
    } else {
        Err(Error::Solve(format!(
            "iterative refinement stalled at relative residual {:e}",
            rn / bn
        )))
    }
}

// ---------------------------------------------------------------------------
// the assembled operator

/// 7-point degree-5 triangle rule: barycentric coordinates and weights
/// (weights sum to 1, scale by the triangle area).
pub const TRI7: [([f64; 3], f64); 7] = [
    ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
    ([0.059715871789770, 0.470142064105115, 0.470142064105115], 0.132394152788506),
    ([0.470142064105115, 0.059715871789770, 0.470142064105115], 0.132394152788506),
    ([0.470142064105115, 0.470142064105115, 0.059715871789770], 0.132394152788506),
    ([0.797426985353087, 0.101286507323456, 0.101286507323456], 0.125939180544827),
    ([0.101286507323456, 0.797426985353087, 0.101286507323456], 0.125939180544827),
    ([0.101286507323456, 0.101286507323456, 0.797426985353087], 0.125939180544827),
];

/// 4-point Gauss rule on [0,1].
pub const EDGE4: [(f64, f64); 4] = [
    (0.069431844202974, 0.173927422568727),
    (0.330009478207572, 0.326072577431273),
    (0.669990521792428, 0.326072577431273),
    (0.930568155797026, 0.173927422568727),
];

pub struct MeshedOperator {
    pub mesh: Mesh,
    pub weight: WeightField,
    /// Assembled matrix of the bilinear form `int a (grad u . grad v + u v)`.
    pub matrix: Csr,
    factor: OnceLock<SkylineLdl>,
}

impl MeshedOperator {
    pub fn assemble(dom: &DomainGeometry, mesh: Mesh, weight: WeightField) -> Result<MeshedOperator> {
        weight.validate(dom, &mesh.nodes)?;
        let n = mesh.nodes.len();
        let mut rows: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n];
        for t in &mesh.triangles {
            let p = [mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]];
            let det = (p[1] - p[0]).cross(p[2] - p[0]);
            let area = 0.5 * det;
            if area <= 0.0 {
                return Err(Error::Mesh("triangle with non-positive area".into()));
            }
            // constant gradients of the barycentric functions
            let g = [
                (p[1] - p[2]).perp() / det,
                (p[2] - p[0]).perp() / det,
                (p[0] - p[1]).perp() / det,
            ];
            let mut a_int = 0.0; // int_T a
            let mut mass = [[0.0f64; 3]; 3]; // int_T a phi_i phi_j
            for (bary, w) in TRI7 {
                let x = bary[0] * p[0] + bary[1] * p[1] + bary[2] * p[2];
                let aw = w * weight.eval(x);
                a_int += aw;
                for i in 0..3 {
                    for j in 0..3 {
                        mass[i][j] += aw * bary[i] * bary[j];
                    }
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    let v = area * (a_int * g[i].dot(g[j]) + mass[i][j]);
                    *rows[t[i]].entry(t[j]).or_insert(0.0) += v;
                }
            }
        }
        let matrix = Csr::from_rows(rows);
        Ok(MeshedOperator { mesh, weight, matrix, factor: OnceLock::new() })
    }

    pub fn factorization(&self) -> Result<&SkylineLdl> {
        if self.factor.get().is_none() {
            let perm = rcm_order(&self.matrix);
            let f = SkylineLdl::factor(&self.matrix, perm)?;
            if !f.positive_definite {
                return Err(Error::Solve("operator matrix is not positive definite".into()));
            }
            let _ = self.factor.set(f);
        }
        Ok(self.factor.get().unwrap())
    }

    /// Solves A u = rhs to relative residual 1e-10.
    pub fn solve_rhs(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        solve_refined(&self.matrix, self.factorization()?, rhs, 1e-10)
    }

    /// Weak Neumann solve: `int a (grad u . grad v + u v) = int a f v +
    /// oint a g v`. `g` receives position and unit outward normal.
    pub fn neumann_solve(
        &self,
        f: &dyn Fn(Vec2) -> f64,
        g: &dyn Fn(Vec2, Vec2) -> f64,
    ) -> Result<Vec<f64>> {
        let (u, _w) = self.neumann_solve_singular(f, g, &[])?;
        Ok(u)
    }

    /// Same as `neumann_solve`, with graded quadrature (3-level 4-way
    /// subdivision) on elements within 3 local sizes of any point in
    /// `singular`, where `f` or `g` may have integrable singularities.
    pub fn neumann_solve_singular(
        &self,
        f: &dyn Fn(Vec2) -> f64,
        g: &dyn Fn(Vec2, Vec2) -> f64,
        singular: &[Vec2],
    ) -> Result<(Vec<f64>, Vec<String>)> {
        let mesh = &self.mesh;
        let n = mesh.nodes.len();
        let mut warnings = Vec::new();

        // quadrature points must not coincide with a singularity; shift the
        // offending singular point by h_min/100 as the evaluation location
        let mut sing: Vec<Vec2> = singular.to_vec();
        let h_floor = mesh.node_size.iter().cloned().fold(f64::INFINITY, f64::min);
        for s in sing.iter_mut() {
            for (i, &p) in mesh.nodes.iter().enumerate() {
                if p.dist(*s) < h_floor / 100.0 {
                    warnings.push(format!(
                        "singular point coincides with node {i}; perturbed by {:e}",
                        h_floor / 100.0
                    ));
                    *s = *s + Vec2::new(h_floor / 100.0, h_floor / 130.0);
                    break;
                }
            }
        }

        let mut rhs = vec![0.0f64; n];
        for t in &mesh.triangles {
            let p = [mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]];
            let local = mesh.node_size[t[0]].min(mesh.node_size[t[1]]).min(mesh.node_size[t[2]]);
            let near = sing.iter().any(|s| {
                p.iter().any(|&v| v.dist(*s) < 3.0 * local)
            });
            let levels = if near { 3 } else { 0 };
            tri_rhs(&p, *t, levels, &self.weight, f, &mut rhs);
        }
        for e in &mesh.boundary_edges {
            let (a, b) = (mesh.nodes[e.nodes[0]], mesh.nodes[e.nodes[1]]);
            let local = mesh.node_size[e.nodes[0]].min(mesh.node_size[e.nodes[1]]);
            let near = sing.iter().any(|s| a.dist(*s) < 3.0 * local || b.dist(*s) < 3.0 * local);
            let pieces = if near { 8 } else { 1 };
            let len = a.dist(b) / pieces as f64;
            for k in 0..pieces {
                let t0 = k as f64 / pieces as f64;
                let t1 = (k + 1) as f64 / pieces as f64;
                for (q, w) in EDGE4 {
                    let t = t0 + q * (t1 - t0);
                    let x = a + t * (b - a);
                    let v = w * len * self.weight.eval(x) * g(x, e.normal);
                    rhs[e.nodes[0]] += v * (1.0 - t);
                    rhs[e.nodes[1]] += v * t;
                }
            }
        }
        let u = self.solve_rhs(&rhs)?;
        Ok((u, warnings))
    }

    /// L2 norm of `field - exact` over the mesh.
    pub fn l2_error(&self, field: &[f64], exact: &dyn Fn(Vec2) -> f64) -> f64 {
        let mesh = &self.mesh;
        let mut s = 0.0;
        for t in &mesh.triangles {
            let p = [mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]];
            let area = 0.5 * (p[1] - p[0]).cross(p[2] - p[0]);
            for (bary, w) in TRI7 {
                let x = bary[0] * p[0] + bary[1] * p[1] + bary[2] * p[2];
                let uh = bary[0] * field[t[0]] + bary[1] * field[t[1]] + bary[2] * field[t[2]];
                let d = uh - exact(x);
                s += w * area * d * d;
            }
        }
        s.sqrt()
    }
}

/// Accumulates `int_T a f phi_i` with `levels` rounds of midpoint
/// subdivision (4^levels subtriangles, 7-point rule on each).
fn tri_rhs(
    p: &[Vec2; 3],
    t: [usize; 3],
    levels: u32,
    weight: &WeightField,
    f: &dyn Fn(Vec2) -> f64,
    rhs: &mut [f64],
) {
    // barycentric frame of the parent triangle, used to evaluate the
    // parent hat functions at subdivided quadrature points
    let det = (p[1] - p[0]).cross(p[2] - p[0]);
    let bary_of = |x: Vec2| -> [f64; 3] {
        let b1 = (x - p[0]).cross(p[2] - p[0]) / det;
        let b2 = (p[1] - p[0]).cross(x - p[0]) / det;
        [1.0 - b1 - b2, b1, b2]
    };
    let mut stack = vec![(*p, levels)];
    while let Some((q, lv)) = stack.pop() {
        if lv == 0 {
            let area = 0.5 * (q[1] - q[0]).cross(q[2] - q[0]);
            for (bary, w) in TRI7 {
                let x = bary[0] * q[0] + bary[1] * q[1] + bary[2] * q[2];
                let v = w * area * weight.eval(x) * f(x);
                if v == 0.0 {
                    continue;
                }
                let pb = bary_of(x);
                for i in 0..3 {
                    rhs[t[i]] += v * pb[i];
                }
            }
        } else {
            let m01 = 0.5 * (q[0] + q[1]);
            let m12 = 0.5 * (q[1] + q[2]);
            let m20 = 0.5 * (q[2] + q[0]);
            stack.push(([q[0], m01, m20], lv - 1));
            stack.push(([m01, q[1], m12], lv - 1));
            stack.push(([m20, m12, q[2]], lv - 1));
            stack.push(([m01, m12, m20], lv - 1));
        }
    }
}
