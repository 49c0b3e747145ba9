//! Green's function of the weighted Neumann operator: the regular part
//! `H(.,y)` solved as a field, the singular log kernel, and the Robin
//! function `H(y,y)` extracted by a local quadratic fit.
//!
//! Conventions: for an interior source `G = H - (1/2pi) log|x-y|` with
//! interaction constant `c = 8pi`; for a boundary source the kernel
//! coefficient doubles (`1/pi`) and `c = 4pi`.

use crate::fem::{Mesh, MeshedOperator};
use crate::vec2::Vec2;
use crate::{Error, Result};
use std::collections::HashMap;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceKind {
    Interior,
    Boundary,
}

impl SourceKind {
    /// Interaction constant: 8 pi interior, 4 pi boundary.
    pub fn c(self) -> f64 {
        match self {
            SourceKind::Interior => 8.0 * std::f64::consts::PI,
            SourceKind::Boundary => 4.0 * std::f64::consts::PI,
        }
    }

    /// Coefficient of the singular kernel `log|x-y|`; equals `4/c`.
    pub fn log_coeff(self) -> f64 {
        4.0 / self.c()
    }
}

#[derive(Debug, Clone)]
pub struct GreenData {
    pub source: Vec2,
    pub kind: SourceKind,
    /// Nodal field of the regular part H(., y).
    pub h_field: Vec<f64>,
    /// H(y, y) from the local quadratic fit.
    pub robin: f64,
    /// RMS residual of the quadratic fit (error estimate).
    pub robin_fit_err: f64,
}

impl GreenData {
    /// `G(x, y) = H(x, y) - log_coeff * log|x - y|`.
    pub fn green_eval(&self, mesh: &Mesh, x: Vec2) -> Result<f64> {
        let h_min = mesh.node_size.iter().cloned().fold(f64::INFINITY, f64::min);
        let r = x.dist(self.source);
        if r < h_min / 10.0 {
            return Err(Error::Greens(format!(
                "evaluation point within {r:e} of the source; kernel unreliable below {:e}",
                h_min / 10.0
            )));
        }
        let h = match mesh.eval_p1(&self.h_field, x) {
            Some(v) => v,
            None => {
                // boundary points of the smooth domain can fall just outside
                // the polygonal hull; fall back to the nearest node when it
                // is within its own local size
                let (i, d) = mesh
                    .nodes
                    .iter()
                    .enumerate()
                    .map(|(i, &q)| (i, q.dist(x)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap();
                if d > mesh.node_size[i] {
                    return Err(Error::Greens(format!(
                        "point ({}, {}) outside the mesh",
                        x.x, x.y
                    )));
                }
                self.h_field[i]
            }
        };
        Ok(h - self.kind.log_coeff() * r.ln())
    }

    /// G at a mesh node by index (no interpolation).
    pub fn green_at_node(&self, mesh: &Mesh, i: usize) -> f64 {
        self.h_field[i] - self.kind.log_coeff() * mesh.nodes[i].dist(self.source).ln()
    }
}

/// Solves the regular-part PDE
/// `-Delta_a H + H = (4/c) [ log|x-y| - (x-y).grad log a / |x-y|^2 ]` with
/// flux `(4/c) (x-y).nu / |x-y|^2`, then extracts the Robin value.
pub fn regular_part(op: &MeshedOperator, y: Vec2, kind: SourceKind) -> Result<GreenData> {
    let mesh = &op.mesh;
    let local = mesh.size.at(y);
    let y = match kind {
        SourceKind::Boundary => {
            // snap to the nearest boundary node so the flux stays
            // well-defined elementwise
            let bi = mesh
                .boundary_edges
                .iter()
                .map(|e| e.nodes[0])
                .min_by(|&a, &b| {
                    mesh.nodes[a].dist(y).partial_cmp(&mesh.nodes[b].dist(y)).unwrap()
                })
                .ok_or_else(|| Error::Greens("mesh has no boundary".into()))?;
            let snapped = mesh.nodes[bi];
            if snapped.dist(y) > mesh.size.h {
                return Err(Error::Greens(format!(
                    "requested boundary source ({}, {}) is {:.3e} from the boundary",
                    y.x,
                    y.y,
                    snapped.dist(y)
                )));
            }
            snapped
        }
        SourceKind::Interior => {
            // the flux data (x-y).nu/|x-y|^2 is near-singular for sources
            // hugging the boundary
            let bd = mesh
                .boundary_edges
                .iter()
                .map(|e| {
                    let (a, b) = (mesh.nodes[e.nodes[0]], mesh.nodes[e.nodes[1]]);
                    seg_dist(y, a, b)
                })
                .fold(f64::INFINITY, f64::min);
            if bd < 2.0 * local {
                return Err(Error::Greens(format!(
                    "interior source at distance {bd:e} from the boundary is closer than two \
                     local element sizes ({:e}); grade the mesh finer at the source",
                    local
                )));
            }
            y
        }
    };

    let k = kind.log_coeff();
    let f = move |x: Vec2| {
        let d = x - y;
        let r2 = d.norm2();
        k * (0.5 * r2.ln() - d.dot(op.weight.grad_log(x)) / r2)
    };
    let g = move |x: Vec2, nu: Vec2| {
        let d = x - y;
        k * d.dot(nu) / d.norm2()
    };
    let (h_field, _warn) = op.neumann_solve_singular(&f, &g, &[y])?;

    let (robin, robin_fit_err) = quadratic_fit_at(mesh, &h_field, y)?;
    Ok(GreenData { source: y, kind, h_field, robin, robin_fit_err })
}

/// Robin function H(y,y).
pub fn robin_function(op: &MeshedOperator, y: Vec2, kind: SourceKind) -> Result<f64> {
    Ok(regular_part(op, y, kind)?.robin)
}

/// Least-squares quadratic fit of a nodal field over the nodes within
/// five local sizes of `y`; returns (value at y, RMS fit residual).
fn quadratic_fit_at(mesh: &Mesh, field: &[f64], y: Vec2) -> Result<(f64, f64)> {
    let mut radius = 5.0 * mesh.size.at(y);
    let mut pts: Vec<(Vec2, f64)> = Vec::new();
    for _ in 0..8 {
        pts.clear();
        for (i, &p) in mesh.nodes.iter().enumerate() {
            if p.dist(y) <= radius {
                pts.push((p - y, field[i]));
            }
        }
        if pts.len() >= 10 {
            break;
        }
        radius *= 1.5;
    }
    if pts.len() < 6 {
        return Err(Error::Greens("too few nodes near the source for the Robin fit".into()));
    }
    // scale offsets by the radius for conditioning
    let basis = |d: Vec2| -> [f64; 6] {
        let (u, v) = (d.x / radius, d.y / radius);
        [1.0, u, v, u * u, u * v, v * v]
    };
    let mut ata = [[0.0f64; 6]; 6];
    let mut atb = [0.0f64; 6];
    for &(d, val) in &pts {
        let b = basis(d);
        for i in 0..6 {
            for j in 0..6 {
                ata[i][j] += b[i] * b[j];
            }
            atb[i] += b[i] * val;
        }
    }
    let coef = solve6(ata, atb)
        .ok_or_else(|| Error::Greens("degenerate quadratic fit at the source".into()))?;
    let mut rss = 0.0;
    for &(d, val) in &pts {
        let b = basis(d);
        let pred: f64 = (0..6).map(|i| coef[i] * b[i]).sum();
        rss += (pred - val) * (pred - val);
    }
    Ok((coef[0], (rss / pts.len() as f64).sqrt()))
}

fn solve6(mut a: [[f64; 6]; 6], mut b: [f64; 6]) -> Option<[f64; 6]> {
    for col in 0..6 {
        let piv = (col..6).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..6 {
            let f = a[row][col] / a[col][col];
            for k in col..6 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 6];
    for col in (0..6).rev() {
        let mut s = b[col];
        for k in (col + 1)..6 {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

fn seg_dist(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.norm2()).clamp(0.0, 1.0);
    p.dist(a + t * ab)
}

/// Cache of computed sources against one shared operator, keyed by the
/// source position quantized at 1e-4 of the domain diameter.
pub struct GreenCache<'a> {
    pub op: &'a MeshedOperator,
    quant: f64,
    map: HashMap<(SourceKind, i64, i64), Arc<GreenData>>,
}

impl<'a> GreenCache<'a> {
    pub fn new(op: &'a MeshedOperator) -> Self {
        let mut lo = op.mesh.nodes[0];
        let mut hi = op.mesh.nodes[0];
        for p in &op.mesh.nodes {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let diam = (hi - lo).norm().max(1e-12);
        GreenCache { op, quant: 1e-4 * diam, map: HashMap::new() }
    }

    pub fn get(&mut self, y: Vec2, kind: SourceKind) -> Result<Arc<GreenData>> {
        let key = (
            kind,
            (y.x / self.quant).round() as i64,
            (y.y / self.quant).round() as i64,
        );
        if let Some(g) = self.map.get(&key) {
            return Ok(g.clone());
        }
        let g = Arc::new(regular_part(self.op, y, kind)?);
        self.map.insert(key, g.clone());
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_mesh, WeightField};
    use crate::geometry::DomainGeometry;
    use rand::{RngExt, SeedableRng};

    fn disk_op(h: f64, centers: &[(Vec2, f64)]) -> MeshedOperator {
        let dom = DomainGeometry::disk(Vec2::ZERO, 1.0).unwrap();
        let mesh = build_mesh(&dom, h, centers).unwrap();
        MeshedOperator::assemble(&dom, mesh, WeightField::Constant(1.0)).unwrap()
    }

    #[test]
    fn kind_constants_are_consistent() {
        assert!((SourceKind::Interior.c() - 8.0 * std::f64::consts::PI).abs() < 1e-15);
        assert!((SourceKind::Boundary.c() - 4.0 * std::f64::consts::PI).abs() < 1e-15);
        assert!((SourceKind::Interior.log_coeff() - 0.5 / std::f64::consts::PI).abs() < 1e-15);
        assert!((SourceKind::Boundary.log_coeff() - 1.0 / std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn unweighted_symmetry_and_positivity() {
        let y1 = Vec2::new(0.3, 0.0);
        let y2 = Vec2::new(-0.5, 0.1);
        let op = disk_op(0.08, &[(y1, 0.01), (y2, 0.01)]);
        let g1 = regular_part(&op, y1, SourceKind::Interior).unwrap();
        let g2 = regular_part(&op, y2, SourceKind::Interior).unwrap();
        let a = g1.green_eval(&op.mesh, y2).unwrap();
        let b = g2.green_eval(&op.mesh, y1).unwrap();
        assert!((a - b).abs() / a.abs() < 5e-3, "{a} vs {b}");

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 1000 {
            let x = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if x.norm() < 0.98 && x.dist(y1) > 0.02 {
                let g = g1.green_eval(&op.mesh, x).unwrap();
                assert!(g > 0.0, "G({}, {}) = {g}", x.x, x.y);
                checked += 1;
            }
        }
    }

    #[test]
    fn weighted_reciprocity_on_translated_disk() {
        let dom = DomainGeometry::disk(Vec2::new(3.0, 3.0), 1.0).unwrap();
        let y1 = Vec2::new(3.3, 3.1);
        let y2 = Vec2::new(2.6, 2.8);
        let mesh = build_mesh(&dom, 0.06, &[(y1, 0.008), (y2, 0.008)]).unwrap();
        let op = MeshedOperator::assemble(&dom, mesh, WeightField::Monomial { k1: 1, k2: 0 }).unwrap();
        let g1 = regular_part(&op, y1, SourceKind::Interior).unwrap();
        let g2 = regular_part(&op, y2, SourceKind::Interior).unwrap();
        // a(x) G(x, y) = a(y) G(y, x) with x the evaluation point
        let lhs = op.weight.eval(y2) * g1.green_eval(&op.mesh, y2).unwrap();
        let rhs = op.weight.eval(y1) * g2.green_eval(&op.mesh, y1).unwrap();
        assert!((lhs - rhs).abs() / lhs.abs() < 5e-3, "{lhs} vs {rhs}");
    }

    #[test]
    fn interior_value_matches_fine_mesh_oracle() {
        let y = Vec2::new(0.3, 0.0);
        let x = Vec2::new(-0.5, 0.0);
        let coarse = disk_op(0.08, &[(y, 0.01)]);
        let fine = disk_op(0.02, &[(y, 0.0025)]);
        let gc = regular_part(&coarse, y, SourceKind::Interior).unwrap();
        let gf = regular_part(&fine, y, SourceKind::Interior).unwrap();
        let a = gc.green_eval(&coarse.mesh, x).unwrap();
        let b = gf.green_eval(&fine.mesh, x).unwrap();
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }

    #[test]
    fn point_load_route_agrees_far_from_source() {
        // independent discrete Green: solve A g = e_y with the nodal point
        // load, compare against the regular-part route away from y
        let y = Vec2::new(0.3, 0.0);
        let op = disk_op(0.06, &[(y, 0.008)]);
        let gd = regular_part(&op, y, SourceKind::Interior).unwrap();

        let n = op.mesh.nodes.len();
        let mut load = vec![0.0; n];
        let (ti, bary) = op.mesh.locate(y).unwrap();
        let t = op.mesh.triangles[ti];
        for i in 0..3 {
            load[t[i]] = bary[i];
        }
        let g_pl = op.solve_rhs(&load).unwrap();
        // the assembled operator reproduces the load (solver identity)
        let mut r = vec![0.0; n];
        op.matrix.matvec(&g_pl, &mut r);
        let worst = (0..n).map(|i| (r[i] - load[i]).abs()).fold(0.0f64, f64::max);
        assert!(worst < 1e-8, "residual {worst}");

        for (i, &p) in op.mesh.nodes.iter().enumerate() {
            if p.dist(y) > 0.4 {
                let a = gd.green_at_node(&op.mesh, i);
                assert!((a - g_pl[i]).abs() < 2e-3, "node {i}: {a} vs {}", g_pl[i]);
            }
        }
    }

    #[test]
    fn robin_blowup_near_boundary() {
        // H(y,y) - (1/2pi) log(1/(2 depth)) stays bounded as depth shrinks
        let mut vals = Vec::new();
        for depth in [0.1, 0.05] {
            let y = Vec2::new(1.0 - depth, 0.0);
            let op = disk_op(0.07, &[(y, depth / 8.0)]);
            let h = robin_function(&op, y, SourceKind::Interior).unwrap();
            vals.push(h - (1.0 / (2.0 * std::f64::consts::PI)) * (1.0 / (2.0 * depth)).ln());
        }
        assert!((vals[0] - vals[1]).abs() < 0.1, "{vals:?}");
    }

    #[test]
    fn boundary_robin_respects_disk_symmetry() {
        let op = disk_op(0.06, &[(Vec2::new(1.0, 0.0), 0.008), (Vec2::new(-1.0, 0.0), 0.008)]);
        let r1 = robin_function(&op, Vec2::new(1.0, 0.0), SourceKind::Boundary).unwrap();
        let r2 = robin_function(&op, Vec2::new(-1.0, 0.0), SourceKind::Boundary).unwrap();
        assert!((r1 - r2).abs() < 1e-3, "{r1} vs {r2}");
    }

    #[test]
    fn shallow_interior_source_is_refused() {
        let op = disk_op(0.1, &[]);
        let e = regular_part(&op, Vec2::new(0.95, 0.0), SourceKind::Interior).unwrap_err();
        assert!(e.to_string().contains("grade the mesh finer"), "{e}");
    }

    #[test]
    fn evaluation_at_source_is_refused() {
        let y = Vec2::new(0.3, 0.0);
        let op = disk_op(0.1, &[(y, 0.02)]);
        let gd = regular_part(&op, y, SourceKind::Interior).unwrap();
        assert!(gd.green_eval(&op.mesh, y + Vec2::new(1e-9, 0.0)).is_err());
    }

    #[test]
    fn cache_returns_shared_data() {
        let y = Vec2::new(0.2, 0.1);
        let op = disk_op(0.1, &[(y, 0.02)]);
        let mut cache = GreenCache::new(&op);
        let a = cache.get(y, SourceKind::Interior).unwrap();
        let b = cache.get(y + Vec2::new(1e-7, 0.0), SourceKind::Interior).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }
}
