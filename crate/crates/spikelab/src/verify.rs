//! Full nonlinear verification: damped Newton on the weak residual of
//! `-div(a grad u) + a u = a u_+^p`, spike diagnostics, continuation in p,
//! and the dimensional-lift operator identity.

use crate::ansatz::{build_ansatz, formula_ansatz};
use crate::fem::{build_mesh, rcm_order, solve_refined, Csr, MeshedOperator, SkylineLdl, WeightField, TRI7, H_MIN_FLOOR};
use crate::geometry::DomainGeometry;
use crate::greens::{GreenCache, SourceKind};
use crate::mu::{solve_mu, MuInputs, SpikeConfig, SpikePoint};
use crate::vec2::Vec2;
use crate::{Error, Result};
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct SpikeDiag {
    pub location: Vec2,
    pub peak: f64,
    /// `p int_{B_d} u_+^{p+1}` (unweighted integrand).
    pub mass: f64,
}

#[derive(Debug, Clone)]
pub struct SolutionField {
    pub p: f64,
    pub u: Vec<f64>,
    pub converged: bool,
    pub newton_iters: usize,
    pub residual_norm: f64,
    pub spikes: Vec<SpikeDiag>,
    /// Sup of u outside all diagnostic balls.
    pub outside_sup: f64,
    /// Relative residual after each accepted step (diagnostic).
    pub residual_history: Vec<f64>,
}

// ---------------------------------------------------------------------------
// weak nonlinear residual and its Jacobian

/// Quadrature subdivision depth per triangle, frozen from the starting
/// field so the discrete residual stays a fixed function of u during the
/// whole solve: refine where u0 is within a factor of its peak (that is
/// where `u^p` concentrates).
fn freeze_levels(mesh: &crate::fem::Mesh, u0: &[f64]) -> Vec<usize> {
    let umax = u0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mesh.triangles
        .iter()
        .map(|t| {
            let m = u0[t[0]].max(u0[t[1]]).max(u0[t[2]]);
            if umax > 0.0 && m > 0.3 * umax {
                3
            } else {
                0
            }
        })
        .collect()
}

/// Accumulates `int a u_+^p phi_i` and optionally the Jacobian block
/// `int a p u_+^{p-1} phi_i phi_j` over one (possibly subdivided) triangle.
/// Corners are tracked in parent barycentric coordinates so the P1 field
/// interpolates consistently.
#[allow(clippy::too_many_arguments)]
fn tri_nonlinear(
    pts: &[Vec2; 3],
    tri: &[usize; 3],
    corners: &[[f64; 3]; 3],
    u: &[f64],
    weight: &WeightField,
    p: f64,
    levels: usize,
    rhs: &mut [f64],
    jac: Option<&mut Vec<BTreeMap<usize, f64>>>,
) {
    if levels > 0 {
        let mid = |a: &[f64; 3], b: &[f64; 3]| {
            [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])]
        };
        let m01 = mid(&corners[0], &corners[1]);
        let m12 = mid(&corners[1], &corners[2]);
        let m20 = mid(&corners[2], &corners[0]);
        let subs = [
            [corners[0], m01, m20],
            [m01, corners[1], m12],
            [m20, m12, corners[2]],
            [m01, m12, m20],
        ];
        if let Some(jac) = jac {
            for s in &subs {
                tri_nonlinear(pts, tri, s, u, weight, p, levels - 1, rhs, Some(jac));
            }
        } else {
            for s in &subs {
                tri_nonlinear(pts, tri, s, u, weight, p, levels - 1, rhs, None);
            }
        }
        return;
    }
    let xy = |b: &[f64; 3]| b[0] * pts[0] + b[1] * pts[1] + b[2] * pts[2];
    let (c0, c1, c2) = (xy(&corners[0]), xy(&corners[1]), xy(&corners[2]));
    let area = 0.5 * (c1 - c0).cross(c2 - c0);
    let uv = [u[tri[0]], u[tri[1]], u[tri[2]]];
    let mut jac = jac;
    for (q, w) in TRI7 {
        // parent barycentric coordinates of the quadrature point
        let mut bary = [0.0f64; 3];
        for k in 0..3 {
            bary[k] = q[0] * corners[0][k] + q[1] * corners[1][k] + q[2] * corners[2][k];
        }
        let x = bary[0] * pts[0] + bary[1] * pts[1] + bary[2] * pts[2];
        let uq = bary[0] * uv[0] + bary[1] * uv[1] + bary[2] * uv[2];
        if uq <= 0.0 {
            continue;
        }
        let a = weight.eval(x);
        let f = w * area * a * uq.powf(p);
        for k in 0..3 {
            rhs[tri[k]] += f * bary[k];
        }
        if let Some(jac) = jac.as_deref_mut() {
            let g = w * area * a * p * uq.powf(p - 1.0);
            for k in 0..3 {
                for l in 0..3 {
                    *jac[tri[k]].entry(tri[l]).or_insert(0.0) += g * bary[k] * bary[l];
                }
            }
        }
    }
}

/// Weak residual `r = A u - N(u)` with `N_i = int a u_+^p phi_i`; returns
/// `(r, ||N||)` so callers can form a relative norm.
fn weak_residual(op: &MeshedOperator, u: &[f64], p: f64, levels: &[usize]) -> (Vec<f64>, f64) {
    let mesh = &op.mesh;
    let n = u.len();
    let mut nl = vec![0.0f64; n];
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let pts = [mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]];
        let corners = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        tri_nonlinear(&pts, t, &corners, u, &op.weight, p, levels[ti], &mut nl, None);
    }
    let mut r = vec![0.0f64; n];
    op.matrix.matvec(u, &mut r);
    let nl_norm = nl.iter().map(|v| v * v).sum::<f64>().sqrt();
    for i in 0..n {
        r[i] -= nl[i];
    }
    (r, nl_norm)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton from `u0`. The Jacobian is
/// `int a (grad phi . grad v + phi v - p u_+^{p-1} phi v)`; steps are
/// halved until the residual decreases.
pub fn newton_solve(op: &MeshedOperator, u0: &[f64], p: f64) -> Result<SolutionField> {
    let bound = 2.0 * 1.0f64.exp().sqrt() + 0.5;
    if p <= 1.0 || p > 200.0 {
        return Err(Error::Newton(format!("power p = {p} outside the supported range")));
    }
    let mesh = &op.mesh;
    let n = mesh.nodes.len();
    let mut u = u0.to_vec();
    let perm = rcm_order(&op.matrix);
    let levels = freeze_levels(mesh, u0);

    let (mut r, mut nl_norm) = weak_residual(op, &u, p, &levels);
    let mut au = vec![0.0; n];
    op.matrix.matvec(&u, &mut au);
    let scale = |nl: f64, au: &[f64]| norm2(au).max(nl).max(1e-300);
    let mut rel = norm2(&r) / scale(nl_norm, &au);
    let mut history = vec![rel];
    let mut iters = 0;
    let mut converged = rel <= 1e-9;
    let mut lambda = 0.0f64;
    let diag_a: Vec<f64> = (0..n)
        .map(|i| {
            (op.matrix.row_ptr[i]..op.matrix.row_ptr[i + 1])
                .find(|&idx| op.matrix.col_idx[idx] == i)
                .map(|idx| op.matrix.vals[idx])
                .unwrap_or(1.0)
        })
        .collect();

    while !converged && iters < 60 {
        for &v in &u {
            if v > bound {
                return Err(Error::Newton(format!(
                    "iterate exceeded the overflow guard {bound} (value {v})"
                )));
            }
        }
        // assemble J = A - P(u) with quadrature matching the residual
        let mut prows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        let mut dummy = vec![0.0f64; n];
        for (ti, t) in mesh.triangles.iter().enumerate() {
            let pts = [mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]];
            let corners = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
            tri_nonlinear(&pts, t, &corners, &u, &op.weight, p, levels[ti], &mut dummy, Some(&mut prows));
        }
        // rows of A minus the power block
        let mut jrows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for i in 0..n {
            for idx in op.matrix.row_ptr[i]..op.matrix.row_ptr[i + 1] {
                jrows[i].insert(op.matrix.col_idx[idx], op.matrix.vals[idx]);
            }
            for (&j, &v) in &prows[i] {
                *jrows[i].entry(j).or_insert(0.0) -= v;
            }
        }
        let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();

        // Levenberg-style step: the symmetric Jacobian can carry a
        // near-null mode (spike translation under domain symmetry) that
        // makes the pure Newton direction blow up; shifting by
        // lambda * diag(A) suppresses it. lambda is raised until the full
        // step reduces the residual, lowered again on success.
        let mut accepted = false;
        for _attempt in 0..14 {
            let mut shifted = jrows.clone();
            if lambda > 0.0 {
                for i in 0..n {
                    *shifted[i].entry(i).or_insert(0.0) += lambda * diag_a[i];
                }
            }
            let jmat = Csr::from_rows(shifted);
            let dx = match SkylineLdl::factor(&jmat, perm.clone()).and_then(|ldl| {
                solve_refined(&jmat, &ldl, &neg_r, 1e-8)
                    .or_else(|_| solve_refined(&jmat, &ldl, &neg_r, 1e-4))
            }) {
                Ok(dx) => dx,
                Err(_) => {
                    lambda = (lambda * 10.0).max(1e-10);
                    continue;
                }
            };
            let trial: Vec<f64> = u.iter().zip(&dx).map(|(&a, &b)| a + b).collect();
            if trial.iter().any(|&v| v > bound) {
                lambda = (lambda * 10.0).max(1e-10);
                continue;
            }
            let (rt, nt) = weak_residual(op, &trial, p, &levels);
            op.matrix.matvec(&trial, &mut au);
            let rel_t = norm2(&rt) / scale(nt, &au);
            if rel_t < rel {
                let good = rel_t < 0.3 * rel;
                u = trial;
                r = rt;
                nl_norm = nt;
                rel = rel_t;
                accepted = true;
                lambda = if good { lambda / 10.0 } else { lambda / 3.0 };
                if lambda < 1e-14 {
                    lambda = 0.0;
                }
                break;
            }
            lambda = (lambda * 10.0).max(1e-10);
        }
        iters += 1;
        if !accepted {
            break; // no acceptable step: report non-converged
        }
        history.push(rel);
        converged = rel <= 1e-9;
    }
    let _ = nl_norm;

    let positive = u.iter().all(|&v| v > 0.0);
    let mut sol = SolutionField {
        p,
        u,
        converged: converged && positive,
        newton_iters: iters,
        residual_norm: rel,
        spikes: Vec::new(),
        outside_sup: f64::NAN,
        residual_history: history,
    };
    if sol.converged {
        let centers = detect_peaks(mesh, &sol.u);
        if !centers.is_empty() {
            let d = default_ball_radius(op, &centers);
            if let Ok(()) = spike_metrics(op, &mut sol, &centers, d) {}
        }
    }
    Ok(sol)
}

/// Nodes that dominate every neighbour and carry at least 30% of the
/// global max (merged within one local size).
pub fn detect_peaks(mesh: &crate::fem::Mesh, u: &[f64]) -> Vec<Vec2> {
    let umax = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(umax > 0.0) {
        return Vec::new();
    }
    let n = mesh.nodes.len();
    let mut best_nb = vec![f64::NEG_INFINITY; n];
    for t in &mesh.triangles {
        for &i in t {
            for &j in t {
                if i != j {
                    best_nb[i] = best_nb[i].max(u[j]);
                }
            }
        }
    }
    let mut peaks: Vec<(Vec2, f64)> = Vec::new();
    for i in 0..n {
        if u[i] >= best_nb[i] && u[i] > 0.3 * umax {
            let x = mesh.nodes[i];
            let merge = peaks.iter_mut().find(|(q, _)| q.dist(x) < 20.0 * mesh.size.at(x));
            match merge {
                Some((q, v)) if u[i] > *v => {
                    *q = x;
                    *v = u[i];
                }
                Some(_) => {}
                None => peaks.push((x, u[i])),
            }
        }
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    peaks.into_iter().map(|(q, _)| q).collect()
}

/// Half the minimal inter-spike distance, capped by a fraction of the
/// domain size.
pub fn default_ball_radius(op: &MeshedOperator, centers: &[Vec2]) -> f64 {
    let mut d = f64::INFINITY;
    for i in 0..centers.len() {
        for k in i + 1..centers.len() {
            d = d.min(0.5 * centers[i].dist(centers[k]));
        }
    }
    let fallback = 2.0 * op.mesh.size.h;
    if d.is_finite() {
        d
    } else {
        // single spike: a quarter of the mesh extent
        let (lo, hi) = op
            .mesh
            .nodes
            .iter()
            .fold((Vec2::new(f64::MAX, f64::MAX), Vec2::new(f64::MIN, f64::MIN)), |(lo, hi), &q| {
                (
                    Vec2::new(lo.x.min(q.x), lo.y.min(q.y)),
                    Vec2::new(hi.x.max(q.x), hi.y.max(q.y)),
                )
            });
        (0.25 * (hi - lo).norm()).max(fallback)
    }
}

fn tri_mass(pts: &[Vec2; 3], vals: &[f64; 3], p: f64, levels: usize) -> f64 {
    if levels > 0 {
        let mids = [0.5 * (pts[0] + pts[1]), 0.5 * (pts[1] + pts[2]), 0.5 * (pts[2] + pts[0])];
        let vm = [
            0.5 * (vals[0] + vals[1]),
            0.5 * (vals[1] + vals[2]),
            0.5 * (vals[2] + vals[0]),
        ];
        return tri_mass(&[pts[0], mids[0], mids[2]], &[vals[0], vm[0], vm[2]], p, levels - 1)
            + tri_mass(&[mids[0], pts[1], mids[1]], &[vm[0], vals[1], vm[1]], p, levels - 1)
            + tri_mass(&[mids[2], mids[1], pts[2]], &[vm[2], vm[1], vals[2]], p, levels - 1)
            + tri_mass(&[mids[0], mids[1], mids[2]], &[vm[0], vm[1], vm[2]], p, levels - 1);
    }
    let area = 0.5 * (pts[1] - pts[0]).cross(pts[2] - pts[0]);
    let mut s = 0.0;
    for (q, w) in TRI7 {
        let uq = q[0] * vals[0] + q[1] * vals[1] + q[2] * vals[2];
        if uq > 0.0 {
            s += w * uq.powf(p + 1.0);
        }
    }
    s * area
}

/// Fills per-spike peak/mass diagnostics: for each center, the local max
/// in `B_d` and `p int_{B_d} u_+^{p+1}` (unweighted), plus the sup of u
/// outside all balls.
pub fn spike_metrics(
    op: &MeshedOperator,
    sol: &mut SolutionField,
    centers: &[Vec2],
    d: f64,
) -> Result<()> {
    for i in 0..centers.len() {
        for k in i + 1..centers.len() {
            if centers[i].dist(centers[k]) < 2.0 * d {
                return Err(Error::Newton(format!(
                    "diagnostic balls of radius {d} around spikes {i} and {k} overlap"
                )));
            }
        }
    }
    let mesh = &op.mesh;
    let p = sol.p;
    let mut spikes = Vec::with_capacity(centers.len());
    for &c in centers {
        let mut peak = f64::NEG_INFINITY;
        let mut loc = c;
        for (j, &x) in mesh.nodes.iter().enumerate() {
            if x.dist(c) <= d && sol.u[j] > peak {
                peak = sol.u[j];
                loc = x;
            }
        }
        let mut mass = 0.0;
        for t in &mesh.triangles {
            let pts = [mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]];
            let centroid = (pts[0] + pts[1] + pts[2]) / 3.0;
            if centroid.dist(c) > d {
                continue;
            }
            let vals = [sol.u[t[0]], sol.u[t[1]], sol.u[t[2]]];
            let local = mesh.node_size[t[0]].min(mesh.node_size[t[1]]).min(mesh.node_size[t[2]]);
            let levels = if pts.iter().any(|&v| v.dist(loc) < 5.0 * local) { 3 } else { 0 };
            mass += tri_mass(&pts, &vals, p, levels);
        }
        spikes.push(SpikeDiag { location: loc, peak, mass: p * mass });
    }
    let mut outside = 0.0f64;
    for (j, &x) in mesh.nodes.iter().enumerate() {
        if centers.iter().all(|&c| x.dist(c) > d) {
            outside = outside.max(sol.u[j]);
        }
    }
    sol.spikes = spikes;
    sol.outside_sup = outside;
    Ok(())
}

// ---------------------------------------------------------------------------
// continuation in p

#[derive(Debug, Clone)]
pub struct BranchStage {
    pub p: f64,
    pub mu: Vec<f64>,
    pub delta_min: f64,
    /// Node coordinates matching `sol.u` (for field export).
    pub mesh_nodes: Vec<Vec2>,
    pub sol: SolutionField,
}

/// Follows the spike branch along an increasing p schedule. Each stage
/// re-solves the amplitude system, re-grades the mesh at the current spike
/// locations, and restarts Newton from the previous stage's solution
/// (the first stage starts from the ansatz). Divergence truncates the
/// branch; completed stages are returned.
pub fn continuation_in_p(
    dom: &DomainGeometry,
    weight: WeightField,
    points: Vec<SpikePoint>,
    l: usize,
    p_schedule: &[f64],
    h: f64,
) -> Result<Vec<BranchStage>> {
    if p_schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Newton("p schedule must be strictly increasing".into()));
    }
    // Green data are p-independent: gather once on a probe mesh graded
    // enough for the Robin extraction
    let probe_centers: Vec<(Vec2, f64)> = points.iter().map(|s| (s.position, 1e-4)).collect();
    let probe = build_mesh(dom, h, &probe_centers)?;
    let probe_op = MeshedOperator::assemble(dom, probe, weight.clone())?;
    let mut cache = GreenCache::new(&probe_op);
    let inputs = MuInputs::gather(&mut cache, &points)?;

    let mut stages: Vec<BranchStage> = Vec::new();
    let mut spike_pts = points;
    let mut prev: Option<(MeshedOperator, Vec<f64>, SpikeConfig)> = None;
    let mut p_cur: Option<f64> = None;

    // one solve at power `p` from the previous field (or the ansatz)
    let mut solve_at = |p: f64,
                        spike_pts: &mut Vec<SpikePoint>,
                        prev: &mut Option<(MeshedOperator, Vec<f64>, SpikeConfig)>|
     -> Result<BranchStage> {
        let mu = solve_mu(p, &inputs)?;
        let cfg = SpikeConfig { p, points: spike_pts.clone(), l, mu: mu.clone() };
        let delta_min = (0..cfg.m()).map(|i| cfg.delta(i)).fold(f64::INFINITY, f64::min);
        // grade at the core scale, clamped to the supported floor
        let h_min = (delta_min / 2.5).clamp(H_MIN_FLOOR, h);
        let centers: Vec<(Vec2, f64)> = spike_pts.iter().map(|s| (s.position, h_min)).collect();
        let mesh = build_mesh(dom, h, &centers)?;
        let op = MeshedOperator::assemble(dom, mesh, weight.clone())?;

        let u0 = match prev.as_ref() {
            None => build_ansatz(&op, &cfg)?.nodal,
            Some((op_prev, u_prev, cfg_prev)) => {
                // interpolate the previous field and shift it by the
                // closed-form ansatz difference between the two powers;
                // plain interpolation leaves Newton in a creep regime
                let green: Vec<_> = cfg
                    .points
                    .iter()
                    .map(|s| cache.get(s.position, s.kind).map(|g| (g, &probe_op.mesh)))
                    .collect::<Result<_>>()?;
                op.mesh
                    .nodes
                    .iter()
                    .map(|&x| {
                        let interp = op_prev.mesh.eval_p1_extrapolate(u_prev, x);
                        let shift = formula_ansatz(&cfg, &green, x)
                            - formula_ansatz(cfg_prev, &green, x);
                        (interp + shift).max(1e-8)
                    })
                    .collect()
            }
        };

        let mesh_nodes = op.mesh.nodes.clone();
        let sol = newton_solve(&op, &u0, p)?;
        if sol.converged {
            // re-anchor the spikes at the found peaks for the next grading
            if sol.spikes.len() == spike_pts.len() {
                let mut updated = spike_pts.clone();
                for sp in &sol.spikes {
                    let (i, _) = spike_pts
                        .iter()
                        .enumerate()
                        .map(|(i, q)| (i, q.position.dist(sp.location)))
                        .min_by(|a, b| a.1.total_cmp(&b.1))
                        .unwrap();
                    match spike_pts[i].kind {
                        SourceKind::Boundary => {
                            if let Ok(proj) = dom.dist_to_boundary(sp.location) {
                                updated[i].position = proj.nearest.position;
                            }
                        }
                        SourceKind::Interior => updated[i].position = sp.location,
                    }
                }
                *spike_pts = updated;
            }
            *prev = Some((op, sol.u.clone(), cfg.clone()));
        }
        Ok(BranchStage { p, mu, delta_min, mesh_nodes, sol })
    };

    'schedule: for &p_target in p_schedule {
        if p_cur.is_none() {
            let stage = solve_at(p_target, &mut spike_pts, &mut prev)?;
            let ok = stage.sol.converged;
            stages.push(stage);
            if !ok {
                break;
            }
            p_cur = Some(p_target);
            continue;
        }
        // the core width shrinks like e^{-p/4}: large p jumps need
        // intermediate sub-steps, halved adaptively on divergence
        let mut step = p_target - p_cur.unwrap();
        loop {
            let p_try = (p_cur.unwrap() + step).min(p_target);
            let stage = solve_at(p_try, &mut spike_pts, &mut prev)?;
            if stage.sol.converged {
                p_cur = Some(p_try);
                if p_try == p_target {
                    stages.push(stage);
                    break;
                }
            } else {
                step *= 0.5;
                if step < 0.5 {
                    stages.push(stage); // truncate, keep partial results
                    break 'schedule;
                }
            }
        }
    }
    Ok(stages)
}

// ---------------------------------------------------------------------------
// dimensional-lift identity

/// Compares the divergence form `-div(a grad u) + a u - a u^p` against the
/// lifted form `a (-Lap u - sum k_i/x_i du/dx_i + u - u^p)` for the
/// monomial weight `a = x1^k1 x2^k2`, with analytic derivatives of `a` and
/// shared finite differences of `u`. Returns the absolute residual.
pub fn lift_identity_check(
    k1: u32,
    k2: u32,
    u: &dyn Fn(Vec2) -> f64,
    p: f64,
    x: Vec2,
) -> Result<f64> {
    if x.x <= 0.0 || x.y <= 0.0 {
        return Err(Error::Newton(format!(
            "lift identity requires the open positive quadrant; got ({}, {})",
            x.x, x.y
        )));
    }
    let h = 1e-5 * (1.0 + x.norm());
    let uc = u(x);
    let uxp = u(Vec2::new(x.x + h, x.y));
    let uxm = u(Vec2::new(x.x - h, x.y));
    let uyp = u(Vec2::new(x.x, x.y + h));
    let uym = u(Vec2::new(x.x, x.y - h));
    let ux = (uxp - uxm) / (2.0 * h);
    let uy = (uyp - uym) / (2.0 * h);
    let lap = (uxp + uxm + uyp + uym - 4.0 * uc) / (h * h);

    let a = x.x.powi(k1 as i32) * x.y.powi(k2 as i32);
    let ax = k1 as f64 * a / x.x;
    let ay = k2 as f64 * a / x.y;
    let up = uc.signum() * uc.abs().powf(p);

    let divergence_form = -(a * lap + ax * ux + ay * uy) + a * uc - a * up;
    let lifted_form =
        a * (-lap - (k1 as f64 / x.x) * ux - (k2 as f64 / x.y) * uy + uc - up);
    Ok((divergence_form - lifted_form).abs())
}
