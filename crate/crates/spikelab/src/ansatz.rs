//! The spike ansatz: per-spike bubbles with radial corrections, the
//! Neumann projection corrections `H_i` solved by FEM, and their sum
//! `U_xi = sum (U_i + H_i)`, with near-spike profile diagnostics.

use crate::bubble::{self, RadialProfile};
use crate::fem::MeshedOperator;
use crate::greens::GreenData;
use crate::mu::SpikeConfig;
use crate::vec2::Vec2;
use crate::{Error, Result};

/// Bound on the assembled ansatz: `0 < U_xi <= 2 sqrt(e) + tol`.
pub const SUP_BOUND_TOL: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct PerSpike {
    /// Nodal values of the corrected bubble U_i.
    pub u: Vec<f64>,
    /// Nodal values of the projection correction H_i.
    pub h: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AnsatzField {
    pub cfg: SpikeConfig,
    /// U_xi = sum of per-spike pieces, on the mesh nodes.
    pub nodal: Vec<f64>,
    pub per_spike: Vec<PerSpike>,
    /// Sup over nodes near each spike of the inner-profile defect
    /// `|gamma mu^{2/(p-1)} U_xi - (p + U_{1,0}(z) + w1(z)/p + w2(z)/p^2)|`.
    pub near_defect: Vec<f64>,
}

/// `U_i(x)`: amplitude times the rescaled bubble plus radial corrections.
pub fn bubble_with_corrections(cfg: &SpikeConfig, omega2: &RadialProfile<f64>, i: usize, x: Vec2) -> f64 {
    let delta = cfg.delta(i);
    let xi = cfg.points[i].position;
    let p = cfg.p;
    let z = x.dist(xi) / delta;
    let core = bubble::standard_bubble(delta, [xi.x, xi.y], [x.x, x.y]);
    cfg.amplitude(i) * (core + bubble::omega1(z) / p + omega2.eval(z) / (p * p))
}

/// Radial derivative of U_i at distance `r` from the spike.
pub fn bubble_with_corrections_deriv(
    cfg: &SpikeConfig,
    omega2: &RadialProfile<f64>,
    i: usize,
    r: f64,
) -> f64 {
    let delta = cfg.delta(i);
    let p = cfg.p;
    let z = r / delta;
    cfg.amplitude(i)
        * (bubble::bubble_radial_deriv(delta, r)
            + bubble::omega1_deriv(z) / (p * delta)
            + omega2.eval_deriv(z) / (p * p * delta))
}

/// Solves the projection correction
/// `-Delta_a H_i + H_i = grad log a . grad U_i - U_i`,
/// `dH_i/dnu = -dU_i/dnu` (flux evaluated analytically).
pub fn projection_correction(op: &MeshedOperator, cfg: &SpikeConfig, i: usize) -> Result<Vec<f64>> {
    let xi = cfg.points[i].position;
    let delta = cfg.delta(i);
    let local = op.mesh.size.at(xi);
    if delta < 2.0 * local {
        return Err(Error::Ansatz(format!(
            "spike {i}: delta {delta:e} is below twice the local mesh size {local:e}; \
             regrade the mesh at the spike"
        )));
    }
    let omega2 = bubble::omega2();
    let f = move |x: Vec2| {
        let r = x.dist(xi);
        let u = bubble_with_corrections(cfg, omega2, i, x);
        if r == 0.0 {
            return -u;
        }
        let du = bubble_with_corrections_deriv(cfg, omega2, i, r);
        let dir = (x - xi) / r;
        op.weight.grad_log(x).dot(dir) * du - u
    };
    let g = move |x: Vec2, nu: Vec2| {
        let r = x.dist(xi);
        if r == 0.0 {
            return 0.0;
        }
        let du = bubble_with_corrections_deriv(cfg, omega2, i, r);
        -du * (x - xi).dot(nu) / r
    };
    let (h, _warn) = op.neumann_solve_singular(&f, &g, &[xi])?;
    Ok(h)
}

/// The closed-form stand-in for `H_i` built from Green's regular part:
/// `amplitude * [A c_i H(x, xi_i) - log(8 delta_i^2) + B log delta_i]`
/// with `A = 1 - C1/4p - C2/4p^2`, `B = C1/p + C2/p^2`.
pub fn projection_formula(green: &GreenData, cfg: &SpikeConfig, i: usize) -> Vec<f64> {
    let p = cfg.p;
    let c1: f64 = bubble::c1_exact();
    let c2: f64 = bubble::constant_cj(bubble::f2).expect("C2 quadrature");
    let a = 1.0 - c1 / (4.0 * p) - c2 / (4.0 * p * p);
    let b = c1 / p + c2 / (p * p);
    let delta = cfg.delta(i);
    let c_i = cfg.points[i].kind.c();
    let amp = cfg.amplitude(i);
    green
        .h_field
        .iter()
        .map(|&h| amp * (a * c_i * h - (8.0 * delta * delta).ln() + b * delta.ln()))
        .collect()
}

/// Closed-form stand-in for the whole ansatz at an arbitrary point,
/// using Green-data fields (interpolated from their own mesh) in place of
/// the FEM projection corrections. No mesh-resolution gate: useful as a
/// continuation predictor when the core is below the grading floor.
pub fn formula_ansatz(
    cfg: &SpikeConfig,
    green: &[(std::sync::Arc<GreenData>, &crate::fem::Mesh)],
    x: Vec2,
) -> f64 {
    let omega2 = bubble::omega2();
    let p = cfg.p;
    let c1: f64 = bubble::c1_exact();
    let c2: f64 = bubble::constant_cj(bubble::f2).expect("C2 quadrature");
    let a = 1.0 - c1 / (4.0 * p) - c2 / (4.0 * p * p);
    let b = c1 / p + c2 / (p * p);
    let mut total = 0.0;
    for i in 0..cfg.m() {
        total += bubble_with_corrections(cfg, omega2, i, x);
        let (g, mesh) = &green[i];
        let h_at = mesh.eval_p1_extrapolate(&g.h_field, x);
        let delta = cfg.delta(i);
        let c_i = cfg.points[i].kind.c();
        total += cfg.amplitude(i) * (a * c_i * h_at - (8.0 * delta * delta).ln() + b * delta.ln());
    }
    total
}

/// Builds the full ansatz field and its diagnostics.
pub fn build_ansatz(op: &MeshedOperator, cfg: &SpikeConfig) -> Result<AnsatzField> {
    let mesh = &op.mesh;
    let n = mesh.nodes.len();
    let m = cfg.m();
    let omega2 = bubble::omega2();

    let mut per_spike = Vec::with_capacity(m);
    let mut nodal = vec![0.0f64; n];
    for i in 0..m {
        let u: Vec<f64> = mesh
            .nodes
            .iter()
            .map(|&x| bubble_with_corrections(cfg, omega2, i, x))
            .collect();
        let h = projection_correction(op, cfg, i)?;
        for j in 0..n {
            nodal[j] += u[j] + h[j];
        }
        per_spike.push(PerSpike { u, h });
    }

    if cfg.p >= 10.0 {
        let bound = 2.0 * 1.0f64.exp().sqrt() + SUP_BOUND_TOL;
        for (j, &v) in nodal.iter().enumerate() {
            if !(v > 0.0 && v <= bound) {
                return Err(Error::Ansatz(format!(
                    "ansatz violates the (0, 2 sqrt(e)] bound at node {j}: value {v}"
                )));
            }
        }
    }

    // near-spike inner-profile defect: ball radius p^{-2 kappa}, clamped
    // to ten local sizes when that underflows the mesh
    let p = cfg.p;
    let mut near_defect = Vec::with_capacity(m);
    for i in 0..m {
        let xi = cfg.points[i].position;
        let delta = cfg.delta(i);
        let radius = p.powf(-2.0 * cfg.kappa()).max(10.0 * mesh.size.at(xi));
        let scale = 1.0 / cfg.amplitude(i);
        let mut defect = 0.0f64;
        for (j, &x) in mesh.nodes.iter().enumerate() {
            let r = x.dist(xi);
            if r <= radius {
                let z = r / delta;
                let inner = p
                    + bubble::bubble_radial(z)
                    + bubble::omega1(z) / p
                    + omega2.eval(z) / (p * p);
                defect = defect.max((scale * nodal[j] - inner).abs());
            }
        }
        near_defect.push(defect);
    }

    Ok(AnsatzField { cfg: cfg.clone(), nodal, per_spike, near_defect })
}
