//! The matching system for the concentration parameters `mu_i`:
//!
//! `log(8 mu_i^4) = A c_i H(xi_i, xi_i) + B log delta_i
//!                  + A sum_{k != i} (mu_i/mu_k)^{2/(p-1)} c_k G(xi_i, xi_k)`
//!
//! with `A = 1 - C1/4p - C2/4p^2`, `B = C1/p + C2/p^2`, `delta_i = eps mu_i`,
//! solved by a damped fixed point in `log mu` starting from the `p -> infinity`
//! limit `mu_i = exp(-3/4 + c_i H_ii/4 + sum c_k G_ik/4)`.

use crate::bubble;
use crate::geometry::DomainGeometry;
use crate::greens::{GreenCache, SourceKind};
use crate::vec2::Vec2;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpikePoint {
    pub position: Vec2,
    pub kind: SourceKind,
}

impl SourceKind {
    fn ser_tag(self) -> &'static str {
        match self {
            SourceKind::Interior => "interior",
            SourceKind::Boundary => "boundary",
        }
    }
}

impl Serialize for SourceKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.ser_tag())
    }
}

impl<'de> Deserialize<'de> for SourceKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let t = String::deserialize(d)?;
        match t.as_str() {
            "interior" => Ok(SourceKind::Interior),
            "boundary" => Ok(SourceKind::Boundary),
            other => Err(serde::de::Error::custom(format!("unknown spike kind {other:?}"))),
        }
    }
}

/// A solved spike configuration: points, exponent, scaling constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpikeConfig {
    pub p: f64,
    /// Interior spikes first (`l` of them), boundary spikes after.
    pub points: Vec<SpikePoint>,
    pub l: usize,
    pub mu: Vec<f64>,
}

impl SpikeConfig {
    pub fn m(&self) -> usize {
        self.points.len()
    }

    /// kappa = 2 (m^2 + 1).
    pub fn kappa(&self) -> f64 {
        2.0 * (self.m() as f64 * self.m() as f64 + 1.0)
    }

    /// eps = e^{-p/4}.
    pub fn eps(&self) -> f64 {
        (-self.p / 4.0).exp()
    }

    /// gamma = p^{p/(p-1)} e^{-p/(2(p-1))}.
    pub fn gamma(&self) -> f64 {
        let p = self.p;
        p.powf(p / (p - 1.0)) * (-p / (2.0 * (p - 1.0))).exp()
    }

    /// gamma via the eps form, `p^{p/(p-1)} eps^{2/(p-1)}`; agrees with
    /// `gamma()` to 1e-14 relative.
    pub fn gamma_via_eps(&self) -> f64 {
        let p = self.p;
        p.powf(p / (p - 1.0)) * self.eps().powf(2.0 / (p - 1.0))
    }

    /// delta_i = eps mu_i.
    pub fn delta(&self, i: usize) -> f64 {
        self.eps() * self.mu[i]
    }

    /// Per-spike amplitude `1/(gamma mu_i^{2/(p-1)})`.
    pub fn amplitude(&self, i: usize) -> f64 {
        1.0 / (self.gamma() * self.mu[i].powf(2.0 / (self.p - 1.0)))
    }

    /// Checks the configuration-space constraints: kinds ordered, mutual
    /// separation and interior depth above `p^{-kappa}`, scaling formulas
    /// self-consistent.
    pub fn validate(&self, dom: &DomainGeometry) -> Result<()> {
        if self.p <= 1.0 {
            return Err(Error::Mu(format!("exponent p = {} must exceed 1", self.p)));
        }
        if self.l > self.m() {
            return Err(Error::Mu(format!(
                "interior count {} exceeds spike count {}",
                self.l,
                self.m()
            )));
        }
        for (i, pt) in self.points.iter().enumerate() {
            let want = if i < self.l { SourceKind::Interior } else { SourceKind::Boundary };
            if pt.kind != want {
                return Err(Error::Mu(format!(
                    "spike {i} has kind {:?}; the first l = {} must be interior",
                    pt.kind, self.l
                )));
            }
        }
        let sep = self.p.powf(-self.kappa());
        for i in 0..self.m() {
            for k in (i + 1)..self.m() {
                let d = self.points[i].position.dist(self.points[k].position);
                if d <= sep {
                    return Err(Error::Mu(format!(
                        "spikes {i} and {k} are {d:e} apart, below the separation floor {sep:e}"
                    )));
                }
            }
        }
        for i in 0..self.l {
            let d = dom.dist_to_boundary(self.points[i].position)?.distance;
            if d <= sep {
                return Err(Error::Mu(format!(
                    "interior spike {i} at depth {d:e}, below the depth floor {sep:e}"
                )));
            }
        }
        if !self.mu.is_empty() {
            if self.mu.len() != self.m() {
                return Err(Error::Mu("mu length does not match spike count".into()));
            }
            for (i, &m) in self.mu.iter().enumerate() {
                if !(m > 0.0) {
                    return Err(Error::Mu(format!("mu[{i}] = {m} is not positive")));
                }
                let d = self.delta(i);
                let rel = (d - self.eps() * m).abs() / d;
                if rel > 1e-14 {
                    return Err(Error::Mu(format!("delta[{i}] inconsistent by {rel:e}")));
                }
            }
        }
        let grel = (self.gamma() - self.gamma_via_eps()).abs() / self.gamma();
        if grel > 1e-14 {
            return Err(Error::Mu(format!("gamma forms disagree by {grel:e}")));
        }
        Ok(())
    }
}

/// Green-function inputs to the matching system.
#[derive(Debug, Clone)]
pub struct MuInputs {
    /// c_i (8 pi or 4 pi per spike).
    pub c: Vec<f64>,
    /// Robin values H(xi_i, xi_i).
    pub robin: Vec<f64>,
    /// Cross values G(xi_i, xi_k); the diagonal is ignored.
    pub green: Vec<Vec<f64>>,
}

impl MuInputs {
    /// Gathers Robin and cross-Green values from the cache.
    pub fn gather(cache: &mut GreenCache, points: &[SpikePoint]) -> Result<MuInputs> {
        let m = points.len();
        let mut c = Vec::with_capacity(m);
        let mut robin = Vec::with_capacity(m);
        let mut green = vec![vec![0.0; m]; m];
        let data: Vec<_> = points
            .iter()
            .map(|pt| cache.get(pt.position, pt.kind))
            .collect::<Result<_>>()?;
        for i in 0..m {
            c.push(points[i].kind.c());
            robin.push(data[i].robin);
            for k in 0..m {
                if k != i {
                    // G(xi_i, xi_k): source at xi_k, evaluated at xi_i
                    green[i][k] = data[k].green_eval(&cache.op.mesh, points[i].position)?;
                }
            }
        }
        Ok(MuInputs { c, robin, green })
    }
}

/// The limit values `mu_i = exp(-3/4 + c_i H_ii/4 + sum_{k!=i} c_k G_ik/4)`.
pub fn mu_limit(inputs: &MuInputs) -> Vec<f64> {
    let m = inputs.c.len();
    (0..m)
        .map(|i| {
            let cross: f64 = (0..m)
                .filter(|&k| k != i)
                .map(|k| inputs.c[k] * inputs.green[i][k])
                .sum();
            (-0.75 + 0.25 * inputs.c[i] * inputs.robin[i] + 0.25 * cross).exp()
        })
        .collect()
}

/// Residual of the matching system in log coordinates.
pub fn mu_residual(p: f64, inputs: &MuInputs, mu: &[f64]) -> Vec<f64> {
    let c1: f64 = bubble::c1_exact();
    let c2: f64 = *cached_c2();
    let a = 1.0 - c1 / (4.0 * p) - c2 / (4.0 * p * p);
    let b = c1 / p + c2 / (p * p);
    let m = inputs.c.len();
    let expn = 2.0 / (p - 1.0);
    (0..m)
        .map(|i| {
            let log_delta = mu[i].ln() - p / 4.0;
            let cross: f64 = (0..m)
                .filter(|&k| k != i)
                .map(|k| (mu[i] / mu[k]).powf(expn) * inputs.c[k] * inputs.green[i][k])
                .sum();
            (8.0f64.ln() + 4.0 * mu[i].ln())
                - (a * inputs.c[i] * inputs.robin[i] + b * log_delta + a * cross)
        })
        .collect()
}

fn cached_c2() -> &'static f64 {
    static C2: std::sync::OnceLock<f64> = std::sync::OnceLock::new();
    C2.get_or_init(|| bubble::constant_cj(bubble::f2).expect("C2 quadrature"))
}

/// Damped fixed-point solve of the matching system; residual (inf norm in
/// log mu coordinates) below 1e-12.
pub fn solve_mu(p: f64, inputs: &MuInputs) -> Result<Vec<f64>> {
    if p <= 1.0 {
        return Err(Error::Mu(format!("exponent p = {p} must exceed 1")));
    }
    let m = inputs.c.len();
    let mut x: Vec<f64> = mu_limit(inputs).iter().map(|v| v.ln()).collect();
    let mut prev_res = f64::INFINITY;
    let mut rises = 0u32;
    for _ in 0..500 {
        let mu: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let res = mu_residual(p, inputs, &mu);
        let norm = res.iter().fold(0.0f64, |s, &r| s.max(r.abs()));
        if norm <= 1e-12 {
            return Ok(mu);
        }
        if norm >= prev_res {
            rises += 1;
            if rises >= 3 {
                return Err(Error::Mu(format!(
                    "fixed point diverging (residual {norm:e}); increase p or separate the spikes"
                )));
            }
        } else {
            rises = 0;
        }
        prev_res = norm;
        // x_i <- x_i - damping * residual_i / 4  (the diagonal of the
        // system in log coordinates has slope ~4)
        for i in 0..m {
            x[i] -= 0.5 * res[i] / 4.0;
        }
    }
    Err(Error::Mu("fixed point failed to reach 1e-12 within 500 iterations".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_mesh, MeshedOperator, WeightField};
    use crate::greens::robin_function;

    fn single(c: f64, robin: f64) -> MuInputs {
        MuInputs { c: vec![c], robin: vec![robin], green: vec![vec![0.0]] }
    }

    /// Independent oracle: damped Newton with finite-difference Jacobian
    /// on the same residual.
    fn newton_oracle(p: f64, inputs: &MuInputs, x0: &[f64]) -> Vec<f64> {
        let m = x0.len();
        let mut x = x0.to_vec();
        for _ in 0..100 {
            let mu: Vec<f64> = x.iter().map(|v| v.exp()).collect();
            let r = mu_residual(p, inputs, &mu);
            if r.iter().all(|v| v.abs() < 1e-14) {
                break;
            }
            let h = 1e-7;
            let mut jac = vec![vec![0.0; m]; m];
            for j in 0..m {
                let mut xp = x.clone();
                xp[j] += h;
                let mup: Vec<f64> = xp.iter().map(|v| v.exp()).collect();
                let rp = mu_residual(p, inputs, &mup);
                for i in 0..m {
                    jac[i][j] = (rp[i] - r[i]) / h;
                }
            }
            // solve jac dx = r by Gaussian elimination
            let mut a = jac.clone();
            let mut b = r.clone();
            for col in 0..m {
                let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
                a.swap(col, piv);
                b.swap(col, piv);
                for row in (col + 1)..m {
                    let f = a[row][col] / a[col][col];
                    for k in col..m {
                        a[row][k] -= f * a[col][k];
                    }
                    b[row] -= f * b[col];
                }
            }
            let mut dx = vec![0.0; m];
            for col in (0..m).rev() {
                let mut s = b[col];
                for k in (col + 1)..m {
                    s -= a[col][k] * dx[k];
                }
                dx[col] = s / a[col][col];
            }
            for i in 0..m {
                x[i] -= dx[i];
            }
        }
        x.iter().map(|v| v.exp()).collect()
    }

    #[test]
    fn scaling_formulas_are_consistent() {
        for p in [10.0, 40.0, 100.0] {
            let cfg = SpikeConfig { p, points: vec![], l: 0, mu: vec![] };
            assert!((cfg.eps() - (-p / 4.0).exp()).abs() < 1e-300);
            let rel = (cfg.gamma() - cfg.gamma_via_eps()).abs() / cfg.gamma();
            assert!(rel <= 1e-14, "p={p}: {rel:e}");
        }
    }

    #[test]
    fn single_interior_spike_approaches_limit() {
        let inputs = single(8.0 * std::f64::consts::PI, 0.1);
        let limit = mu_limit(&inputs)[0];
        assert!((limit - (-0.75 + 2.0 * std::f64::consts::PI * 0.1).exp()).abs() < 1e-14);
        let mut prev_gap = f64::INFINITY;
        for p in [20.0, 40.0, 80.0, 160.0] {
            let mu = solve_mu(p, &inputs).unwrap()[0];
            let gap = (mu - limit).abs();
            assert!(gap < prev_gap, "p={p}: gap {gap} vs {prev_gap}");
            // gap bounded by c log^2 p / p
            assert!(gap <= 5.0 * p.ln().powi(2) / p, "p={p}: gap {gap}");
            prev_gap = gap;
        }
    }

    #[test]
    fn boundary_spike_limit_formula() {
        let inputs = single(4.0 * std::f64::consts::PI, 0.3);
        let limit = mu_limit(&inputs)[0];
        assert!((limit - (-0.75 + std::f64::consts::PI * 0.3).exp()).abs() < 1e-14);
    }

    #[test]
    fn residual_reaches_tolerance_and_matches_newton() {
        // synthetic two-spike data in a plausible range
        let inputs = MuInputs {
            c: vec![8.0 * std::f64::consts::PI, 4.0 * std::f64::consts::PI],
            robin: vec![0.08, 0.21],
            green: vec![vec![0.0, 0.05], vec![0.04, 0.0]],
        };
        let p = 50.0;
        let mu = solve_mu(p, &inputs).unwrap();
        let res = mu_residual(p, &inputs, &mu);
        assert!(res.iter().all(|r| r.abs() <= 1e-12), "{res:?}");

        let x0: Vec<f64> = mu_limit(&inputs).iter().map(|v| v.ln()).collect();
        let oracle = newton_oracle(p, &inputs, &x0);
        for i in 0..2 {
            assert!(
                (mu[i] - oracle[i]).abs() / oracle[i] < 1e-11,
                "mu[{i}] = {} vs oracle {}",
                mu[i],
                oracle[i]
            );
        }
    }

    #[test]
    fn mu_bounds_hold() {
        let inputs = MuInputs {
            c: vec![8.0 * std::f64::consts::PI; 3],
            robin: vec![-0.2, 0.0, 0.3],
            green: vec![
                vec![0.0, 0.02, 0.01],
                vec![0.02, 0.0, 0.03],
                vec![0.01, 0.03, 0.0],
            ],
        };
        for p in [20.0, 60.0, 120.0] {
            let mu = solve_mu(p, &inputs).unwrap();
            let kappa = 2.0 * (9.0 + 1.0);
            for &m in &mu {
                assert!(m >= 1e-3 && m <= 1e3 * p.powf(kappa), "mu {m} out of bounds at p={p}");
            }
        }
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let dom = DomainGeometry::disk(Vec2::ZERO, 1.0).unwrap();
        // l exceeding m
        let cfg = SpikeConfig { p: 40.0, points: vec![], l: 1, mu: vec![] };
        assert!(cfg.validate(&dom).is_err());
        // coincident spikes
        let pt = SpikePoint { position: Vec2::new(0.1, 0.0), kind: SourceKind::Interior };
        let cfg = SpikeConfig { p: 40.0, points: vec![pt, pt], l: 2, mu: vec![] };
        assert!(cfg.validate(&dom).is_err());
        // wrong kind order
        let b = SpikePoint { position: Vec2::new(1.0, 0.0), kind: SourceKind::Boundary };
        let i = SpikePoint { position: Vec2::new(0.0, 0.0), kind: SourceKind::Interior };
        let cfg = SpikeConfig { p: 40.0, points: vec![b, i], l: 1, mu: vec![] };
        assert!(cfg.validate(&dom).is_err());
        // a valid one passes
        let cfg = SpikeConfig { p: 40.0, points: vec![i, b], l: 1, mu: vec![] };
        cfg.validate(&dom).unwrap();
    }

    #[test]
    fn sensitivity_to_robin_stays_bounded() {
        // |d log mu / d robin| ~ c/4 at large p; proxy for the
        // spatial-derivative bound via the chain rule
        let p = 60.0;
        let base = single(8.0 * std::f64::consts::PI, 0.1);
        let bumped = single(8.0 * std::f64::consts::PI, 0.1 + 1e-6);
        let m0 = solve_mu(p, &base).unwrap()[0];
        let m1 = solve_mu(p, &bumped).unwrap()[0];
        let d = (m1.ln() - m0.ln()) / 1e-6;
        assert!((d - 2.0 * std::f64::consts::PI).abs() < 0.1, "{d}");
    }

    #[test]
    fn gathered_inputs_solve_on_a_real_disk() {
        let dom = DomainGeometry::disk(Vec2::ZERO, 1.0).unwrap();
        let xi = Vec2::new(0.0, 0.0);
        let mesh = build_mesh(&dom, 0.1, &[(xi, 0.02)]).unwrap();
        let op = MeshedOperator::assemble(&dom, mesh, WeightField::Constant(1.0)).unwrap();
        let mut cache = GreenCache::new(&op);
        let pts = vec![SpikePoint { position: xi, kind: SourceKind::Interior }];
        let inputs = MuInputs::gather(&mut cache, &pts).unwrap();
        let robin = robin_function(&op, xi, SourceKind::Interior).unwrap();
        assert!((inputs.robin[0] - robin).abs() < 1e-12);
        let mu = solve_mu(50.0, &inputs).unwrap();
        assert!(mu[0] > 0.0 && mu[0].is_finite());
    }
}
