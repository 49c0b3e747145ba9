//! Smooth planar domains given by a periodic boundary parametrization
//! `s in [0,1) -> R^2`, traversed counterclockwise. Provides tangents,
//! outward normals, curvature, point-in-domain tests, closest boundary
//! point, and the near-boundary reflection map.

use crate::vec2::Vec2;
use crate::{Error, Result};

/// A point on the boundary with its local frame.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryPoint {
    pub param: f64,
    pub position: Vec2,
    /// Unit outward normal.
    pub normal: Vec2,
    /// Unit tangent in the direction of increasing parameter.
    pub tangent: Vec2,
}

/// Result of projecting an interior point onto the boundary.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryProjection {
    pub distance: f64,
    pub nearest: BoundaryPoint,
    /// False when a second minimizer ties within tolerance; `nearest` is
    /// then the one with the smaller parameter.
    pub unique: bool,
}

#[derive(Debug, Clone)]
enum Curve {
    Disk {
        center: Vec2,
        radius: f64,
    },
    Ellipse {
        center: Vec2,
        a: f64,
        b: f64,
    },
    /// Axis-aligned rectangle with quarter-circle corners, parametrized
    /// proportionally to arclength starting at the right edge midpoint.
    SmoothedRect {
        center: Vec2,
        half_w: f64,
        half_h: f64,
        corner_r: f64,
    },
    /// Periodic cubic spline through uniformly spaced sample points.
    Spline {
        pts: Vec<Vec2>,
        /// Second derivatives at the knots (periodic spline coefficients).
        m: Vec<Vec2>,
    },
}

#[derive(Debug, Clone)]
pub struct DomainGeometry {
    curve: Curve,
    bbox: (Vec2, Vec2),
    /// Tubular-neighborhood radius: 0.45 / max |curvature|.
    d0: f64,
    /// Dense boundary polygon cached for winding-number tests.
    poly: Vec<Vec2>,
}

const POLY_SAMPLES: usize = 1024;

impl DomainGeometry {
    pub fn disk(center: Vec2, radius: f64) -> Result<Self> {
        if radius <= 0.0 {
            return Err(Error::Geometry(format!("disk radius {radius} must be positive")));
        }
        Self::finish(Curve::Disk { center, radius })
    }

    pub fn ellipse(center: Vec2, a: f64, b: f64) -> Result<Self> {
        if a <= 0.0 || b <= 0.0 {
            return Err(Error::Geometry(format!("ellipse semi-axes ({a}, {b}) must be positive")));
        }
        Self::finish(Curve::Ellipse { center, a, b })
    }

    pub fn smoothed_rect(center: Vec2, half_w: f64, half_h: f64, corner_r: f64) -> Result<Self> {
        if half_w <= 0.0 || half_h <= 0.0 {
            return Err(Error::Geometry("rectangle half-sizes must be positive".into()));
        }
        if corner_r <= 0.0 || corner_r > half_w.min(half_h) {
            return Err(Error::Geometry(format!(
                "corner radius {corner_r} must lie in (0, min(half_w, half_h)]"
            )));
        }
        Self::finish(Curve::SmoothedRect { center, half_w, half_h, corner_r })
    }

    /// Periodic cubic spline through `pts`, which must be listed
    /// counterclockwise; the knots sit at s = i/n.
    pub fn spline(pts: Vec<Vec2>) -> Result<Self> {
        if pts.len() < 4 {
            return Err(Error::Geometry(format!(
                "spline boundary needs at least 4 points, got {}",
                pts.len()
            )));
        }
        let mx = periodic_spline_m(&pts, |p| p.x);
        let my = periodic_spline_m(&pts, |p| p.y);
        let m = mx.into_iter().zip(my).map(|(x, y)| Vec2::new(x, y)).collect();
        Self::finish(Curve::Spline { pts, m })
    }

    fn finish(curve: Curve) -> Result<Self> {
        let mut dom = DomainGeometry {
            curve,
            bbox: (Vec2::ZERO, Vec2::ZERO),
            d0: 0.0,
            poly: Vec::new(),
        };
        dom.poly = (0..POLY_SAMPLES)
            .map(|i| dom.point(i as f64 / POLY_SAMPLES as f64))
            .collect();

        // counterclockwise orientation via the signed area
        let mut area2 = 0.0;
        for i in 0..POLY_SAMPLES {
            let p = dom.poly[i];
            let q = dom.poly[(i + 1) % POLY_SAMPLES];
            area2 += p.cross(q);
        }
        if area2 <= 0.0 {
            return Err(Error::Geometry("boundary curve must be counterclockwise".into()));
        }

        if dom.self_intersects() {
            return Err(Error::Geometry("boundary curve is self-intersecting".into()));
        }

        let mut lo = dom.poly[0];
        let mut hi = dom.poly[0];
        for p in &dom.poly {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        dom.bbox = (lo, hi);

        let mut kmax = 0.0f64;
        for i in 0..2048 {
            kmax = kmax.max(dom.curvature(i as f64 / 2048.0).abs());
        }
        if kmax <= 0.0 || !kmax.is_finite() {
            return Err(Error::Geometry("degenerate boundary curvature".into()));
        }
        dom.d0 = 0.45 / kmax;
        Ok(dom)
    }

    fn self_intersects(&self) -> bool {
        let n = self.poly.len();
        for i in 0..n {
            let (a1, a2) = (self.poly[i], self.poly[(i + 1) % n]);
            for j in (i + 2)..n {
                // skip the shared-endpoint neighbor, including the wrap pair
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (b1, b2) = (self.poly[j], self.poly[(j + 1) % n]);
                if segments_intersect(a1, a2, b1, b2) {
                    return true;
                }
            }
        }
        false
    }

    /// Boundary position at parameter `s` (wrapped into [0,1)).
    pub fn point(&self, s: f64) -> Vec2 {
        let s = wrap(s);
        match &self.curve {
            Curve::Disk { center, radius } => {
                let t = std::f64::consts::TAU * s;
                *center + *radius * Vec2::new(t.cos(), t.sin())
            }
            Curve::Ellipse { center, a, b } => {
                let t = std::f64::consts::TAU * s;
                *center + Vec2::new(a * t.cos(), b * t.sin())
            }
            Curve::SmoothedRect { .. } => self.rect_eval(s).0,
            Curve::Spline { pts, m } => spline_eval(pts, m, s).0,
        }
    }

    /// First derivative of the parametrization (not normalized).
    pub fn velocity(&self, s: f64) -> Vec2 {
        let s = wrap(s);
        match &self.curve {
            Curve::Disk { radius, .. } => {
                let t = std::f64::consts::TAU * s;
                std::f64::consts::TAU * *radius * Vec2::new(-t.sin(), t.cos())
            }
            Curve::Ellipse { a, b, .. } => {
                let t = std::f64::consts::TAU * s;
                std::f64::consts::TAU * Vec2::new(-a * t.sin(), b * t.cos())
            }
            Curve::SmoothedRect { .. } => self.rect_eval(s).1,
            Curve::Spline { pts, m } => spline_eval(pts, m, s).1,
        }
    }

    /// Second derivative of the parametrization.
    pub fn acceleration(&self, s: f64) -> Vec2 {
        let s = wrap(s);
        match &self.curve {
            Curve::Disk { center, .. } => {
                let c = std::f64::consts::TAU;
                -(c * c) * (self.point(s) - *center)
            }
            Curve::Ellipse { a, b, .. } => {
                let t = std::f64::consts::TAU * s;
                let c = std::f64::consts::TAU;
                c * c * Vec2::new(-a * t.cos(), -b * t.sin())
            }
            Curve::SmoothedRect { .. } => self.rect_eval(s).2,
            Curve::Spline { pts, m } => spline_eval(pts, m, s).2,
        }
    }

    /// Signed curvature (positive for counterclockwise convex arcs).
    pub fn curvature(&self, s: f64) -> f64 {
        match &self.curve {
            Curve::Disk { radius, .. } => 1.0 / radius,
            Curve::SmoothedRect { corner_r, .. } => {
                if self.rect_on_arc(wrap(s)) {
                    1.0 / corner_r
                } else {
                    0.0
                }
            }
            _ => {
                let v = self.velocity(s);
                let a = self.acceleration(s);
                v.cross(a) / v.norm().powi(3)
            }
        }
    }

    /// Local frame at parameter `s`.
    pub fn boundary_point(&self, s: f64) -> BoundaryPoint {
        let s = wrap(s);
        let tangent = self.velocity(s).normalized();
        // clockwise rotation of the tangent points outward for a CCW curve
        let normal = Vec2::new(tangent.y, -tangent.x);
        BoundaryPoint { param: s, position: self.point(s), normal, tangent }
    }

    pub fn bbox(&self) -> (Vec2, Vec2) {
        self.bbox
    }

    /// Tubular-neighborhood radius 0.45 / max |curvature|.
    pub fn tubular_radius(&self) -> f64 {
        self.d0
    }

    /// Winding-number test against the dense cached boundary polygon.
    pub fn contains(&self, y: Vec2) -> bool {
        self.winding_number(y) == 1
    }

    /// Winding number of the boundary about `y` (+1 for interior points).
    pub fn winding_number(&self, y: Vec2) -> i32 {
        let n = self.poly.len();
        let mut w = 0i32;
        for i in 0..n {
            let p = self.poly[i];
            let q = self.poly[(i + 1) % n];
            if p.y <= y.y {
                if q.y > y.y && (q - p).cross(y - p) > 0.0 {
                    w += 1;
                }
            } else if q.y <= y.y && (q - p).cross(y - p) < 0.0 {
                w -= 1;
            }
        }
        w
    }

    /// Closest boundary point to the interior point `y`: coarse scan of the
    /// squared-distance function, then Newton with a golden-section
    /// fallback on each local minimum.
    pub fn dist_to_boundary(&self, y: Vec2) -> Result<BoundaryProjection> {
        if !self.contains(y) {
            return Err(Error::Geometry(format!(
                "point ({}, {}) is not strictly inside the domain",
                y.x, y.y
            )));
        }
        const SCAN: usize = 512;
        let g = |s: f64| (self.point(s) - y).norm2();
        let vals: Vec<f64> = (0..SCAN).map(|i| g(i as f64 / SCAN as f64)).collect();

        let mut minima: Vec<(f64, f64)> = Vec::new();
        for i in 0..SCAN {
            let prev = vals[(i + SCAN - 1) % SCAN];
            let next = vals[(i + 1) % SCAN];
            if vals[i] <= prev && vals[i] <= next {
                let s0 = i as f64 / SCAN as f64;
                let bracket = 1.0 / SCAN as f64;
                let s = self.refine_minimum(y, s0, bracket);
                minima.push((s, g(s).sqrt()));
            }
        }
        minima.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        minima.dedup_by(|a, b| circ_dist(a.0, b.0) < 1e-6);

        let best = minima[0];
        let mut unique = true;
        let mut chosen = best;
        for &(s, d) in &minima[1..] {
            if d - best.1 < 1e-9 && circ_dist(s, best.0) > 1e-3 {
                unique = false;
                if s < chosen.0 {
                    chosen = (s, d);
                }
            }
        }
        Ok(BoundaryProjection {
            distance: chosen.1,
            nearest: self.boundary_point(chosen.0),
            unique,
        })
    }

    fn refine_minimum(&self, y: Vec2, s0: f64, bracket: f64) -> f64 {
        // Newton on d/ds |P(s)-y|^2 = 2 (P-y).P'
        let (mut lo, mut hi) = (s0 - bracket, s0 + bracket);
        let mut s = s0;
        let mut newton_ok = false;
        for _ in 0..40 {
            let d = self.point(s) - y;
            let v = self.velocity(s);
            let a = self.acceleration(s);
            let g1 = 2.0 * d.dot(v);
            let g2 = 2.0 * (v.dot(v) + d.dot(a));
            if g2 <= 0.0 {
                break;
            }
            let step = g1 / g2;
            let next = s - step;
            if next < lo || next > hi {
                break;
            }
            s = next;
            if step.abs() < 1e-15 {
                newton_ok = true;
                break;
            }
        }
        if newton_ok {
            return wrap(s);
        }
        // golden-section fallback (handles curvature jumps of the
        // smoothed rectangle, where Newton can chatter)
        let g = |s: f64| (self.point(s) - y).norm2();
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
        wrap(0.5 * (lo + hi))
    }

    /// Reflection y* = y + 2 dist(y, boundary) nu across the boundary, valid
    /// inside the tubular neighborhood.
    pub fn reflect_across_boundary(&self, y: Vec2) -> Result<Vec2> {
        let proj = self.dist_to_boundary(y)?;
        if proj.distance >= self.d0 {
            return Err(Error::Geometry(format!(
                "point at depth {:.6} is outside the tubular neighborhood (d0 = {:.6})",
                proj.distance, self.d0
            )));
        }
        Ok(y + 2.0 * proj.distance * proj.nearest.normal)
    }

    /// Checks the closure lies in the open positive quadrant, as monomial
    /// weights require.
    pub fn in_positive_quadrant(&self) -> bool {
        self.bbox.0.x > 0.0 && self.bbox.0.y > 0.0
    }

    // -- smoothed rectangle internals -------------------------------------

    fn rect_pieces(&self) -> (Vec2, f64, f64, f64, f64) {
        match self.curve {
            Curve::SmoothedRect { center, half_w, half_h, corner_r } => {
                let sw = half_w - corner_r; // straight half-lengths
                let sh = half_h - corner_r;
                let total = 4.0 * sw + 4.0 * sh + std::f64::consts::TAU * corner_r;
                (center, sw, sh, corner_r, total)
            }
            _ => unreachable!(),
        }
    }

    fn rect_on_arc(&self, s: f64) -> bool {
        let (_, sw, sh, r, total) = self.rect_pieces();
        let quarter = std::f64::consts::FRAC_PI_2 * r;
        let mut t = s * total;
        for len in [sh, quarter, 2.0 * sw, quarter, 2.0 * sh, quarter, 2.0 * sw, quarter, sh] {
            let arc = len == quarter;
            if t <= len {
                return arc;
            }
            t -= len;
        }
        true
    }

    /// Position, velocity, acceleration at `s` for the smoothed rectangle
    /// (arclength-proportional, so |velocity| equals the total length).
    fn rect_eval(&self, s: f64) -> (Vec2, Vec2, Vec2) {
        let (c, sw, sh, r, total) = self.rect_pieces();
        let quarter = std::f64::consts::FRAC_PI_2 * r;
        let mut t = s * total;

        let line = |start: Vec2, dir: Vec2, t: f64| {
            (c + start + t * dir, total * dir, Vec2::ZERO)
        };
        let arc = |center: Vec2, a0: f64, t: f64| {
            let ang = a0 + t / r;
            let rad = Vec2::new(ang.cos(), ang.sin());
            let tan = Vec2::new(-ang.sin(), ang.cos());
            (c + center + r * rad, total * tan, -(total * total / r) * rad)
        };

        let pieces: [(f64, usize); 9] = [
            (sh, 0),
            (quarter, 1),
            (2.0 * sw, 2),
            (quarter, 3),
            (2.0 * sh, 4),
            (quarter, 5),
            (2.0 * sw, 6),
            (quarter, 7),
            (sh, 8),
        ];
        for (len, idx) in pieces {
            if t <= len || idx == 8 {
                return match idx {
                    0 => line(Vec2::new(sw + r, 0.0), Vec2::new(0.0, 1.0), t),
                    1 => arc(Vec2::new(sw, sh), 0.0, t),
                    2 => line(Vec2::new(sw, sh + r), Vec2::new(-1.0, 0.0), t),
                    3 => arc(Vec2::new(-sw, sh), std::f64::consts::FRAC_PI_2, t),
                    4 => line(Vec2::new(-(sw + r), sh), Vec2::new(0.0, -1.0), t),
                    5 => arc(Vec2::new(-sw, -sh), std::f64::consts::PI, t),
                    6 => line(Vec2::new(-sw, -(sh + r)), Vec2::new(1.0, 0.0), t),
                    7 => arc(Vec2::new(sw, -sh), 1.5 * std::f64::consts::PI, t),
                    _ => line(Vec2::new(sw + r, -sh), Vec2::new(0.0, 1.0), t),
                };
            }
            t -= len;
        }
        unreachable!()
    }
}

#[inline]
fn wrap(s: f64) -> f64 {
    let s = s.fract();
    if s < 0.0 {
        s + 1.0
    } else {
        s
    }
}

/// Distance on the parameter circle [0,1).
fn circ_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

fn segments_intersect(a1: Vec2, a2: Vec2, b1: Vec2, b2: Vec2) -> bool {
    let d1 = (a2 - a1).cross(b1 - a1);
    let d2 = (a2 - a1).cross(b2 - a1);
    let d3 = (b2 - b1).cross(a1 - b1);
    let d4 = (b2 - b1).cross(a2 - b1);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Second derivatives of a periodic cubic spline with uniform knot spacing
/// h = 1/n, by cyclic tridiagonal elimination (Sherman-Morrison).
fn periodic_spline_m(pts: &[Vec2], coord: impl Fn(&Vec2) -> f64) -> Vec<f64> {
    let n = pts.len();
    let h = 1.0 / n as f64;
    let y: Vec<f64> = pts.iter().map(&coord).collect();
    // system: (h/6) m_{i-1} + (2h/3) m_i + (h/6) m_{i+1} = (y_{i+1} - 2 y_i + y_{i-1}) / h
    let a = h / 6.0;
    let b = 2.0 * h / 3.0;
    let rhs: Vec<f64> = (0..n)
        .map(|i| (y[(i + 1) % n] - 2.0 * y[i] + y[(i + n - 1) % n]) / h)
        .collect();

    // cyclic system solved as tridiagonal plus rank-one correction
    let gamma = -b;
    let mut diag = vec![b; n];
    diag[0] = b - gamma;
    diag[n - 1] = b - a * a / gamma;
    let solve_tri = |d: &[f64], r: &[f64]| -> Vec<f64> {
        let mut c_prime = vec![0.0; n];
        let mut d_prime = vec![0.0; n];
        c_prime[0] = a / d[0];
        d_prime[0] = r[0] / d[0];
        for i in 1..n {
            let m = d[i] - a * c_prime[i - 1];
            c_prime[i] = a / m;
            d_prime[i] = (r[i] - a * d_prime[i - 1]) / m;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = d_prime[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = d_prime[i] - c_prime[i] * x[i + 1];
        }
        x
    };
    let x = solve_tri(&diag, &rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = a;
    let z = solve_tri(&diag, &u);
    let fact = (x[0] + x[n - 1] * a / gamma) / (1.0 + z[0] + z[n - 1] * a / gamma);
    (0..n).map(|i| x[i] - fact * z[i]).collect()
}

/// Spline position, velocity, acceleration at parameter `s`.
fn spline_eval(pts: &[Vec2], m: &[Vec2], s: f64) -> (Vec2, Vec2, Vec2) {
    let n = pts.len();
    let h = 1.0 / n as f64;
    let i = ((s * n as f64).floor() as usize).min(n - 1);
    let j = (i + 1) % n;
    let t = s - i as f64 * h; // local coordinate in [0, h]
    let u = h - t;
    let (p0, p1, m0, m1) = (pts[i], pts[j], m[i], m[j]);
    let pos = (u * u * u * m0 + t * t * t * m1) / (6.0 * h)
        + (p0 / h - h * m0 / 6.0) * u
        + (p1 / h - h * m1 / 6.0) * t;
    let vel = (-3.0 * u * u * m0 + 3.0 * t * t * m1) / (6.0 * h) - (p0 / h - h * m0 / 6.0)
        + (p1 / h - h * m1 / 6.0);
    let acc = (u * m0 + t * m1) / h;
    (pos, vel, acc)
}
