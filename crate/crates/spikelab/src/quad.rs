//! Adaptive 1D quadrature built on a Gauss(7)/Kronrod(15) pair, plus a
//! tail substitution for integrals over `[a, infinity)`.

use crate::scalar::{lit, Scalar};
use crate::{Error, Result};

// 15-point Kronrod abscissae (positive half) and weights; the embedded
// 7-point Gauss rule sits on the odd-indexed abscissae.
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// One Gauss-Kronrod panel on `[a, b]`; returns the Kronrod value and an
/// error estimate from the Gauss/Kronrod discrepancy.
pub fn gk15<T: Scalar, F: Fn(T) -> T>(f: &F, a: T, b: T) -> (T, T) {
    let half = lit::<T>(0.5);
    let c = half * (a + b);
    let hw = half * (b - a);

    let fc = f(c);
    let mut res_k = lit::<T>(WGK[7]) * fc;
    let mut res_g = lit::<T>(WG[3]) * fc;

    for (j, &x) in XGK.iter().enumerate().take(7) {
        let dx = hw * lit::<T>(x);
        let fs = f(c - dx) + f(c + dx);
        res_k += lit::<T>(WGK[j]) * fs;
        if j % 2 == 1 {
            res_g += lit::<T>(WG[j / 2]) * fs;
        }
    }
    res_k *= hw;
    res_g *= hw;

    let err = (res_k - res_g).abs();
    // sharpen the raw discrepancy the usual way
    let err = if err > T::zero() {
        let e = (lit::<T>(200.0) * err).powf(lit::<T>(1.5));
        if e < err {
            e
        } else {
            err
        }
    } else {
        err
    };
    (res_k, err)
}

/// Adaptive bisection to absolute tolerance `abs_tol`. Fails (naming the
/// offending subinterval) if the tolerance cannot be met.
pub fn integrate<T: Scalar, F: Fn(T) -> T>(f: F, a: T, b: T, abs_tol: T) -> Result<T> {
    const MAX_PANELS: usize = 4096;
    let (val, err) = gk15(&f, a, b);
    // worklist of panels; always split the one with the largest error
    let mut panels: Vec<(T, T, T, T)> = vec![(a, b, val, err)];
    loop {
        let total_err = panels.iter().fold(T::zero(), |s, p| s + p.3);
        if total_err <= abs_tol {
            return Ok(panels.iter().fold(T::zero(), |s, p| s + p.2));
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let (lo, hi, _, err) = panels[worst];
        let mid = lit::<T>(0.5) * (lo + hi);
        let too_narrow = (hi - lo).abs() <= lit::<T>(4.0 * f64::EPSILON) * (lo.abs() + hi.abs());
        if panels.len() >= MAX_PANELS || too_narrow {
            let val = panels.iter().fold(T::zero(), |s, p| s + p.2);
            return Err(Error::Quadrature(format!(
                "tolerance not met on [{lo}, {hi}]: err estimate {err:e}, achieved total {val:e} +/- {total_err:e}"
            )));
        }
        let left = gk15(&f, lo, mid);
        let right = gk15(&f, mid, hi);
        panels[worst] = (lo, mid, left.0, left.1);
        panels.push((mid, hi, right.0, right.1));
    }
}

/// Integral over `[a, infinity)` with the tail handled by `t -> 1/t`.
///
/// The finite part runs to `cut = max(a, 1)`; the tail becomes
/// `int_0^{1/cut} f(1/u) / u^2 du`.
pub fn integrate_to_inf<T: Scalar, F: Fn(T) -> T>(f: F, a: T, abs_tol: T) -> Result<T> {
    let one = T::one();
    let cut = if a > one { a } else { one };
    let half_tol = lit::<T>(0.5) * abs_tol;
    let finite = integrate(&f, a, cut, half_tol)?;
    let tail = integrate(
        |u: T| {
            if u == T::zero() {
                T::zero()
            } else {
                let t = one / u;
                f(t) * t * t
            }
        },
        T::zero(),
        one / cut,
        half_tol,
    )?;
    Ok(finite + tail)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        // K15 is exact to degree 22; a degree-10 polynomial needs one panel.
        let v = integrate(|x: f64| x.powi(10), 0.0, 1.0, 1e-12).unwrap();
        assert!((v - 1.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn log_singularity() {
        let v = integrate(|x: f64| x.ln(), 0.0, 1.0, 1e-11).unwrap();
        assert!((v + 1.0).abs() < 1e-10, "got {v}");
    }

    #[test]
    fn gaussian_tail_to_infinity() {
        let v = integrate_to_inf(|x: f64| (-x * x).exp(), 0.0, 1e-12).unwrap();
        assert!((v - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-11);
    }

    #[test]
    fn algebraic_tail() {
        // int_1^inf dx/x^2 = 1
        let v = integrate_to_inf(|x: f64| 1.0 / (x * x), 1.0, 1e-12).unwrap();
        assert!((v - 1.0).abs() < 1e-11);
    }

    #[test]
    fn works_in_f32() {
        let v: f32 = integrate(|x: f32| x * x, 0.0, 1.0, 1e-5).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn hopeless_tolerance_reports_interval() {
        let e = integrate(|x: f64| (1.0 / x).sin() / x, 1e-14, 1.0, 1e-300).unwrap_err();
        assert!(e.to_string().contains("tolerance not met"));
    }
}
