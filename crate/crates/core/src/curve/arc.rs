//! Arc-length and curvature utilities for [`CurveParams`].

use super::CurveParams;
use crate::error::{Error, Result};
use crate::geom::{Polyline3, Vec3};
use crate::scalar::Scalar;

/// Default absolute tolerance for arc-length quadrature, in meters.
pub const ARC_TOL: f64 = 1e-6;

/// Planar speed below which the parameterization counts as a cusp, relative
/// to the chord length.
const CUSP_REL: f64 = 1e-12;

/// Signed planar curvature of the xy projection at `t` (positive when the
/// curve turns counter-clockwise).
pub fn signed_curvature<T: Scalar>(theta: &CurveParams<T>, t: T) -> Result<T> {
    let d1 = theta.derivative(t).xy();
    let d2 = theta.second_derivative(t).xy();
    let speed = d1.norm();
    let scale = theta.axis().norm().max(T::one());
    if speed <= T::lit(CUSP_REL) * scale {
        return Err(Error::Cusp { t: t.value_f64() });
    }
    Ok(d1.cross(d2) / (speed * speed * speed))
}

/// Unsigned planar curvature `|x'y'' − y'x''| / (x'² + y'²)^{3/2}` at `t`.
pub fn curvature<T: Scalar>(theta: &CurveParams<T>, t: T) -> Result<T> {
    signed_curvature(theta, t).map(|k| k.abs())
}

/// 3D arc length between `t0` and `t1` (negative if `t1 < t0`).
pub fn arc_length<T: Scalar>(theta: &CurveParams<T>, t0: T, t1: T) -> T {
    arc_length_tol(theta, t0, t1, T::lit(ARC_TOL))
}

/// Adaptive Simpson quadrature of the speed `‖f'(t)‖` to absolute tolerance
/// `tol`.
pub fn arc_length_tol<T: Scalar>(theta: &CurveParams<T>, t0: T, t1: T, tol: T) -> T {
    if t0 == t1 {
        return T::zero();
    }
    let speed = |t: T| theta.derivative(t).norm();
    let two = T::lit(2.0);
    let m = (t0 + t1) / two;
    let (fa, fm, fb) = (speed(t0), speed(m), speed(t1));
    let whole = (t1 - t0) / T::lit(6.0) * (fa + T::lit(4.0) * fm + fb);
    simpson(&speed, t0, t1, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson<T: Scalar>(f: &impl Fn(T) -> T, a: T, b: T, fa: T, fm: T, fb: T, whole: T, tol: T, depth: u32) -> T {
    let two = T::lit(2.0);
    let m = (a + b) / two;
    let lm = (a + m) / two;
    let rm = (m + b) / two;
    let (flm, frm) = (f(lm), f(rm));
    let six = T::lit(6.0);
    let four = T::lit(4.0);
    let left = (m - a) / six * (fa + four * flm + fm);
    let right = (b - m) / six * (fm + four * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= T::lit(15.0) * tol {
        return left + right + delta / T::lit(15.0);
    }
    simpson(f, a, m, fa, flm, fm, left, tol / two, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / two, depth - 1)
}

/// Finds `t ≥ t0` with `arc_length(t0, t) = s` (s ≥ 0), by safeguarded
/// Newton iteration on the speed. May return `t > 1` if `s` exceeds the
/// remaining length.
pub fn invert_arc_length<T: Scalar>(theta: &CurveParams<T>, t0: T, s: T) -> T {
    if s <= T::zero() {
        return t0;
    }
    let tol = T::lit(1e-10);
    // bracket
    let mut lo = t0;
    let mut hi = t0 + T::lit(0.25);
    let mut grow = 0;
    while arc_length_tol(theta, t0, hi, tol) < s && grow < 60 {
        lo = hi;
        hi = hi + (hi - t0);
        grow += 1;
    }
    let mut t = (lo + hi) / T::lit(2.0);
    for _ in 0..100 {
        let g = arc_length_tol(theta, t0, t, tol) - s;
        if g.abs() <= T::lit(1e-10) {
            break;
        }
        if g > T::zero() {
            hi = t;
        } else {
            lo = t;
        }
        let v = theta.derivative(t).norm();
        let newton = if v > T::zero() { t - g / v } else { lo };
        t = if newton > lo && newton < hi { newton } else { (lo + hi) / T::lit(2.0) };
        if hi - lo <= T::lit(1e-15) {
            break;
        }
    }
    t
}

/// `n` points equally spaced in 3D arc length from `p_s` to `p_e`.
pub fn sample_uniform<T: Scalar>(theta: &CurveParams<T>, n: usize) -> Result<Polyline3<T>> {
    if n < 2 {
        return Err(Error::invalid(format!("sample_uniform needs n >= 2, got {n}")));
    }
    let total = arc_length_tol(theta, T::zero(), T::one(), T::lit(1e-10));
    if total <= T::zero() {
        return Err(Error::Degenerate("curve has zero arc length".into()));
    }
    let step = total / T::from_usize(n - 1).unwrap();
    let mut pts: Vec<Vec3<T>> = Vec::with_capacity(n);
    pts.push(theta.p_s);
    let mut t = T::zero();
    for _ in 1..n - 1 {
        t = invert_arc_length(theta, t, step);
        pts.push(theta.at(t));
    }
    pts.push(theta.p_e);
    Polyline3::new(pts)
}
