//! Random fixtures shared by unit tests.

use rand::Rng;

use crate::curve::CurveParams;
use crate::geom::{Polyline3, Vec3};

pub fn random_vec(rng: &mut impl Rng, lo: f64, hi: f64) -> Vec3<f64> {
    Vec3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi))
}

/// Arbitrary cubic (coefficients need not respect the axis geometry).
pub fn random_curve(rng: &mut impl Rng) -> CurveParams<f64> {
    let p_s = random_vec(rng, -10.0, 10.0);
    let p_e = p_s + random_vec(rng, -10.0, 10.0) + Vec3::new(0.0, 12.0, 0.0);
    CurveParams::from_free(random_vec(rng, -2.0, 2.0), random_vec(rng, -2.0, 2.0), p_s, p_e)
}

/// Cubic whose axial component is linear in `t`, so that projecting
/// `f(t)` onto the reference axis returns `t` exactly.
pub fn adaptive_curve(rng: &mut impl Rng) -> CurveParams<f64> {
    let p_s = random_vec(rng, -10.0, 10.0);
    let heading: f64 = rng.random_range(-1.2..1.2);
    let len = rng.random_range(8.0..25.0);
    let p_e = p_s + Vec3::new(heading.sin() * len, heading.cos() * len, rng.random_range(-0.5..0.5));
    let axis = p_e - p_s;
    let unit = axis / axis.norm();
    let strip = |v: Vec3<f64>| v - unit * v.dot(unit);
    let a = strip(random_vec(rng, -2.0, 2.0));
    let b = strip(random_vec(rng, -2.0, 2.0));
    CurveParams::from_free(a, b, p_s, p_e)
}

/// `n` samples at evenly spaced `t`.
pub fn sample_params(theta: &CurveParams<f64>, n: usize) -> Polyline3<f64> {
    Polyline3::new((0..n).map(|i| theta.at(i as f64 / (n - 1) as f64)).collect()).unwrap()
}

/// Wandering polyline heading roughly along +y.
pub fn random_polyline(rng: &mut impl Rng, n: usize) -> Polyline3<f64> {
    let mut p = random_vec(rng, -5.0, 5.0);
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        pts.push(p);
        p += Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(0.2..1.0), rng.random_range(-0.1..0.1));
    }
    Polyline3::new(pts).unwrap()
}
