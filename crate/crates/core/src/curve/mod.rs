//! Global lane representation: a cubic polynomial parameterized along the
//! lane's own reference axis (the chord from its lower terminal to its upper
//! terminal).
//!
//! A curve is `f(t) = A t³ + B t² + C t + D` with `t ∈ [0, 1]`, where the
//! boundary conditions `f(0) = p_s` and `f(1) = p_e` tie the coefficients to
//! the terminals. Only `A`, `B`, `p_s`, `p_e` are free; `C` and `D` are
//! derived (see [`CurveParams::from_free`]).

mod arc;
mod fit;
mod loss;

pub use arc::{arc_length, arc_length_tol, curvature, invert_arc_length, sample_uniform, signed_curvature};
pub use fit::{fit_curve, fit_fixed_axis, CurveFit, FixedAxisCurve, FixedAxisFit};
pub use loss::{curve_fit_loss, curve_fit_loss_grad, CurveTarget};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::scalar::Scalar;

/// Number of free curve parameters (`A`, `B`, `p_s`, `p_e`).
pub const CURVE_FREE_PARAMS: usize = 12;

/// Boundary-condition tolerance for `A + B + C + D = p_e`.
pub const TERMINAL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveParams<T> {
    #[serde(rename = "A")]
    pub a: Vec3<T>,
    #[serde(rename = "B")]
    pub b: Vec3<T>,
    #[serde(rename = "C")]
    pub c: Vec3<T>,
    #[serde(rename = "D")]
    pub d: Vec3<T>,
    pub p_s: Vec3<T>,
    pub p_e: Vec3<T>,
}

/// A point on the curve, flagged when `t` lies outside `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveSample<T> {
    pub point: Vec3<T>,
    pub extrapolated: bool,
}

impl<T: Scalar> CurveParams<T> {
    /// Builds a curve from its free parameters; `C` and `D` are eliminated so
    /// the terminal boundary conditions hold by construction.
    pub fn from_free(a: Vec3<T>, b: Vec3<T>, p_s: Vec3<T>, p_e: Vec3<T>) -> Self {
        CurveParams { a, b, c: p_e - p_s - a - b, d: p_s, p_s, p_e }
    }

    /// Validating constructor for fully specified coefficients.
    pub fn new(a: Vec3<T>, b: Vec3<T>, c: Vec3<T>, d: Vec3<T>, p_s: Vec3<T>, p_e: Vec3<T>) -> Result<Self> {
        let theta = CurveParams { a, b, c, d, p_s, p_e };
        theta.validate()?;
        Ok(theta)
    }

    /// Straight segment from `p_s` to `p_e`.
    pub fn line(p_s: Vec3<T>, p_e: Vec3<T>) -> Self {
        Self::from_free(Vec3::zero(), Vec3::zero(), p_s, p_e)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.a, self.b, self.c, self.d, self.p_s, self.p_e];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("curve parameters must be finite"));
        }
        if self.d != self.p_s {
            return Err(Error::invalid("boundary condition D = p_s violated"));
        }
        let end = self.a + self.b + self.c + self.d;
        if end.max_abs_diff(self.p_e) > T::lit(TERMINAL_TOL) {
            return Err(Error::invalid("boundary condition A + B + C + D = p_e violated"));
        }
        if self.p_e == self.p_s {
            return Err(Error::Degenerate("curve terminals coincide".into()));
        }
        Ok(())
    }

    /// Free parameter vector `[A, B, p_s, p_e]`.
    pub fn to_free(&self) -> [T; CURVE_FREE_PARAMS] {
        let mut out = [T::zero(); CURVE_FREE_PARAMS];
        for (k, v) in [self.a, self.b, self.p_s, self.p_e].iter().enumerate() {
            out[3 * k] = v.x;
            out[3 * k + 1] = v.y;
            out[3 * k + 2] = v.z;
        }
        out
    }

    pub fn from_free_slice(p: &[T]) -> Self {
        assert!(p.len() >= CURVE_FREE_PARAMS, "free parameter slice too short");
        let v = |k: usize| Vec3::new(p[3 * k], p[3 * k + 1], p[3 * k + 2]);
        Self::from_free(v(0), v(1), v(2), v(3))
    }

    /// `f(t)` by Horner's rule.
    #[inline]
    pub fn at(&self, t: T) -> Vec3<T> {
        ((self.a * t + self.b) * t + self.c) * t + self.d
    }

    /// `f'(t)`.
    #[inline]
    pub fn derivative(&self, t: T) -> Vec3<T> {
        let three = T::lit(3.0);
        let two = T::lit(2.0);
        (self.a * (three * t) + self.b * two) * t + self.c
    }

    /// `f''(t)`.
    #[inline]
    pub fn second_derivative(&self, t: T) -> Vec3<T> {
        self.a * (T::lit(6.0) * t) + self.b * T::lit(2.0)
    }

    pub fn axis(&self) -> Vec3<T> {
        self.p_e - self.p_s
    }

    /// Rigid translation of the whole curve.
    pub fn translated(&self, v: Vec3<T>) -> Self {
        Self::from_free(self.a, self.b, self.p_s + v, self.p_e + v)
    }

    pub fn cast<U: Scalar>(&self) -> CurveParams<U> {
        CurveParams {
            a: self.a.cast(),
            b: self.b.cast(),
            c: self.c.cast(),
            d: self.d.cast(),
            p_s: self.p_s.cast(),
            p_e: self.p_e.cast(),
        }
    }
}

/// Evaluates the curve at `t`; values outside `[0, 1]` are extrapolated and
/// flagged.
pub fn eval_curve<T: Scalar>(theta: &CurveParams<T>, t: T) -> CurveSample<T> {
    CurveSample { point: theta.at(t), extrapolated: t < T::zero() || t > T::one() }
}

/// Relative position of `p` along the axis `p_s → p_e` (not clamped).
pub fn project_to_axis<T: Scalar>(p_s: Vec3<T>, p_e: Vec3<T>, p: Vec3<T>) -> Result<T> {
    let axis = p_e - p_s;
    let len2 = axis.norm_sq();
    if len2 == T::zero() {
        return Err(Error::Degenerate("reference axis has coincident terminals".into()));
    }
    Ok(axis.dot(p - p_s) / len2)
}

/// `true` when `a` is the lower terminal relative to `b`: smaller y, then
/// smaller x, then smaller z.
pub fn is_lower<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> bool {
    (a.y, a.x, a.z) < (b.y, b.x, b.z)
}

/// Orders two endpoints as `(lower, upper)`.
pub fn order_terminals<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> (Vec3<T>, Vec3<T>) {
    if is_lower(b, a) {
        (b, a)
    } else {
        (a, b)
    }
}
