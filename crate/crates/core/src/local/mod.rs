//! Local lane representation: a thin bar per anchor cell, matched through the
//! Gaussian it induces.
//!
//! Heading convention: `alpha` is measured counter-clockwise from the +y axis,
//! so the bar direction is `(−sin α, cos α)` and the covariance square root is
//! `R(α) · diag(w_l, l/2) · R(α)ᵀ`. With `α ∈ (−π/2, π/2]` the bar always
//! points "up" in y, and lanes running along the y axis sit near `α = 0`, far
//! from the wrap-around.

mod loss;

pub use loss::{
    height_loss, height_loss_grad, local_kl_loss, local_total_loss, segment_kl, segment_kl_grad, smoothness_loss,
    smoothness_loss_grad, LocalLossParts, LossWeights,
};

use serde::{Deserialize, Serialize};

use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::geom::{Vec2, Vec3};
use crate::scalar::Scalar;

/// Local bar inside one anchor cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams<T> {
    /// Bar center; the lane point reported for the cell.
    pub p_o: Vec3<T>,
    /// Bar length, meters.
    pub l: T,
    /// Heading from +y, radians, in `(−π/2, π/2]`.
    pub alpha: T,
}

impl<T: Scalar> SegmentParams<T> {
    pub fn new(p_o: Vec3<T>, l: T, alpha: T) -> Result<Self> {
        let s = SegmentParams { p_o, l, alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.p_o.is_finite() || !self.l.is_finite() || !self.alpha.is_finite() {
            return Err(Error::invalid("segment parameters must be finite"));
        }
        if self.l <= T::zero() {
            return Err(Error::invalid("segment length must be positive"));
        }
        let half_pi = T::FRAC_PI_2();
        if self.alpha <= -half_pi || self.alpha > half_pi {
            return Err(Error::invalid("segment heading outside (-pi/2, pi/2]"));
        }
        Ok(())
    }

    /// Unit bar direction in the BEV plane.
    pub fn direction(&self) -> Vec2<T> {
        Vec2::new(-self.alpha.sin(), self.alpha.cos())
    }

    /// Brings `l` and `alpha` back into their principal ranges; the induced
    /// Gaussian is unchanged.
    pub fn normalized(&self) -> Self {
        SegmentParams { p_o: self.p_o, l: self.l.abs(), alpha: wrap_heading(self.alpha) }
    }

    pub fn cast<U: Scalar>(&self) -> SegmentParams<U> {
        SegmentParams { p_o: self.p_o.cast(), l: crate::scalar::cast(self.l), alpha: crate::scalar::cast(self.alpha) }
    }
}

/// Maps any angle into `(−π/2, π/2]` (bars are symmetric under `α → α + π`).
pub fn wrap_heading<T: Scalar>(alpha: T) -> T {
    let pi = T::PI();
    let half = T::FRAC_PI_2();
    let mut a = alpha - pi * ((alpha + half) / pi).floor();
    // a ∈ [−π/2, π/2)
    if a <= -half {
        a += pi;
    }
    a
}

/// Heading (from +y) of the planar direction `d`, in `(−π/2, π/2]`.
pub fn heading_of<T: Scalar>(d: Vec2<T>) -> T {
    wrap_heading((-d.x).atan2(d.y))
}

/// Symmetric 2×2 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sym2<T> {
    pub xx: T,
    pub xy: T,
    pub yy: T,
}

impl<T: Scalar> Sym2<T> {
    pub fn det(&self) -> T {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> T {
        self.xx + self.yy
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det == T::zero() {
            return None;
        }
        Some(Sym2 { xx: self.yy / det, xy: -self.xy / det, yy: self.xx / det })
    }

    pub fn is_spd(&self) -> bool {
        self.xx > T::zero() && self.det() > T::zero() && self.xx.is_finite() && self.yy.is_finite() && self.xy.is_finite()
    }

    pub fn quad(&self, v: Vec2<T>) -> T {
        self.xx * v.x * v.x + T::lit(2.0) * self.xy * v.x * v.y + self.yy * v.y * v.y
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> (T, T) {
        let half_tr = self.trace() / T::lit(2.0);
        let diff = (self.xx - self.yy) / T::lit(2.0);
        let r = (diff * diff + self.xy * self.xy).sqrt();
        (half_tr - r, half_tr + r)
    }
}

/// 2D Gaussian covering a segment bar.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gauss2<T> {
    pub mu: Vec2<T>,
    pub sigma: Sym2<T>,
}

impl<T: Scalar> Gauss2<T> {
    pub fn new(mu: Vec2<T>, sigma: Sym2<T>) -> Result<Self> {
        if !sigma.is_spd() {
            return Err(Error::NotSpd);
        }
        Ok(Gauss2 { mu, sigma })
    }

    /// Log density at `x`.
    pub fn log_pdf(&self, x: Vec2<T>) -> T {
        let inv = self.sigma.inverse().expect("SPD covariance");
        let two_pi = T::lit(2.0) * T::PI();
        -two_pi.ln() - self.sigma.det().ln() / T::lit(2.0) - inv.quad(x - self.mu) / T::lit(2.0)
    }
}

/// Fixed bar half-axis across the lane, meters. Stores the already-widened
/// value used in the covariance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalWidth<T>(T);

impl<T: Scalar> LocalWidth<T> {
    pub fn new(w: T) -> Result<Self> {
        if !(w > T::zero()) || !w.is_finite() {
            return Err(Error::invalid("local width must be positive"));
        }
        Ok(LocalWidth(w))
    }

    pub fn get(self) -> T {
        self.0
    }
}

impl<T: Scalar> Default for LocalWidth<T> {
    /// 0.30 m: a 0.15 m paint line, doubled to take in surrounding context.
    fn default() -> Self {
        LocalWidth(T::lit(0.30))
    }
}

/// Gaussian induced by a segment bar: `μ = (x_o, y_o)`,
/// `Σ = R(α) diag(w_l², l²/4) R(α)ᵀ`.
pub fn segment_gaussian<T: Scalar>(eta: &SegmentParams<T>, w: LocalWidth<T>) -> Gauss2<T> {
    let (s, c) = eta.alpha.sin_cos();
    let across = w.get() * w.get();
    let along = eta.l * eta.l / T::lit(4.0);
    let sigma = Sym2 {
        xx: c * c * across + s * s * along,
        xy: c * s * (across - along),
        yy: s * s * across + c * c * along,
    };
    Gauss2 { mu: eta.p_o.xy(), sigma }
}

/// Closed-form `KL(g1 ‖ g2)`.
pub fn kl_gauss2<T: Scalar>(g1: &Gauss2<T>, g2: &Gauss2<T>) -> Result<T> {
    if !g1.sigma.is_spd() || !g2.sigma.is_spd() {
        return Err(Error::NotSpd);
    }
    Ok(kl_unchecked(g1, g2))
}

#[inline]
pub(crate) fn kl_unchecked<T: Scalar>(g1: &Gauss2<T>, g2: &Gauss2<T>) -> T {
    let det2 = g2.sigma.det();
    let det1 = g1.sigma.det();
    let inv2 = Sym2 { xx: g2.sigma.yy / det2, xy: -g2.sigma.xy / det2, yy: g2.sigma.xx / det2 };
    let trace = inv2.xx * g1.sigma.xx + T::lit(2.0) * inv2.xy * g1.sigma.xy + inv2.yy * g1.sigma.yy;
    let maha = inv2.quad(g2.mu - g1.mu);
    (trace + maha - T::lit(2.0) + (det2 / det1).ln()) / T::lit(2.0)
}

/// Gradient of `KL(g1 ‖ g2)` with respect to
/// `[μ1x, μ1y, Σ1xx, Σ1xy, Σ1yy, μ2x, μ2y, Σ2xx, Σ2xy, Σ2yy]`, treating the
/// off-diagonal entry as a single symmetric parameter.
pub fn kl_gauss2_grad<T: Scalar>(g1: &Gauss2<T>, g2: &Gauss2<T>) -> Result<(T, [T; 10])> {
    if !g1.sigma.is_spd() || !g2.sigma.is_spd() {
        return Err(Error::NotSpd);
    }
    let v = Dual::<T, 10>::vars([
        g1.mu.x,
        g1.mu.y,
        g1.sigma.xx,
        g1.sigma.xy,
        g1.sigma.yy,
        g2.mu.x,
        g2.mu.y,
        g2.sigma.xx,
        g2.sigma.xy,
        g2.sigma.yy,
    ]);
    let d1 = Gauss2 { mu: Vec2::new(v[0], v[1]), sigma: Sym2 { xx: v[2], xy: v[3], yy: v[4] } };
    let d2 = Gauss2 { mu: Vec2::new(v[5], v[6]), sigma: Sym2 { xx: v[7], xy: v[8], yy: v[9] } };
    let out = kl_unchecked(&d1, &d2);
    Ok((out.value, out.grad))
}
