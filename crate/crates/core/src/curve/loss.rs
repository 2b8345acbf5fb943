use super::{order_terminals, project_to_axis, CurveParams, CURVE_FREE_PARAMS};
use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::geom::{Polyline3, Vec3};
use crate::scalar::{cast, Scalar};

/// Ground-truth lane prepared for the curve-fitting loss: its samples and
/// their axis positions, which depend only on the ground-truth terminals and
/// so are computed once.
#[derive(Clone, Debug)]
pub struct CurveTarget<T> {
    points: Vec<Vec3<T>>,
    t: Vec<T>,
    p_s: Vec3<T>,
    p_e: Vec3<T>,
}

impl<T: Scalar> CurveTarget<T> {
    pub fn new(q: &Polyline3<T>) -> Result<Self> {
        let (p_s, p_e) = order_terminals(q.first(), q.last());
        let t = q.points().iter().map(|&p| project_to_axis(p_s, p_e, p)).collect::<Result<Vec<_>>>()?;
        Ok(CurveTarget { points: q.points().to_vec(), t, p_s, p_e })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn terminals(&self) -> (Vec3<T>, Vec3<T>) {
        (self.p_s, self.p_e)
    }

    pub fn points(&self) -> &[Vec3<T>] {
        &self.points
    }

    /// Mean gap `‖f(t_p) − p‖` evaluated in any scalar type `V`.
    pub fn loss<V: Scalar>(&self, theta: &CurveParams<V>) -> V {
        let mut acc = V::zero();
        for (&p, &t) in self.points.iter().zip(&self.t) {
            let diff = theta.at(cast::<T, V>(t)) - p.cast::<V>();
            acc += diff.norm();
        }
        acc / V::from_usize(self.points.len()).unwrap()
    }

    /// Loss and its gradient with respect to the free parameters
    /// `[A, B, p_s, p_e]` of `theta` (forward mode).
    pub fn loss_and_grad(&self, theta: &CurveParams<T>) -> (T, [T; CURVE_FREE_PARAMS]) {
        let vars = Dual::<T, CURVE_FREE_PARAMS>::vars(theta.to_free());
        let lifted = CurveParams::from_free_slice(&vars);
        let out = self.loss(&lifted);
        (out.value, out.grad)
    }
}

/// Mean distance between the ground-truth samples `q` and the curve evaluated
/// at their projections onto the ground-truth reference axis.
pub fn curve_fit_loss<T: Scalar>(theta: &CurveParams<T>, q: &Polyline3<T>) -> Result<T> {
    if q.is_empty() {
        return Err(Error::invalid("curve-fitting loss needs at least one sample"));
    }
    Ok(CurveTarget::new(q)?.loss(theta))
}

/// [`curve_fit_loss`] together with its gradient with respect to
/// `[A, B, p_s, p_e]`. Samples lying exactly on the curve contribute a zero
/// subgradient.
pub fn curve_fit_loss_grad<T: Scalar>(theta: &CurveParams<T>, q: &Polyline3<T>) -> Result<(T, [T; CURVE_FREE_PARAMS])> {
    Ok(CurveTarget::new(q)?.loss_and_grad(theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{adaptive_curve, random_curve, random_polyline, sample_params};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent recomputation straight from the formula, with the
    /// projection written out by hand.
    fn reference_loss(theta: &CurveParams<f64>, q: &[Vec3<f64>]) -> f64 {
        let (a, b) = (q[0], q[q.len() - 1]);
        let (ps, pe) = if (b.y, b.x, b.z) < (a.y, a.x, a.z) { (b, a) } else { (a, b) };
        let mut total = 0.0;
        for p in q {
            let ax = [pe.x - ps.x, pe.y - ps.y, pe.z - ps.z];
            let rel = [p.x - ps.x, p.y - ps.y, p.z - ps.z];
            let t = (ax[0] * rel[0] + ax[1] * rel[1] + ax[2] * rel[2]) / (ax[0] * ax[0] + ax[1] * ax[1] + ax[2] * ax[2]);
            let f = |ca: f64, cb: f64, cc: f64, cd: f64| ca * t * t * t + cb * t * t + cc * t + cd;
            let fx = f(theta.a.x, theta.b.x, theta.c.x, theta.d.x);
            let fy = f(theta.a.y, theta.b.y, theta.c.y, theta.d.y);
            let fz = f(theta.a.z, theta.b.z, theta.c.z, theta.d.z);
            total += ((fx - p.x).powi(2) + (fy - p.y).powi(2) + (fz - p.z).powi(2)).sqrt();
        }
        total / q.len() as f64
    }

    #[test]
    fn exact_samples_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta = adaptive_curve(&mut rng);
        let q = sample_params(&theta, 30);
        assert!(curve_fit_loss(&theta, &q).unwrap() < 1e-12);
    }

    #[test]
    fn uniform_vertical_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let theta = adaptive_curve(&mut rng);
        let q = sample_params(&theta, 30);
        let shifted = Polyline3::new(q.points().iter().map(|&p| p + Vec3::new(0.0, 0.0, 0.2)).collect()).unwrap();
        // shifting every sample leaves the projections unchanged
        let l = curve_fit_loss(&theta, &shifted).unwrap();
        assert!((l - 0.2).abs() < 1e-12, "{l}");
    }

    #[test]
    fn matches_reference_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let theta = random_curve(&mut rng);
            let q = random_polyline(&mut rng, 25);
            let got = curve_fit_loss(&theta, &q).unwrap();
            let want = reference_loss(&theta, q.points());
            assert!((got - want).abs() <= 1e-12 * want.max(1.0));
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let theta = random_curve(&mut rng);
            let q = random_polyline(&mut rng, 20);
            let target = CurveTarget::new(&q).unwrap();
            let (_, grad) = target.loss_and_grad(&theta);
            let free = theta.to_free();
            for k in 0..CURVE_FREE_PARAMS {
                let h = 1e-6;
                let mut hi = free;
                let mut lo = free;
                hi[k] += h;
                lo[k] -= h;
                let fd = (target.loss(&CurveParams::from_free_slice(&hi)) - target.loss(&CurveParams::from_free_slice(&lo))) / (2.0 * h);
                let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1.0);
                assert!(rel < 1e-5, "param {k}: fd {fd} vs {}", grad[k]);
            }
        }
    }

    #[test]
    fn zero_residual_points_have_zero_subgradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta = adaptive_curve(&mut rng);
        let q = sample_params(&theta, 10);
        let (l, g) = curve_fit_loss_grad(&theta, &q).unwrap();
        assert!(l < 1e-12);
        // samples at the terminals are exact; interior ones are exact up to
        // rounding, so the gradient is tiny rather than NaN
        assert!(g.iter().all(|v| v.is_finite()));
        let line = CurveParams::line(Vec3::new(0.0, 0.0, 0.0), Vec3::new(4.0, 0.0, 0.0));
        let q = Polyline3::new(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0), Vec3::new(4.0, 0.0, 0.0)]).unwrap();
        let (l, g) = curve_fit_loss_grad(&line, &q).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_target_rejected_by_polyline() {
        assert!(Polyline3::<f64>::new(vec![]).is_err());
    }
}
