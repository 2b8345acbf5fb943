use serde::{Deserialize, Serialize};

use super::{is_lower, project_to_axis, CurveParams};
use crate::error::{Error, Result};
use crate::geom::{Polyline3, Vec3};
use crate::linalg;
use crate::scalar::Scalar;

/// Result of the constrained adaptive-axis least-squares fit.
#[derive(Clone, Debug)]
pub struct CurveFit<T> {
    pub params: CurveParams<T>,
    /// Mean point-to-curve gap, as in the curve-fitting loss.
    pub residual: T,
    /// `true` when the input was traversed upper-to-lower and had to be
    /// reversed so that `p_s` is the lower terminal.
    pub reversed: bool,
}

/// Fits the adaptive-axis cubic to an ordered point sequence.
///
/// The terminals are the sequence endpoints (lower one first). With `D` and
/// `C` eliminated, each coordinate reduces to a two-unknown least-squares
/// problem in `A` and `B` over the basis `t³ − t`, `t² − t`, which both vanish
/// at the terminals.
pub fn fit_curve<T: Scalar>(q: &Polyline3<T>) -> Result<CurveFit<T>> {
    let (first, last) = (q.first(), q.last());
    let reversed = is_lower(last, first);
    let (p_s, p_e) = if reversed { (last, first) } else { (first, last) };
    let axis = p_e - p_s;
    if axis.norm_sq() == T::zero() {
        return Err(Error::Degenerate("closed polyline: both terminals coincide".into()));
    }

    let (mut suu, mut suv, mut svv) = (T::zero(), T::zero(), T::zero());
    let (mut sur, mut svr) = (Vec3::<T>::zero(), Vec3::<T>::zero());
    for &p in q.points() {
        let t = project_to_axis(p_s, p_e, p)?;
        let u = t * t * t - t;
        let v = t * t - t;
        let r = p - p_s - axis * t;
        suu += u * u;
        suv += u * v;
        svv += v * v;
        sur += r * u;
        svr += r * v;
    }

    let trace = suu + svv;
    let (a, b) = if trace <= T::epsilon() {
        // every sample sits on a terminal: only the straight line is determined
        (Vec3::zero(), Vec3::zero())
    } else {
        let det = suu * svv - suv * suv;
        if det <= T::lit(1e-12) * trace * trace {
            return Err(Error::RankDeficient(format!(
                "curve basis is degenerate over {} samples (det {:e})",
                q.len(),
                det.value_f64()
            )));
        }
        let a = (sur * svv - svr * suv) / det;
        let b = (svr * suu - sur * suv) / det;
        (a, b)
    };

    let params = CurveParams::from_free(a, b, p_s, p_e);
    let residual = super::curve_fit_loss(&params, q)?;
    Ok(CurveFit { params, residual, reversed })
}

/// Cubic lane model tied to the global y axis: `x(y)` and `z(y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedAxisCurve<T> {
    /// `[a, b, c, d]` of `x(y) = a y³ + b y² + c y + d`.
    pub x_coeffs: [T; 4],
    /// Same layout for `z(y)`.
    pub z_coeffs: [T; 4],
    pub y_min: T,
    pub y_max: T,
}

impl<T: Scalar> FixedAxisCurve<T> {
    pub fn at(&self, y: T) -> Vec3<T> {
        let poly = |c: &[T; 4]| ((c[0] * y + c[1]) * y + c[2]) * y + c[3];
        Vec3::new(poly(&self.x_coeffs), y, poly(&self.z_coeffs))
    }

    /// Mean gap between each point and the model at the point's own `y`.
    pub fn residual(&self, q: &Polyline3<T>) -> T {
        let n = T::from_usize(q.len()).unwrap();
        q.points().iter().fold(T::zero(), |acc, &p| acc + self.at(p.y).dist(p)) / n
    }
}

#[derive(Clone, Debug)]
pub struct FixedAxisFit<T> {
    pub curve: FixedAxisCurve<T>,
    pub residual: T,
    /// Set when the samples barely vary in y (lane roughly perpendicular to
    /// the y axis) and the fit is not trustworthy.
    pub ill_conditioned: bool,
}

/// Pivot ratio below which the normal equations count as ill-conditioned.
const FIXED_AXIS_PIVOT_RATIO: f64 = 1e-10;

/// Unconstrained least-squares cubics `x(y)`, `z(y)`.
pub fn fit_fixed_axis<T: Scalar>(q: &Polyline3<T>) -> Result<FixedAxisFit<T>> {
    if q.len() < 4 {
        return Err(Error::invalid(format!("fixed-axis fit needs at least 4 points, got {}", q.len())));
    }
    let pts = q.points();
    let (mut y_min, mut y_max) = (T::infinity(), T::neg_infinity());
    let mut extent = T::zero();
    for p in pts {
        y_min = y_min.min(p.y);
        y_max = y_max.max(p.y);
        extent = extent.max(p.x.abs()).max(p.y.abs());
    }
    let n = T::from_usize(pts.len()).unwrap();
    let half = (y_max - y_min) / T::lit(2.0);
    let mid = (y_max + y_min) / T::lit(2.0);

    let fallback = || {
        let mx = pts.iter().fold(T::zero(), |a, p| a + p.x) / n;
        let mz = pts.iter().fold(T::zero(), |a, p| a + p.z) / n;
        let z = T::zero();
        FixedAxisCurve { x_coeffs: [z, z, z, mx], z_coeffs: [z, z, z, mz], y_min, y_max }
    };

    if half <= T::lit(1e-9) * extent.max(T::one()) {
        let curve = fallback();
        return Ok(FixedAxisFit { residual: curve.residual(q), curve, ill_conditioned: true });
    }

    // normal equations in the normalized variable u = (y - mid) / half
    let mut m = [[T::zero(); 4]; 4];
    let mut rx = [T::zero(); 4];
    let mut rz = [T::zero(); 4];
    for p in pts {
        let u = (p.y - mid) / half;
        let basis = [T::one(), u, u * u, u * u * u];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] += basis[i] * basis[j];
            }
            rx[i] += basis[i] * p.x;
            rz[i] += basis[i] * p.z;
        }
    }
    let (kx, kz, cond) = match (linalg::solve(m, rx), linalg::solve(m, rz)) {
        (Some((kx, c)), Some((kz, _))) => (kx, kz, c),
        _ => {
            let curve = fallback();
            return Ok(FixedAxisFit { residual: curve.residual(q), curve, ill_conditioned: true });
        }
    };
    let curve = FixedAxisCurve {
        x_coeffs: expand_normalized(kx, mid, half),
        z_coeffs: expand_normalized(kz, mid, half),
        y_min,
        y_max,
    };
    Ok(FixedAxisFit { residual: curve.residual(q), curve, ill_conditioned: cond < T::lit(FIXED_AXIS_PIVOT_RATIO) })
}

/// Converts `Σ k_i u^i` with `u = (y − mid)/half` into `[a, b, c, d]` in `y`.
fn expand_normalized<T: Scalar>(k: [T; 4], mid: T, half: T) -> [T; 4] {
    // coefficients of (y - mid)^i / half^i in ascending powers of y
    let mut asc = [T::zero(); 4];
    let binom = [[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 2.0, 1.0, 0.0], [1.0, 3.0, 3.0, 1.0]];
    for (i, &ki) in k.iter().enumerate() {
        let scale = ki / half.powi(i as i32);
        for (j, slot) in asc.iter_mut().enumerate().take(i + 1) {
            // (y - mid)^i = Σ_j C(i, j) y^j (-mid)^(i-j)
            *slot += scale * T::lit(binom[i][j]) * (-mid).powi((i - j) as i32);
        }
    }
    [asc[3], asc[2], asc[1], asc[0]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{adaptive_curve, sample_params};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn pl(points: Vec<Vec3<f64>>) -> Polyline3<f64> {
        Polyline3::new(points).unwrap()
    }

    /// Reference solve of the same constrained problem through a generic
    /// 6-unknown normal-equation system with explicit Lagrange multipliers.
    fn lagrange_oracle(q: &Polyline3<f64>, p_s: Vec3<f64>, p_e: Vec3<f64>) -> [Vec3<f64>; 4] {
        let mut out = [Vec3::zero(); 4];
        for comp in 0..3 {
            let get = |v: Vec3<f64>| v.to_array()[comp];
            // unknowns: a b c d  lambda1 lambda2
            let mut m = [[0.0; 6]; 6];
            let mut r = [0.0; 6];
            for &p in q.points() {
                let ax = p_e - p_s;
                let t = ax.dot(p - p_s) / ax.norm_sq();
                let bvec = [t * t * t, t * t, t, 1.0];
                for i in 0..4 {
                    for j in 0..4 {
                        m[i][j] += 2.0 * bvec[i] * bvec[j];
                    }
                    r[i] += 2.0 * bvec[i] * get(p);
                }
            }
            // d = p_s ; a + b + c + d = p_e
            let c1 = [0.0, 0.0, 0.0, 1.0];
            let c2 = [1.0, 1.0, 1.0, 1.0];
            for i in 0..4 {
                m[i][4] = c1[i];
                m[4][i] = c1[i];
                m[i][5] = c2[i];
                m[5][i] = c2[i];
            }
            r[4] = get(p_s);
            r[5] = get(p_e);
            let (x, _) = linalg::solve(m, r).unwrap();
            for k in 0..4 {
                let mut a = out[k].to_array();
                a[comp] = x[k];
                out[k] = Vec3::from_array(a);
            }
        }
        out
    }

    #[test]
    fn recovers_known_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let truth = adaptive_curve(&mut rng);
            let q = sample_params(&truth, 50);
            let fit = fit_curve(&q).unwrap();
            for (got, want) in [(fit.params.a, truth.a), (fit.params.b, truth.b), (fit.params.c, truth.c), (fit.params.d, truth.d)] {
                assert!(got.max_abs_diff(want) < 1e-6, "{got:?} vs {want:?}");
            }
            assert!(fit.residual < 1e-9);
            let oracle = lagrange_oracle(&q, truth.p_s, truth.p_e);
            assert!(fit.params.a.max_abs_diff(oracle[0]) < 1e-6);
            assert!(fit.params.b.max_abs_diff(oracle[1]) < 1e-6);
        }
    }

    #[test]
    fn matches_lagrange_oracle_on_noisy_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = Normal::new(0.0, 0.05).unwrap();
        for _ in 0..20 {
            let truth = adaptive_curve(&mut rng);
            let pts: Vec<_> = sample_params(&truth, 40)
                .points()
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    if i == 0 || i == 39 {
                        p
                    } else {
                        p + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
                    }
                })
                .collect();
            let q = pl(pts);
            let fit = fit_curve(&q).unwrap();
            let oracle = lagrange_oracle(&q, fit.params.p_s, fit.params.p_e);
            assert!(fit.params.a.max_abs_diff(oracle[0]) < 1e-6);
            assert!(fit.params.b.max_abs_diff(oracle[1]) < 1e-6);
            assert!(fit.params.c.max_abs_diff(oracle[2]) < 1e-6);
        }
    }

    #[test]
    fn two_points_give_a_straight_line() {
        let q = pl(vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(3.0, 2.0, 0.5)]);
        let fit = fit_curve(&q).unwrap();
        assert_eq!(fit.params.a, Vec3::zero());
        assert_eq!(fit.params.b, Vec3::zero());
        assert_eq!(fit.residual, 0.0);
    }

    #[test]
    fn lower_terminal_comes_first() {
        let q = pl(vec![
            Vec3::new(0.0, 10.0, 0.0),
            Vec3::new(0.5, 6.0, 0.0),
            Vec3::new(0.3, 3.0, 0.0),
            Vec3::new(0.0, 0.0, 0.0),
        ]);
        let fit = fit_curve(&q).unwrap();
        assert!(fit.reversed);
        assert_eq!(fit.params.p_s, Vec3::new(0.0, 0.0, 0.0));
    }

    #[test]
    fn rank_deficient_interior() {
        // both interior samples project onto the same axis position
        let q = pl(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.5, 0.0),
            Vec3::new(1.0, -0.5, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
        ]);
        assert!(matches!(fit_curve(&q), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn closed_loop_is_degenerate() {
        let q = pl(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 0.0),
        ]);
        assert!(matches!(fit_curve(&q), Err(Error::Degenerate(_))));
    }

    #[test]
    fn fixed_axis_linear_lane() {
        let q = pl((0..20).map(|i| Vec3::new(0.1 * i as f64, i as f64, 0.0)).collect());
        let fit = fit_fixed_axis(&q).unwrap();
        let [a, b, c, d] = fit.curve.x_coeffs;
        assert!(a.abs() < 1e-9 && b.abs() < 1e-9 && (c - 0.1).abs() < 1e-9 && d.abs() < 1e-9);
        assert!(!fit.ill_conditioned);
    }

    #[test]
    fn fixed_axis_flags_constant_y() {
        let q = pl((0..10).map(|i| Vec3::new(i as f64, 2.0, 0.0)).collect());
        let fit = fit_fixed_axis(&q).unwrap();
        assert!(fit.ill_conditioned);
    }

    #[test]
    fn fixed_axis_recovers_cubic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let xc = [rng.random_range(-1e-3..1e-3), rng.random_range(-0.02..0.02), rng.random_range(-0.5..0.5), rng.random_range(-5.0..5.0)];
            let zc = [0.0, rng.random_range(-1e-3..1e-3), rng.random_range(-0.05..0.05), rng.random_range(-1.0..1.0)];
            let y0 = rng.random_range(-12.0..0.0);
            let truth = FixedAxisCurve { x_coeffs: xc, z_coeffs: zc, y_min: y0, y_max: y0 + 12.0 };
            let q = pl((0..60).map(|i| truth.at(y0 + 0.2 * i as f64)).collect());
            let fit = fit_fixed_axis(&q).unwrap();
            for k in 0..4 {
                assert!((fit.curve.x_coeffs[k] - xc[k]).abs() < 1e-6);
                assert!((fit.curve.z_coeffs[k] - zc[k]).abs() < 1e-6);
            }
        }
    }
}
