//! Batch losses over local segments.

use serde::{Deserialize, Serialize};

use super::{kl_gauss2, kl_unchecked, segment_gaussian, LocalWidth, SegmentParams};
use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::scalar::Scalar;

/// Loss weights: `lambda1` on classification, `lambda2` on shape matching,
/// `lambda3` on smoothness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights<T> {
    pub lambda1: T,
    pub lambda2: T,
    pub lambda3: T,
}

impl<T: Scalar> Default for LossWeights<T> {
    fn default() -> Self {
        LossWeights { lambda1: T::one(), lambda2: T::one(), lambda3: T::lit(0.5) }
    }
}

/// Unweighted local loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalLossParts<T> {
    pub kl: T,
    pub sm: T,
    pub cls: T,
    pub z: T,
}

/// `λ2·kl + λ3·sm + λ1·cls + z`.
pub fn local_total_loss<T: Scalar>(parts: &LocalLossParts<T>, weights: &LossWeights<T>) -> T {
    weights.lambda2 * parts.kl + weights.lambda3 * parts.sm + weights.lambda1 * parts.cls + parts.z
}

/// Symmetric KL between the Gaussians of one predicted and one ground-truth
/// segment, halved.
pub fn segment_kl<T: Scalar>(pred: &SegmentParams<T>, gt: &SegmentParams<T>, w: LocalWidth<T>) -> Result<T> {
    let gp = segment_gaussian(pred, w);
    let gg = segment_gaussian(gt, w);
    Ok((kl_gauss2(&gg, &gp)? + kl_gauss2(&gp, &gg)?) / T::lit(2.0))
}

/// [`segment_kl`] and its gradient with respect to the prediction's
/// `[x_o, y_o, l, alpha]` (the height does not enter).
pub fn segment_kl_grad<T: Scalar>(
    pred: &SegmentParams<T>,
    gt: &SegmentParams<T>,
    w: LocalWidth<T>,
) -> Result<(T, [T; 4])> {
    let gg = segment_gaussian(gt, w);
    if !gg.sigma.is_spd() || !segment_gaussian(pred, w).sigma.is_spd() {
        return Err(Error::NotSpd);
    }
    let v = Dual::<T, 4>::vars([pred.p_o.x, pred.p_o.y, pred.l, pred.alpha]);
    let dp = SegmentParams { p_o: Vec3::new(v[0], v[1], Dual::constant(pred.p_o.z)), l: v[2], alpha: v[3] };
    let dw = LocalWidth(Dual::constant(w.get()));
    let gp = segment_gaussian(&dp, dw);
    let gg = super::Gauss2 {
        mu: crate::geom::Vec2::new(Dual::constant(gg.mu.x), Dual::constant(gg.mu.y)),
        sigma: super::Sym2 { xx: Dual::constant(gg.sigma.xx), xy: Dual::constant(gg.sigma.xy), yy: Dual::constant(gg.sigma.yy) },
    };
    let out = (kl_unchecked(&gg, &gp) + kl_unchecked(&gp, &gg)) / Dual::constant(T::lit(2.0));
    Ok((out.value, out.grad))
}

fn check_shape<A, B>(a: &[Vec<A>], b: &[Vec<B>], what: &str) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::ShapeMismatch(format!("{what}: prediction and ground-truth layouts differ")));
    }
    Ok(())
}

/// `½ Σ_i Σ_j [KL(g‖ĝ) + KL(ĝ‖g)]` over aligned (lane, cell) pairs.
pub fn local_kl_loss<T: Scalar>(
    preds: &[Vec<SegmentParams<T>>],
    gts: &[Vec<SegmentParams<T>>],
    w: LocalWidth<T>,
) -> Result<T> {
    check_shape(preds, gts, "local_kl_loss")?;
    let mut acc = T::zero();
    for (lp, lg) in preds.iter().zip(gts) {
        for (p, g) in lp.iter().zip(lg) {
            acc += segment_kl(p, g, w)?;
        }
    }
    Ok(acc)
}

#[inline]
fn second_difference<T: Scalar>(a: Vec3<T>, b: Vec3<T>, c: Vec3<T>) -> Vec3<T> {
    (c - b) - (b - a)
}

/// `Σ_i Σ_j ‖p_{j+2} − 2 p_{j+1} + p_j‖` over ordered points; lanes with
/// fewer than 3 points contribute 0.
pub fn smoothness_loss<T: Scalar>(lanes: &[Vec<Vec3<T>>]) -> T {
    let mut acc = T::zero();
    for lane in lanes {
        for w in lane.windows(3) {
            acc += second_difference(w[0], w[1], w[2]).norm();
        }
    }
    acc
}

/// [`smoothness_loss`] and its gradient with respect to every point (zero
/// subgradient where a second difference vanishes).
pub fn smoothness_loss_grad<T: Scalar>(lanes: &[Vec<Vec3<T>>]) -> (T, Vec<Vec<Vec3<T>>>) {
    let mut acc = T::zero();
    let mut grads: Vec<Vec<Vec3<T>>> = lanes.iter().map(|l| vec![Vec3::zero(); l.len()]).collect();
    for (lane, g) in lanes.iter().zip(grads.iter_mut()) {
        for j in 0..lane.len().saturating_sub(2) {
            let d = second_difference(lane[j], lane[j + 1], lane[j + 2]);
            let n = d.norm();
            acc += n;
            if n > T::zero() {
                let u = d / n;
                g[j] += u;
                g[j + 1] -= u * T::lit(2.0);
                g[j + 2] += u;
            }
        }
    }
    (acc, grads)
}

/// Mean squared height error.
pub fn height_loss<T: Scalar>(pred_z: &[T], gt_z: &[T]) -> Result<T> {
    height_loss_grad(pred_z, gt_z).map(|(l, _)| l)
}

/// [`height_loss`] and its gradient with respect to `pred_z`.
pub fn height_loss_grad<T: Scalar>(pred_z: &[T], gt_z: &[T]) -> Result<(T, Vec<T>)> {
    if pred_z.len() != gt_z.len() {
        return Err(Error::ShapeMismatch(format!("height_loss: {} predictions vs {} targets", pred_z.len(), gt_z.len())));
    }
    if pred_z.is_empty() {
        return Err(Error::invalid("height_loss needs at least one value"));
    }
    let n = T::from_usize(pred_z.len()).unwrap();
    let mut acc = T::zero();
    let mut grad = Vec::with_capacity(pred_z.len());
    for (&p, &g) in pred_z.iter().zip(gt_z) {
        let e = p - g;
        acc += e * e;
        grad.push(T::lit(2.0) * e / n);
    }
    Ok((acc / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local::{kl_gauss2, wrap_heading};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_seg(rng: &mut impl Rng) -> SegmentParams<f64> {
        SegmentParams {
            p_o: Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.2..0.2)),
            l: rng.random_range(0.3..2.0),
            alpha: rng.random_range(-1.5..1.5),
        }
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::default();
        assert_eq!(local_total_loss(&LocalLossParts::default(), &w), 0.0);
        let parts = LocalLossParts { kl: 2.0, sm: 4.0, cls: 1.0, z: 0.5 };
        assert_eq!(local_total_loss(&parts, &w), 5.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p: LocalLossParts<f64> = LocalLossParts { kl: rng.random(), sm: rng.random(), cls: rng.random(), z: rng.random() };
            let w: LossWeights<f64> = LossWeights { lambda1: rng.random(), lambda2: rng.random(), lambda3: rng.random() };
            let by_term = local_total_loss(&LocalLossParts { kl: p.kl, ..Default::default() }, &w)
                + local_total_loss(&LocalLossParts { sm: p.sm, ..Default::default() }, &w)
                + local_total_loss(&LocalLossParts { cls: p.cls, ..Default::default() }, &w)
                + local_total_loss(&LocalLossParts { z: p.z, ..Default::default() }, &w);
            assert_relative_eq!(local_total_loss(&p, &w), by_term, epsilon = 1e-14);
        }
    }

    #[test]
    fn kl_loss_examples() {
        let w = LocalWidth::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch: Vec<Vec<_>> = (0..3).map(|_| (0..4).map(|_| random_seg(&mut rng)).collect()).collect();
        assert_eq!(local_kl_loss(&batch, &batch, w).unwrap(), 0.0);

        // unit covariances: w = 1 and l = 2 at any heading
        let unit = LocalWidth::new(1.0).unwrap();
        let a = SegmentParams { p_o: Vec3::new(0.0, 0.0, 0.0), l: 2.0, alpha: 0.0 };
        let b = SegmentParams { p_o: Vec3::new(1.0, 0.0, 0.0), l: 2.0, alpha: 0.0 };
        assert_relative_eq!(local_kl_loss(&[vec![a]], &[vec![b]], unit).unwrap(), 0.5);

        let other: Vec<Vec<_>> = (0..3).map(|_| (0..4).map(|_| random_seg(&mut rng)).collect()).collect();
        let mut oracle = 0.0;
        for (lp, lg) in batch.iter().zip(&other) {
            for (p, g) in lp.iter().zip(lg) {
                let (gp, gg) = (segment_gaussian(p, w), segment_gaussian(g, w));
                oracle += 0.5 * (kl_gauss2(&gp, &gg).unwrap() + kl_gauss2(&gg, &gp).unwrap());
            }
        }
        assert_relative_eq!(local_kl_loss(&batch, &other, w).unwrap(), oracle, max_relative = 1e-12);

        let short = vec![batch[0].clone()];
        assert!(matches!(local_kl_loss(&batch, &short, w), Err(Error::ShapeMismatch(_))));
        let ragged = vec![batch[0].clone(), batch[1][..2].to_vec(), batch[2].clone()];
        assert!(matches!(local_kl_loss(&batch, &ragged, w), Err(Error::ShapeMismatch(_))));
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn kl_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = LocalWidth::default();
        for _ in 0..100 {
            let (p, g) = (random_seg(&mut rng), random_seg(&mut rng));
            let (val, grad) = segment_kl_grad(&p, &g, w).unwrap();
            assert_relative_eq!(val, segment_kl(&p, &g, w).unwrap(), max_relative = 1e-12);
            for k in 0..4 {
                let h = 1e-6;
                let bump = |d: f64| {
                    let mut q = p;
                    match k {
                        0 => q.p_o.x += d,
                        1 => q.p_o.y += d,
                        2 => q.l += d,
                        _ => q.alpha += d,
                    }
                    segment_kl(&q, &g, w).unwrap()
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                assert!(rel_err(fd, grad[k]) < 1e-5, "{k}: {fd} vs {}", grad[k]);
            }
        }
    }

    #[test]
    fn smoothness_examples() {
        let line: Vec<_> = (0..10).map(|i| Vec3::new(i as f64 * 0.5, 1.0 - i as f64, 2.0)).collect();
        assert_eq!(smoothness_loss(&[line]), 0.0);
        let bent = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 1.0, 0.0)];
        assert_eq!(smoothness_loss(&[bent]), 1.0);
        let short = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 5.0, 0.0)];
        assert_eq!(smoothness_loss(&[short, vec![]]), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lane: Vec<Vec3<f64>> = crate::testutil::random_polyline(&mut rng, 40).into_points();
        let mut oracle = 0.0;
        for j in 0..38 {
            let (a, b, c) = (lane[j], lane[j + 1], lane[j + 2]);
            let dx = c.x - 2.0 * b.x + a.x;
            let dy = c.y - 2.0 * b.y + a.y;
            let dz = c.z - 2.0 * b.z + a.z;
            oracle += (dx * dx + dy * dy + dz * dz).sqrt();
        }
        assert_relative_eq!(smoothness_loss(&[lane]), oracle, max_relative = 1e-12);
    }

    #[test]
    fn smoothness_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let lanes: Vec<Vec<Vec3<f64>>> =
                (0..2).map(|_| crate::testutil::random_polyline(&mut rng, 6).into_points()).collect();
            let (val, grad) = smoothness_loss_grad(&lanes);
            assert_relative_eq!(val, smoothness_loss(&lanes), max_relative = 1e-12);
            for i in 0..lanes.len() {
                for j in 0..lanes[i].len() {
                    for c in 0..3 {
                        let h = 1e-6;
                        let bump = |d: f64| {
                            let mut q = lanes.clone();
                            let mut a = q[i][j].to_array();
                            a[c] += d;
                            q[i][j] = Vec3::from_array(a);
                            smoothness_loss(&q)
                        };
                        let fd = (bump(h) - bump(-h)) / (2.0 * h);
                        let an = grad[i][j].to_array()[c];
                        assert!(rel_err(fd, an) < 1e-5, "{fd} vs {an}");
                    }
                }
            }
        }
    }

    #[test]
    fn height_examples() {
        let gt = [0.1, -0.3, 2.0];
        assert_eq!(height_loss(&gt, &gt).unwrap(), 0.0);
        let off: Vec<f64> = gt.iter().map(|z| z + 0.1).collect();
        assert_relative_eq!(height_loss(&off, &gt).unwrap(), 0.01, max_relative = 1e-12);
        assert!(matches!(height_loss(&off[..2], &gt), Err(Error::ShapeMismatch(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let oracle = p.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 20.0;
        let (val, grad) = height_loss_grad(&p, &g).unwrap();
        assert_relative_eq!(val, oracle, max_relative = 1e-12);
        for k in 0..20 {
            assert_relative_eq!(grad[k], (p[k] - g[k]) / 10.0, max_relative = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn smoothness_is_translation_invariant(
            pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -1.0f64..1.0), 3..30),
            shift in (-50.0f64..50.0, -50.0f64..50.0, -5.0f64..5.0),
        ) {
            let lane: Vec<Vec3<f64>> = pts.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let moved: Vec<Vec3<f64>> = lane.iter().map(|&p| p + Vec3::new(shift.0, shift.1, shift.2)).collect();
            let (a, b) = (smoothness_loss(&[lane]), smoothness_loss(&[moved]));
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn smoothness_vanishes_on_arithmetic_progressions(
            start in (-10.0f64..10.0, -10.0f64..10.0, -1.0f64..1.0),
            step in (-2.0f64..2.0, -2.0f64..2.0, -0.2f64..0.2),
            n in 3usize..40,
        ) {
            let s = Vec3::new(start.0, start.1, start.2);
            let d = Vec3::new(step.0, step.1, step.2);
            let lane: Vec<Vec3<f64>> = (0..n).map(|i| s + d * i as f64).collect();
            prop_assert!(smoothness_loss(&[lane]) < 1e-12 * n as f64 * 20.0);
        }

        #[test]
        fn segment_kl_is_heading_periodic(alpha in -1.5f64..1.5, l in 0.2f64..2.0) {
            let w = LocalWidth::default();
            let a = SegmentParams { p_o: Vec3::new(0.0, 0.0, 0.0), l, alpha };
            let b = SegmentParams { alpha: wrap_heading(alpha + std::f64::consts::PI), ..a };
            prop_assert!(segment_kl(&a, &b, w).unwrap().abs() < 1e-10);
        }
    }
}
