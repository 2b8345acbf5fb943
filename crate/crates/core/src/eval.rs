//! Dense-sampling precision / recall / F1 at distance thresholds.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::curve::{arc_length_tol, invert_arc_length, CurveParams};
use crate::error::{Error, Result};
use crate::geom::{Polyline3, Vec3};
use crate::scalar::Scalar;

/// Default sampling step along lanes, meters.
pub const DEFAULT_SPACING: f64 = 0.05;
/// Default distance thresholds, meters.
pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.10, 0.30];

fn sample_count<T: Scalar>(total: T, spacing: T) -> Result<usize> {
    if !(spacing > T::zero()) {
        return Err(Error::invalid("densify spacing must be positive"));
    }
    if !(total > T::zero()) {
        return Err(Error::Degenerate("line has zero length".into()));
    }
    let k = (total / spacing).floor().to_usize().ok_or_else(|| Error::invalid("too many samples"))?;
    Ok(k)
}

/// Whether the last multiple `k·spacing` coincides with the end.
fn lands_on_end<T: Scalar>(k: usize, spacing: T, total: T) -> bool {
    (total - spacing * T::from_usize(k).unwrap()) <= T::lit(1e-9) * total.max(T::one())
}

/// Points at arc length `0, spacing, 2·spacing, …` plus the end point.
pub fn densify<T: Scalar>(line: &Polyline3<T>, spacing: T) -> Result<Vec<Vec3<T>>> {
    let cum = line.cumulative_lengths();
    let total = cum[cum.len() - 1];
    let k = sample_count(total, spacing)?;
    let end_hit = lands_on_end(k, spacing, total);
    let mut out = Vec::with_capacity(k + 2);
    for i in 0..=k {
        if i == k && end_hit {
            break;
        }
        out.push(line.point_at_with(&cum, spacing * T::from_usize(i).unwrap()));
    }
    out.push(line.last());
    Ok(out)
}

/// As [`densify`] along a cubic, using arc-length quadrature.
pub fn densify_curve<T: Scalar>(theta: &CurveParams<T>, spacing: T) -> Result<Vec<Vec3<T>>> {
    let tol = T::lit(1e-9);
    let total = arc_length_tol(theta, T::zero(), T::one(), tol);
    let k = sample_count(total, spacing)?;
    let end_hit = lands_on_end(k, spacing, total);
    let mut out = Vec::with_capacity(k + 2);
    out.push(theta.p_s);
    let mut t = T::zero();
    for i in 1..=k {
        if i == k && end_hit {
            break;
        }
        t = invert_arc_length(theta, t, spacing);
        out.push(theta.at(t));
    }
    out.push(theta.p_e);
    Ok(out)
}

/// Scores at one threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScore {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched_pred: usize,
    pub total_pred: usize,
    pub matched_gt: usize,
    pub total_gt: usize,
}

/// Scores at every requested threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub spacing: f64,
    pub scores: Vec<ThresholdScore>,
}

impl EvalReport {
    /// Score at threshold `tau` (within 1e-12).
    pub fn at(&self, tau: f64) -> Option<&ThresholdScore> {
        self.scores.iter().find(|s| (s.tau - tau).abs() < 1e-12)
    }

    /// Aligned text table with percentages.
    pub fn table(&self) -> String {
        let mut s = format!("{:>8}  {:>12}  {:>9}  {:>7}\n", "tau(m)", "Precision(%)", "Recall(%)", "F1(%)");
        for r in &self.scores {
            s.push_str(&format!(
                "{:>8.2}  {:>12.2}  {:>9.2}  {:>7.2}\n",
                r.tau,
                100.0 * r.precision,
                100.0 * r.recall,
                100.0 * r.f1
            ));
        }
        s
    }
}

pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Uniform hash grid over 3D points with cell size `tau`.
struct SpatialHash<'a, T> {
    tau: T,
    points: &'a [Vec3<T>],
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl<'a, T: Scalar> SpatialHash<'a, T> {
    fn new(points: &'a [Vec3<T>], tau: T) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, &p) in points.iter().enumerate() {
            cells.entry(Self::key(p, tau)).or_default().push(i);
        }
        SpatialHash { tau, points, cells }
    }

    fn key(p: Vec3<T>, tau: T) -> (i64, i64, i64) {
        let k = |v: T| (v / tau).floor().to_i64().unwrap_or(i64::MAX);
        (k(p.x), k(p.y), k(p.z))
    }

    /// Whether some point lies within `tau` of `q`.
    fn any_within(&self, q: Vec3<T>) -> bool {
        let (cx, cy, cz) = Self::key(q, self.tau);
        let tau2 = self.tau * self.tau;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        if list.iter().any(|&i| (self.points[i] - q).norm_sq() <= tau2) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Number of `from` samples with a `to` sample within `tau`.
pub fn count_matched<T: Scalar>(from: &[Vec3<T>], to: &[Vec3<T>], tau: T) -> usize {
    if to.is_empty() {
        return 0;
    }
    let hash = SpatialHash::new(to, tau);
    from.iter().filter(|&&p| hash.any_within(p)).count()
}

fn densify_all<T: Scalar>(lanes: &[Polyline3<T>], spacing: T) -> Result<Vec<Vec3<T>>> {
    let mut out = Vec::new();
    for l in lanes {
        out.extend(densify(l, spacing)?);
    }
    Ok(out)
}

/// Densifies both sides at `spacing`; precision is the share of predicted
/// samples with a ground-truth sample within `τ` (3D), recall the reverse.
/// Both sides empty scores 1; one side empty scores 0.
pub fn evaluate<T: Scalar>(pred: &[Polyline3<T>], gt: &[Polyline3<T>], thresholds: &[T], spacing: T) -> Result<EvalReport> {
    if thresholds.iter().any(|t| !(*t > T::zero())) {
        return Err(Error::invalid("thresholds must be positive"));
    }
    if !(spacing > T::zero()) {
        return Err(Error::invalid("densify spacing must be positive"));
    }
    let ps = densify_all(pred, spacing)?;
    let gs = densify_all(gt, spacing)?;
    let mut scores = Vec::with_capacity(thresholds.len());
    for &tau in thresholds {
        let matched_pred = count_matched(&ps, &gs, tau);
        let matched_gt = count_matched(&gs, &ps, tau);
        let (precision, recall) = match (ps.is_empty(), gs.is_empty()) {
            (true, true) => (1.0, 1.0),
            (true, false) | (false, true) => (0.0, 0.0),
            _ => (matched_pred as f64 / ps.len() as f64, matched_gt as f64 / gs.len() as f64),
        };
        let f1 = if ps.is_empty() && gs.is_empty() { 1.0 } else { f1_score(precision, recall) };
        scores.push(ThresholdScore {
            tau: tau.value_f64(),
            precision,
            recall,
            f1,
            matched_pred,
            total_pred: ps.len(),
            matched_gt,
            total_gt: gs.len(),
        });
    }
    Ok(EvalReport { spacing: spacing.value_f64(), scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SceneConfig};
    use crate::testutil::{adaptive_curve, random_polyline};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(a: Vec3<f64>, b: Vec3<f64>) -> Polyline3<f64> {
        Polyline3::new(vec![a, b]).unwrap()
    }

    #[test]
    fn densify_examples() {
        let l = line(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0));
        let pts = densify(&l, 0.25).unwrap();
        assert_eq!(pts.len(), 5);
        assert_eq!(pts[0], l.first());
        assert_eq!(*pts.last().unwrap(), l.last());
        let pts = densify(&l, 0.3).unwrap();
        assert_eq!(pts.len(), 5);
        assert_eq!(*pts.last().unwrap(), l.last());
        assert!(densify(&l, 0.0).is_err());
    }

    #[test]
    fn densified_points_lie_on_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let pl = random_polyline(&mut rng, 15);
            let pts = densify(&pl, 0.05).unwrap();
            for p in &pts {
                assert!(pl.distance_to(*p) < 1e-9);
            }
            // spacing along the polyline is exact
            let th = adaptive_curve(&mut rng);
            let pts = densify_curve(&th, 0.5).unwrap();
            assert_eq!(pts[0], th.p_s);
            assert_eq!(*pts.last().unwrap(), th.p_e);
            let dense: Vec<Vec3<f64>> = (0..=20000).map(|i| th.at(i as f64 / 20000.0)).collect();
            let dense = Polyline3::new(dense).unwrap();
            for p in &pts {
                assert!(dense.distance_to(*p) < 1e-6);
            }
        }
    }

    #[test]
    fn identical_and_shifted_lanes() {
        let gt = vec![line(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 20.0, 0.0))];
        let r = evaluate(&gt, &gt, &[0.1, 0.3], 0.05).unwrap();
        for s in &r.scores {
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
        let shifted = vec![line(Vec3::new(0.2, 0.0, 0.0), Vec3::new(0.2, 20.0, 0.0))];
        let r = evaluate(&shifted, &gt, &[0.1, 0.3], 0.05).unwrap();
        assert_eq!(r.at(0.1).unwrap().f1, 0.0);
        assert_eq!(r.at(0.3).unwrap().f1, 1.0);
        assert!(r.table().contains("Precision(%)"));
    }

    #[test]
    fn empty_sides() {
        let gt = vec![line(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0))];
        let both = evaluate::<f64>(&[], &[], &[0.1], 0.05).unwrap();
        assert_eq!(both.scores[0].f1, 1.0);
        let no_pred = evaluate(&[], &gt, &[0.1], 0.05).unwrap();
        assert_eq!((no_pred.scores[0].precision, no_pred.scores[0].recall, no_pred.scores[0].f1), (0.0, 0.0, 0.0));
        let no_gt = evaluate(&gt, &[], &[0.1], 0.05).unwrap();
        assert_eq!(no_gt.scores[0].f1, 0.0);
    }

    fn brute(from: &[Vec3<f64>], to: &[Vec3<f64>], tau: f64) -> usize {
        from.iter().filter(|p| to.iter().any(|q| (**p - *q).norm_sq() <= tau * tau)).count()
    }

    #[test]
    fn hash_matches_all_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..20 {
            let g = generate_scene(&SceneConfig { seed, ..Default::default() }).unwrap();
            let gt = g.scene.lanes.clone();
            let pred: Vec<Polyline3<f64>> = gt
                .iter()
                .map(|l| {
                    let off = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.05..0.05));
                    Polyline3::new(l.points().iter().map(|p| *p + off).collect()).unwrap()
                })
                .collect();
            let ps: Vec<_> = pred.iter().flat_map(|l| densify(l, 0.05).unwrap()).collect();
            let gs: Vec<_> = gt.iter().flat_map(|l| densify(l, 0.05).unwrap()).collect();
            let r = evaluate(&pred, &gt, &[0.1, 0.3], 0.05).unwrap();
            for s in &r.scores {
                assert_eq!(s.matched_pred, brute(&ps, &gs, s.tau));
                assert_eq!(s.matched_gt, brute(&gs, &ps, s.tau));
            }
        }
    }

    #[test]
    fn swap_symmetry_and_threshold_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let a: Vec<_> = (0..3).map(|_| random_polyline(&mut rng, 10)).collect();
            let b: Vec<_> = (0..2).map(|_| random_polyline(&mut rng, 10)).collect();
            let taus = [1.0, 0.5, 0.3, 0.1];
            let ab = evaluate(&a, &b, &taus, 0.05).unwrap();
            let ba = evaluate(&b, &a, &taus, 0.05).unwrap();
            for (x, y) in ab.scores.iter().zip(&ba.scores) {
                assert_eq!(x.precision, y.recall);
                assert_eq!(x.recall, y.precision);
            }
            for w in ab.scores.windows(2) {
                assert!(w[1].f1 <= w[0].f1);
            }
        }
    }
}
