//! Set matching between predicted lane slots and padded ground truth.

use crate::curve::{CurveParams, CurveTarget};
use crate::error::{Error, Result};
use crate::geom::{Polyline3, Vec3};
use crate::scalar::Scalar;

/// Probability clipping for the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Largest size accepted by [`brute_force_assign`].
pub const BRUTE_FORCE_MAX: usize = 9;

/// Relative tolerance under which two assignment totals count as tied.
const TIE_REL: f64 = 1e-12;

/// Binary cross-entropy `−ln p(label)` with `p` clipped to `[ε, 1−ε]`.
/// A NaN probability yields NaN.
pub fn bce<T: Scalar>(prob: T, label: bool) -> T {
    if prob.is_nan() {
        return prob;
    }
    let eps = T::lit(BCE_EPS);
    let p = prob.max(eps).min(T::one() - eps);
    if label {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

/// Probability the slot assigns to `label`.
pub fn label_prob<T: Scalar>(prob_lane: T, label: bool) -> T {
    if label {
        prob_lane
    } else {
        T::one() - prob_lane
    }
}

/// One predicted lane slot.
#[derive(Clone, Debug, PartialEq)]
pub struct LanePrediction<T> {
    pub theta: CurveParams<T>,
    pub prob_lane: T,
}

impl<T: Scalar> LanePrediction<T> {
    pub fn new(theta: CurveParams<T>, prob_lane: T) -> Result<Self> {
        if !(prob_lane >= T::zero() && prob_lane <= T::one()) {
            return Err(Error::invalid("prob_lane must lie in [0, 1]"));
        }
        Ok(LanePrediction { theta, prob_lane })
    }
}

/// One ground-truth slot: a lane with its polyline, or padding.
#[derive(Clone, Debug)]
pub enum GtSlot<T> {
    NonLane,
    Lane(CurveTarget<T>),
}

impl<T: Scalar> GtSlot<T> {
    pub fn lane(q: &Polyline3<T>) -> Result<Self> {
        Ok(GtSlot::Lane(CurveTarget::new(q)?))
    }

    /// Lanes followed by padding up to `n` slots.
    pub fn padded(lanes: &[Polyline3<T>], n: usize) -> Result<Vec<Self>> {
        if lanes.len() > n {
            return Err(Error::invalid(format!("{} lanes exceed the {n} available slots", lanes.len())));
        }
        let mut slots = lanes.iter().map(Self::lane).collect::<Result<Vec<_>>>()?;
        slots.resize_with(n, || GtSlot::NonLane);
        Ok(slots)
    }

    pub fn label(&self) -> bool {
        matches!(self, GtSlot::Lane(_))
    }

    pub fn terminals(&self) -> Option<(Vec3<T>, Vec3<T>)> {
        match self {
            GtSlot::Lane(t) => Some(t.terminals()),
            GtSlot::NonLane => None,
        }
    }
}

/// Square matrix of finite matching costs, rows = ground truth, columns =
/// predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn new(n: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::ShapeMismatch(format!("{} entries for a {n}x{n} cost matrix", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cost matrix entries must be finite"));
        }
        Ok(CostMatrix { n, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch("cost matrix must be square".into()));
        }
        Self::new(n, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    /// Total cost of `perm` (row `i` takes column `perm[i]`).
    pub fn total(&self, perm: &[usize]) -> T {
        perm.iter().enumerate().fold(T::zero(), |acc, (i, &j)| acc + self.get(i, j))
    }

    fn tie_tol(&self, best: T) -> T {
        T::lit(TIE_REL) * T::from_usize(self.n.max(1)).unwrap() * best.abs().max(self.max_abs()).max(T::one())
    }

    fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Sum of absolute coordinate differences over both terminals.
pub fn terminal_l1<T: Scalar>(a: (Vec3<T>, Vec3<T>), b: (Vec3<T>, Vec3<T>)) -> T {
    let d = |u: Vec3<T>, v: Vec3<T>| (u.x - v.x).abs() + (u.y - v.y).abs() + (u.z - v.z).abs();
    d(a.0, b.0) + d(a.1, b.1)
}

/// Matching cost `−λ1·o_j(c_i) + 1(c_i≠0)·L1(terminals)`.
pub fn cost_matrix<T: Scalar>(preds: &[LanePrediction<T>], gts: &[GtSlot<T>], lambda1: T) -> Result<CostMatrix<T>> {
    if preds.len() != gts.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions vs {} ground-truth slots", preds.len(), gts.len())));
    }
    let n = preds.len();
    let mut data = Vec::with_capacity(n * n);
    for gt in gts {
        for p in preds {
            let mut d = -lambda1 * label_prob(p.prob_lane, gt.label());
            if let Some(term) = gt.terminals() {
                d += terminal_l1((p.theta.p_s, p.theta.p_e), term);
            }
            data.push(d);
        }
    }
    CostMatrix::new(n, data)
}

/// Exact minimum-cost assignment (O(N³) potentials method). Rows take
/// columns `perm[i]`; among assignments whose totals tie to rounding, the
/// lexicographically smallest permutation is returned.
pub fn hungarian<T: Scalar>(d: &CostMatrix<T>) -> Vec<usize> {
    let n = d.n;
    if n == 0 {
        return Vec::new();
    }
    let rows: Vec<usize> = (0..n).collect();
    let cols: Vec<usize> = (0..n).collect();
    let best = d.total(&solve_sub(d, &rows, &cols));
    let tol = d.tie_tol(best);

    // Fix rows one at a time to the smallest column that still admits an
    // optimal completion.
    let mut perm = vec![usize::MAX; n];
    let mut fixed_cost = T::zero();
    let mut free_cols: Vec<usize> = (0..n).collect();
    for i in 0..n {
        let rest_rows: Vec<usize> = (i + 1..n).collect();
        let mut chosen = None;
        for (k, &j) in free_cols.iter().enumerate() {
            let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&c| c != j).collect();
            let sub = solve_sub(d, &rest_rows, &rest_cols);
            let rest: T = sub.iter().zip(&rest_rows).fold(T::zero(), |a, (&c, &r)| a + d.get(r, c));
            if fixed_cost + d.get(i, j) + rest <= best + tol {
                chosen = Some((k, j));
                break;
            }
        }
        // the optimum itself always qualifies, so some column is found
        let (k, j) = chosen.expect("optimal completion exists");
        perm[i] = j;
        fixed_cost += d.get(i, j);
        free_cols.remove(k);
    }
    perm
}

/// Optimal assignment of `rows` to `cols` (equal counts); returns the column
/// chosen for each row in order.
fn solve_sub<T: Scalar>(d: &CostMatrix<T>, rows: &[usize], cols: &[usize]) -> Vec<usize> {
    let n = rows.len();
    if n == 0 {
        return Vec::new();
    }
    let cost = |i: usize, j: usize| d.get(rows[i - 1], cols[j - 1]);
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=n {
        out[p[j] - 1] = cols[j - 1];
    }
    out
}

/// Exhaustive minimum over all permutations (test oracle), same tie rule as
/// [`hungarian`].
pub fn brute_force_assign<T: Scalar>(d: &CostMatrix<T>) -> Result<Vec<usize>> {
    let n = d.n;
    if n > BRUTE_FORCE_MAX {
        return Err(Error::TooLarge { size: n, limit: BRUTE_FORCE_MAX });
    }
    let mut all = Vec::new();
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        all.push((d.total(&perm), perm.clone()));
        if !next_permutation(&mut perm) {
            break;
        }
    }
    let best = all.iter().map(|(c, _)| *c).fold(T::infinity(), |a, b| a.min(b));
    let best = if n == 0 { T::zero() } else { best };
    let tol = d.tie_tol(best);
    // permutations were generated in lexicographic order
    Ok(all.into_iter().find(|(c, _)| *c <= best + tol).map(|(_, p)| p).unwrap_or_default())
}

/// Advances to the next lexicographic permutation; false after the last.
pub fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::ShapeMismatch(format!("matching of size {} for {n} slots", perm.len())));
    }
    for &j in perm {
        if j >= n || seen[j] {
            return Err(Error::invalid("matching is not a permutation"));
        }
        seen[j] = true;
    }
    Ok(())
}

/// Per-slot term of the global loss: `−λ1·ln o(c) + 1(c≠0)·L_f`, evaluated in
/// any scalar type so the optimizer can differentiate it.
pub fn slot_loss<T: Scalar, V: Scalar>(theta: &CurveParams<V>, prob_lane: V, gt: &GtSlot<T>, lambda1: V) -> V {
    let mut l = lambda1 * bce(prob_lane, gt.label());
    if let GtSlot::Lane(target) = gt {
        l += target.loss(theta);
    }
    l
}

/// Global shape loss `Σ_i [−λ1·ln o_{ε(i)}(c_i) + 1(c_i≠0)·L_f(θ_{ε(i)})]`.
pub fn global_loss<T: Scalar>(preds: &[LanePrediction<T>], gts: &[GtSlot<T>], perm: &[usize], lambda1: T) -> Result<T> {
    if preds.len() != gts.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions vs {} ground-truth slots", preds.len(), gts.len())));
    }
    check_permutation(perm, gts.len())?;
    let mut acc = T::zero();
    for (gt, &j) in gts.iter().zip(perm) {
        acc += slot_loss(&preds[j].theta, preds[j].prob_lane, gt, lambda1);
    }
    Ok(acc)
}

/// Inverse of a permutation (prediction index → ground-truth row).
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &j) in perm.iter().enumerate() {
        inv[j] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{adaptive_curve, random_vec, sample_params};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng, n: usize) -> CostMatrix<f64> {
        CostMatrix::new(n, (0..n * n).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap()
    }

    #[test]
    fn bce_examples() {
        assert!(bce(1.0, true) < 1e-6);
        assert_relative_eq!(bce(0.5, true), std::f64::consts::LN_2, max_relative = 1e-12);
        assert_relative_eq!(bce(0.5, false), std::f64::consts::LN_2, max_relative = 1e-12);
        assert_relative_eq!(bce(0.0, true), -(1e-7f64).ln(), max_relative = 1e-12);
        assert!(bce(1.0f64, false).is_finite());
        assert!(bce(f64::NAN, true).is_nan());
    }

    #[test]
    fn cost_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let th = adaptive_curve(&mut rng);
        let q = sample_params(&th, 30);
        let gt = GtSlot::lane(&q).unwrap();
        let (ps, pe) = gt.terminals().unwrap();
        let pred = LanePrediction::new(CurveParams::from_free(th.a, th.b, ps, pe), 1.0).unwrap();
        let d = cost_matrix(std::slice::from_ref(&pred), &[gt], 1.0).unwrap();
        assert_relative_eq!(d.get(0, 0), -1.0, epsilon = 1e-12);
        let pred = LanePrediction { prob_lane: 0.3, ..pred };
        let d = cost_matrix(&[pred], &[GtSlot::NonLane], 1.0).unwrap();
        assert_relative_eq!(d.get(0, 0), -0.7, epsilon = 1e-12);
        assert!(cost_matrix::<f64>(&[], &[GtSlot::NonLane], 1.0).is_err());
    }

    #[test]
    fn cost_matches_elementwise_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 6;
        let preds: Vec<_> = (0..n)
            .map(|_| LanePrediction::new(adaptive_curve(&mut rng), rng.random_range(0.0..1.0)).unwrap())
            .collect();
        let gts: Vec<GtSlot<f64>> = (0..n)
            .map(|i| if i % 2 == 0 { GtSlot::lane(&sample_params(&adaptive_curve(&mut rng), 20)).unwrap() } else { GtSlot::NonLane })
            .collect();
        let lambda1 = 0.7;
        let d = cost_matrix(&preds, &gts, lambda1).unwrap();
        for (i, gt) in gts.iter().enumerate() {
            for (j, p) in preds.iter().enumerate() {
                let expect = match gt.terminals() {
                    Some((s, e)) => {
                        let a = [p.theta.p_s.x, p.theta.p_s.y, p.theta.p_s.z, p.theta.p_e.x, p.theta.p_e.y, p.theta.p_e.z];
                        let b = [s.x, s.y, s.z, e.x, e.y, e.z];
                        -lambda1 * p.prob_lane + a.iter().zip(&b).map(|(u, v)| (u - v).abs()).sum::<f64>()
                    }
                    None => -lambda1 * (1.0 - p.prob_lane),
                };
                assert_relative_eq!(d.get(i, j), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn hungarian_examples() {
        let eye = CostMatrix::from_rows(&[vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]).unwrap();
        assert_eq!(hungarian(&eye), vec![0, 1, 2]);
        assert_eq!(brute_force_assign(&eye).unwrap(), vec![0, 1, 2]);
        let two = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let p = hungarian(&two);
        assert_eq!(p, vec![0, 1]);
        assert_eq!(two.total(&p), 2.0);
        assert_eq!(brute_force_assign(&two).unwrap(), vec![0, 1]);
        // all-equal costs: lexicographic tie break gives the identity
        let flat = CostMatrix::new(4, vec![0.5; 16]).unwrap();
        assert_eq!(hungarian(&flat), vec![0, 1, 2, 3]);
        assert!(hungarian(&CostMatrix::<f64>::new(0, vec![]).unwrap()).is_empty());
        let big = CostMatrix::new(10, vec![0.0; 100]).unwrap();
        assert!(matches!(brute_force_assign(&big), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn hungarian_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let d = random_matrix(&mut rng, 6);
            let h = hungarian(&d);
            let b = brute_force_assign(&d).unwrap();
            assert!((d.total(&h) - d.total(&b)).abs() < 1e-9);
            assert_eq!(h, b);
        }
    }

    #[test]
    fn hungarian_tie_break_matches_brute_force_on_integer_costs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..300 {
            let n = rng.random_range(1..=6);
            let d = CostMatrix::new(n, (0..n * n).map(|_| rng.random_range(0..3) as f64).collect()).unwrap();
            assert_eq!(hungarian(&d), brute_force_assign(&d).unwrap());
        }
    }

    #[test]
    fn hungarian_beats_random_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_matrix(&mut rng, 15);
        let best = d.total(&hungarian(&d));
        let mut perm: Vec<usize> = (0..15).collect();
        for _ in 0..1000 {
            perm.shuffle(&mut rng);
            assert!(best <= d.total(&perm) + 1e-12);
        }
    }

    #[test]
    fn global_loss_examples() {
        let straight = CurveParams::line(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 10.0, 0.0));
        let q = sample_params(&straight, 11);
        let gts = vec![GtSlot::lane(&q).unwrap(), GtSlot::NonLane];
        let perfect = vec![LanePrediction::new(straight, 1.0).unwrap(), LanePrediction::new(straight, 0.0).unwrap()];
        assert!(global_loss(&perfect, &gts, &[0, 1], 1.0).unwrap() < 1e-6);

        // lane slot 0.2 m off at every sample
        let off = vec![
            LanePrediction::new(straight.translated(Vec3::new(0.2, 0.0, 0.0)), 1.0).unwrap(),
            LanePrediction::new(straight, 0.0).unwrap(),
        ];
        let l = global_loss(&off, &gts, &[0, 1], 1.0).unwrap();
        assert!((l - 0.2).abs() < 1e-6, "{l}");

        assert!(global_loss(&off, &gts, &[0, 0], 1.0).is_err());
        assert!(global_loss(&off, &gts, &[0], 1.0).is_err());
    }

    #[test]
    fn global_loss_decomposes_over_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 5;
        let preds: Vec<_> = (0..n)
            .map(|_| LanePrediction::new(adaptive_curve(&mut rng), rng.random_range(0.0..1.0)).unwrap())
            .collect();
        let lanes: Vec<_> = (0..3).map(|_| sample_params(&adaptive_curve(&mut rng), 25)).collect();
        let gts = GtSlot::padded(&lanes, n).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let lambda1 = 1.3;
        let mut oracle = 0.0;
        for i in 0..n {
            let p = &preds[perm[i]];
            if i < 3 {
                oracle += -lambda1 * p.prob_lane.max(1e-7).min(1.0 - 1e-7).ln();
                oracle += crate::curve::curve_fit_loss(&p.theta, &lanes[i]).unwrap();
            } else {
                oracle += -lambda1 * (1.0 - p.prob_lane.max(1e-7).min(1.0 - 1e-7)).ln();
            }
        }
        assert_relative_eq!(global_loss(&preds, &gts, &perm, lambda1).unwrap(), oracle, max_relative = 1e-12);
    }

    #[test]
    fn cost_is_monotone_in_terminal_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let n = 4;
            let mut preds: Vec<_> = (0..n)
                .map(|_| LanePrediction::new(adaptive_curve(&mut rng), rng.random_range(0.0..1.0)).unwrap())
                .collect();
            let lanes: Vec<_> = (0..2).map(|_| sample_params(&adaptive_curve(&mut rng), 10)).collect();
            let gts = GtSlot::padded(&lanes, n).unwrap();
            let before = cost_matrix(&preds, &gts, 1.0).unwrap();
            // push one predicted start terminal far from every lane's start
            let j = rng.random_range(0..n);
            let far = Vec3::new(1e3, 1e3, 1e3) + random_vec(&mut rng, 0.0, 1.0);
            preds[j].theta.p_s += far;
            let after = cost_matrix(&preds, &gts, 1.0).unwrap();
            for i in 0..2 {
                assert!(after.get(i, j) > before.get(i, j));
            }
            for i in 2..n {
                assert_eq!(after.get(i, j), before.get(i, j));
            }
        }
    }

    proptest! {
        #[test]
        fn constant_shift_preserves_optimal_cost(
            vals in prop::collection::vec(-5.0f64..5.0, 25),
            c in -10.0f64..10.0,
        ) {
            let d = CostMatrix::new(5, vals.clone()).unwrap();
            let shifted = CostMatrix::new(5, vals.iter().map(|v| v + c).collect()).unwrap();
            let a = d.total(&hungarian(&d));
            let b = shifted.total(&hungarian(&shifted));
            prop_assert!((b - 5.0 * c - a).abs() < 1e-9);
            let brute = d.total(&brute_force_assign(&d).unwrap());
            prop_assert!((a - brute).abs() < 1e-9);
        }

        #[test]
        fn hungarian_returns_a_permutation(vals in prop::collection::vec(-5.0f64..5.0, 49)) {
            let d = CostMatrix::new(7, vals).unwrap();
            let mut p = hungarian(&d);
            p.sort_unstable();
            prop_assert_eq!(p, (0..7).collect::<Vec<_>>());
        }
    }
}
