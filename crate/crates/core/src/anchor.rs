//! Anchor cells along lanes: jittered training positives with surrounding
//! negatives, curvature-weighted inference sampling, and ground-truth
//! segment extraction per cell.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curve::{arc_length, invert_arc_length, signed_curvature, CurveParams};
use crate::error::{Error, Result};
use crate::geom::{Polyline3, Vec2, Vec3};
use crate::local::{heading_of, SegmentParams};
use crate::scalar::{cast, Scalar};

/// Default cell side in meters (32 px at 0.03125 m/px).
pub const DEFAULT_CELL_SIZE: f64 = 1.0;
/// Default curvature gain of the inference density `1 + gain·|κ|`.
pub const DEFAULT_CURVATURE_GAIN: f64 = 5.0;
/// Default negatives per positive.
pub const DEFAULT_NEG_RATIO: f64 = 1.0;
/// Default anchor cells per lane.
pub const DEFAULT_CELLS_PER_LANE: usize = 40;

/// Grid resolution of the inference density along the curve parameter.
const DENSITY_GRID: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellLabel {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neg")]
    Negative,
}

/// Axis-aligned square cell in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorCell<T> {
    pub center: Vec2<T>,
    pub half_size: T,
    pub lane_id: usize,
    /// Position along the lane for positives; for negatives, the index of the
    /// positive they were drawn around.
    #[serde(rename = "order")]
    pub order_index: usize,
    pub label: CellLabel,
}

impl<T: Scalar> AnchorCell<T> {
    pub fn positive(center: Vec2<T>, half_size: T, lane_id: usize, order_index: usize) -> Self {
        AnchorCell { center, half_size, lane_id, order_index, label: CellLabel::Positive }
    }

    pub fn is_positive(&self) -> bool {
        self.label == CellLabel::Positive
    }

    pub fn lo(&self) -> Vec2<T> {
        Vec2::new(self.center.x - self.half_size, self.center.y - self.half_size)
    }

    pub fn hi(&self) -> Vec2<T> {
        Vec2::new(self.center.x + self.half_size, self.center.y + self.half_size)
    }

    /// Closed-square containment.
    pub fn contains(&self, p: Vec2<T>) -> bool {
        (p.x - self.center.x).abs() <= self.half_size && (p.y - self.center.y).abs() <= self.half_size
    }
}

/// Training-time sampling parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingAnchors<T> {
    /// Positive cells per lane (B).
    pub count: usize,
    /// Cell side r_m, meters.
    pub cell_size: T,
    /// Uniform jitter bound per axis, meters.
    pub jitter: T,
    /// Negatives per positive.
    pub neg_ratio: T,
}

impl<T: Scalar> TrainingAnchors<T> {
    /// Defaults with jitter `r_m / 4`.
    pub fn new(count: usize, cell_size: T) -> Self {
        TrainingAnchors { count, cell_size, jitter: cell_size / T::lit(4.0), neg_ratio: T::lit(DEFAULT_NEG_RATIO) }
    }

    fn validate(&self) -> Result<()> {
        if self.count < 3 {
            return Err(Error::invalid(format!("anchor count must be >= 3, got {}", self.count)));
        }
        if !(self.cell_size > T::zero()) {
            return Err(Error::invalid("cell size must be positive"));
        }
        if !(self.jitter >= T::zero()) || !(self.neg_ratio >= T::zero()) {
            return Err(Error::invalid("jitter and neg_ratio must be non-negative"));
        }
        Ok(())
    }
}

fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, lo: T, hi: T) -> T {
    if hi <= lo {
        return lo;
    }
    let u: f64 = rng.random();
    lo + (hi - lo) * cast::<f64, T>(u)
}

/// Positives at equal arc length along `lane` plus jitter, and negatives
/// drawn in the annulus `[r_m, 3 r_m]` around random positives, rejected if
/// closer than `r_m` (in the BEV plane) to any of `all_lanes`.
pub fn sample_training_anchors<T: Scalar, R: Rng + ?Sized>(
    lane: &Polyline3<T>,
    lane_id: usize,
    all_lanes: &[Polyline3<T>],
    params: &TrainingAnchors<T>,
    rng: &mut R,
) -> Result<Vec<AnchorCell<T>>> {
    params.validate()?;
    let cum = lane.cumulative_lengths();
    let total = cum[cum.len() - 1];
    let half = params.cell_size / T::lit(2.0);
    let b = params.count;
    let mut cells = Vec::with_capacity(b * 2);
    for k in 0..b {
        let s = total * T::from_usize(k).unwrap() / T::from_usize(b - 1).unwrap();
        let p = lane.point_at_with(&cum, s).xy();
        let jx = uniform(rng, -params.jitter, params.jitter);
        let jy = uniform(rng, -params.jitter, params.jitter);
        cells.push(AnchorCell::positive(Vec2::new(p.x + jx, p.y + jy), half, lane_id, k));
    }

    let wanted = (params.neg_ratio * T::from_usize(b).unwrap()).ceil().to_usize().unwrap_or(0);
    let budget = 100 * wanted;
    let (r_in, r_out) = (params.cell_size, params.cell_size * T::lit(3.0));
    let mut attempts = 0;
    let mut placed = 0;
    while placed < wanted {
        if attempts >= budget {
            return Err(Error::SceneTooDense { wanted, attempts });
        }
        attempts += 1;
        let src = rng.random_range(0..b);
        // area-uniform radius
        let r = uniform(rng, r_in * r_in, r_out * r_out).sqrt();
        let phi = uniform(rng, T::zero(), T::lit(2.0) * T::PI());
        let c = cells[src].center + Vec2::new(r * phi.cos(), r * phi.sin());
        if all_lanes.iter().chain(std::iter::once(lane)).any(|l| l.distance_to_2d(c) < r_in) {
            continue;
        }
        cells.push(AnchorCell { center: c, half_size: half, lane_id, order_index: src, label: CellLabel::Negative });
        placed += 1;
    }
    Ok(cells)
}

/// Arc length, parameter and curvature on a uniform grid in `t`.
struct DensityGrid<T> {
    t: Vec<T>,
    s: Vec<T>,
    kappa: Vec<T>,
}

fn density_grid<T: Scalar>(theta: &CurveParams<T>) -> Result<DensityGrid<T>> {
    let m = DENSITY_GRID;
    let mut t = Vec::with_capacity(m + 1);
    let mut s = Vec::with_capacity(m + 1);
    let mut kappa = Vec::with_capacity(m + 1);
    let mut acc = T::zero();
    for i in 0..=m {
        let ti = T::from_usize(i).unwrap() / T::from_usize(m).unwrap();
        if i > 0 {
            acc += arc_length(theta, t[i - 1], ti);
        }
        t.push(ti);
        s.push(acc);
        kappa.push(signed_curvature(theta, ti)?.abs());
    }
    Ok(DensityGrid { t, s, kappa })
}

/// Exactly `count` positive cells along `theta` whose linear density in arc
/// length is proportional to `1 + gain·|κ(s)|`, by inverse-CDF sampling at
/// evenly spaced quantiles (both ends included).
pub fn sample_inference_anchors<T: Scalar>(
    theta: &CurveParams<T>,
    count: usize,
    cell_size: T,
    gain: T,
    lane_id: usize,
) -> Result<Vec<AnchorCell<T>>> {
    if count < 3 {
        return Err(Error::invalid(format!("anchor count must be >= 3, got {count}")));
    }
    if !(cell_size > T::zero()) || !(gain >= T::zero()) {
        return Err(Error::invalid("cell size must be positive and gain non-negative"));
    }
    let grid = density_grid(theta)?;
    let m = grid.t.len() - 1;
    // trapezoid CDF of the density over arc length
    let rho = |i: usize| T::one() + gain * grid.kappa[i];
    let mut cdf = vec![T::zero(); m + 1];
    for i in 1..=m {
        cdf[i] = cdf[i - 1] + (grid.s[i] - grid.s[i - 1]) * (rho(i - 1) + rho(i)) / T::lit(2.0);
    }
    let total = cdf[m];
    let half = cell_size / T::lit(2.0);
    let mut cells = Vec::with_capacity(count);
    let (mut t_prev, mut s_prev) = (T::zero(), T::zero());
    for k in 0..count {
        let (t, s) = if k == 0 {
            (T::zero(), T::zero())
        } else if k == count - 1 {
            (T::one(), grid.s[m])
        } else {
            let u = total * T::from_usize(k).unwrap() / T::from_usize(count - 1).unwrap();
            let i = cdf.partition_point(|&c| c <= u).clamp(1, m);
            // the density is linear in s on each interval, so the CDF is
            // quadratic; solve for the offset exactly
            let (ra, rb) = (rho(i - 1), rho(i));
            let ds = grid.s[i] - grid.s[i - 1];
            let need = u - cdf[i - 1];
            let offset = if ds <= T::zero() {
                T::zero()
            } else {
                let slope = (rb - ra) / ds;
                if slope.abs() <= T::lit(1e-14) * ra {
                    need / ra
                } else {
                    ((ra * ra + T::lit(2.0) * slope * need).max(T::zero()).sqrt() - ra) / slope
                }
            };
            let s = (grid.s[i - 1] + offset).min(grid.s[m]);
            (invert_arc_length(theta, t_prev, s - s_prev), s)
        };
        cells.push(AnchorCell::positive(theta.at(t).xy(), half, lane_id, k));
        t_prev = t;
        s_prev = s;
    }
    Ok(cells)
}

/// Portion of a lane inside a cell, as 3D points in lane order.
#[derive(Clone, Debug)]
struct Piece<T> {
    points: Vec<Vec3<T>>,
}

/// Liang–Barsky clip of segment `a→b` (xy) against the cell; parameter
/// interval on the segment, if non-empty.
fn clip_segment<T: Scalar>(a: Vec2<T>, b: Vec2<T>, lo: Vec2<T>, hi: Vec2<T>) -> Option<(T, T)> {
    let d = b - a;
    let (mut t0, mut t1) = (T::zero(), T::one());
    for (p, q) in [(-d.x, a.x - lo.x), (d.x, hi.x - a.x), (-d.y, a.y - lo.y), (d.y, hi.y - a.y)] {
        if p == T::zero() {
            if q < T::zero() {
                return None;
            }
        } else {
            let r = q / p;
            if p < T::zero() {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

fn clip_pieces<T: Scalar>(lane: &Polyline3<T>, cell: &AnchorCell<T>) -> Vec<Piece<T>> {
    let (lo, hi) = (cell.lo(), cell.hi());
    let pts = lane.points();
    let mut pieces: Vec<Piece<T>> = Vec::new();
    let mut open = false;
    for w in pts.windows(2) {
        match clip_segment(w[0].xy(), w[1].xy(), lo, hi) {
            Some((t0, t1)) => {
                let enter = w[0].lerp(w[1], t0);
                let exit = w[0].lerp(w[1], t1);
                if open && t0 == T::zero() {
                    let piece = pieces.last_mut().unwrap();
                    if *piece.points.last().unwrap() != exit {
                        piece.points.push(exit);
                    }
                } else {
                    pieces.push(Piece { points: vec![enter, exit] });
                }
                open = t1 == T::one();
            }
            None => open = false,
        }
    }
    pieces
}

fn planar_length<T: Scalar>(pts: &[Vec3<T>]) -> T {
    pts.windows(2).fold(T::zero(), |acc, w| acc + (w[1] - w[0]).xy().norm())
}

/// Point at half the planar arc length of `pts`, z interpolated.
fn planar_midpoint<T: Scalar>(pts: &[Vec3<T>], total: T) -> Vec3<T> {
    let target = total / T::lit(2.0);
    let mut acc = T::zero();
    for w in pts.windows(2) {
        let len = (w[1] - w[0]).xy().norm();
        if len > T::zero() && acc + len >= target {
            return w[0].lerp(w[1], (target - acc) / len);
        }
        acc += len;
    }
    pts[pts.len() - 1]
}

fn piece_segment<T: Scalar>(piece: &Piece<T>) -> Option<SegmentParams<T>> {
    let l = planar_length(&piece.points);
    if !(l > T::zero()) {
        return None;
    }
    let p_o = planar_midpoint(&piece.points, l);
    let chord = (piece.points[piece.points.len() - 1] - piece.points[0]).xy();
    let alpha = if chord.norm() > T::zero() { heading_of(chord) } else { T::zero() };
    Some(SegmentParams { p_o, l, alpha })
}

/// Ground-truth bar for `cell`: the clipped piece of `lane` whose midpoint is
/// nearest the cell center. `l` is the planar length of the piece, `alpha`
/// the heading of its chord.
pub fn extract_gt_segment<T: Scalar>(lane: &Polyline3<T>, cell: &AnchorCell<T>) -> Option<SegmentParams<T>> {
    nearest_piece(lane, cell).map(|(seg, _)| seg)
}

fn nearest_piece<T: Scalar>(lane: &Polyline3<T>, cell: &AnchorCell<T>) -> Option<(SegmentParams<T>, T)> {
    clip_pieces(lane, cell)
        .iter()
        .filter_map(piece_segment)
        .map(|seg| {
            let d = (seg.p_o.xy() - cell.center).norm();
            (seg, d)
        })
        .fold(None, |best: Option<(SegmentParams<T>, T)>, cand| match best {
            Some(b) if b.1 <= cand.1 => Some(b),
            _ => Some(cand),
        })
}

/// As [`extract_gt_segment`] over several lanes; returns the index of the
/// lane owning the nearest piece.
pub fn extract_gt_segment_nearest<T: Scalar>(
    lanes: &[Polyline3<T>],
    cell: &AnchorCell<T>,
) -> Option<(usize, SegmentParams<T>)> {
    let mut best: Option<(usize, SegmentParams<T>, T)> = None;
    for (i, lane) in lanes.iter().enumerate() {
        if let Some((seg, d)) = nearest_piece(lane, cell) {
            if best.as_ref().is_none_or(|b| d < b.2) {
                best = Some((i, seg, d));
            }
        }
    }
    best.map(|(i, s, _)| (i, s))
}
