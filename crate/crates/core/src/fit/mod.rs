//! Direct optimization of lane slots and anchor-cell segments against the
//! global and local losses.

mod objective;
mod optim;
mod seed;

pub use objective::{check_gradients, finite_difference_check, sigmoid, total_loss, total_loss_fixed, GradientCheck, LossBreakdown};
pub use optim::{optimize, trace_csv, OptimizeResult, TraceRow, STEP_TOL};
pub use seed::{seed_curves, SeedConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::anchor::{extract_gt_segment, sample_training_anchors, AnchorCell, CellLabel, TrainingAnchors};
use crate::assignment::{GtSlot, LanePrediction};
use crate::curve::{CurveParams, CURVE_FREE_PARAMS};
use crate::error::{Error, Result};
use crate::geom::{Polyline3, Vec3};
use crate::local::{wrap_heading, LocalWidth, LossWeights, SegmentParams};
use crate::scalar::{cast, Scalar};

/// Free parameters per lane slot: 12 curve parameters and a logit.
pub const SLOT_PARAMS: usize = CURVE_FREE_PARAMS + 1;
/// Free parameters per anchor cell: `x, y, z, l, alpha` and a logit.
pub const CELL_PARAMS: usize = 6;

/// Optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Initial step size.
    pub lr: f64,
    /// Step size at the end of the budget relative to `lr` (exponential decay).
    pub lr_final_ratio: f64,
    /// Iteration budget.
    pub iterations: usize,
    /// Iterations during which only the global loss is optimized.
    pub warmup: usize,
    /// Re-solve the matching every this many iterations.
    pub rematch_every: usize,
    /// Stop once the best loss improved by less than `conv_tol·max(1, L)`
    /// over `conv_window` iterations (after warmup).
    pub conv_tol: f64,
    pub conv_window: usize,
    pub divergence_limit: f64,
    /// Lane slots N.
    pub slots: usize,
    /// Positive anchor cells per lane B.
    pub cells_per_lane: usize,
    /// Cell side r_m, meters.
    pub cell_size: f64,
    /// Training jitter bound; negative means `cell_size / 4`.
    pub jitter: f64,
    pub neg_ratio: f64,
    pub curvature_gain: f64,
    /// Bar half-axis across the lane, meters.
    pub width: f64,
    /// Slots at or above this probability are reported as lanes.
    pub prob_threshold: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 0.5,
            lr: 0.01,
            lr_final_ratio: 0.01,
            iterations: 5000,
            warmup: 50,
            rematch_every: 10,
            conv_tol: 1e-9,
            conv_window: 25,
            divergence_limit: 1e6,
            slots: 15,
            cells_per_lane: 40,
            cell_size: 1.0,
            jitter: -1.0,
            neg_ratio: 1.0,
            curvature_gain: 5.0,
            width: 0.30,
            prob_threshold: 0.5,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.lr_final_ratio, self.cell_size, self.width, self.divergence_limit];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("lr, lr_final_ratio, cell_size, width and divergence_limit must be positive"));
        }
        let nonneg = [self.lambda1, self.lambda2, self.lambda3, self.conv_tol, self.neg_ratio, self.curvature_gain];
        if nonneg.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("loss weights, tolerances and ratios must be non-negative"));
        }
        if self.rematch_every == 0 || self.slots == 0 || self.cells_per_lane < 3 || self.conv_window == 0 {
            return Err(Error::invalid("rematch_every, slots, conv_window must be >= 1 and cells_per_lane >= 3"));
        }
        if !(0.0..=1.0).contains(&self.prob_threshold) {
            return Err(Error::invalid("prob_threshold must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn weights<T: Scalar>(&self) -> LossWeights<T> {
        LossWeights { lambda1: cast(self.lambda1), lambda2: cast(self.lambda2), lambda3: cast(self.lambda3) }
    }

    pub fn local_width<T: Scalar>(&self) -> Result<LocalWidth<T>> {
        LocalWidth::new(cast(self.width))
    }

    pub fn jitter(&self) -> f64 {
        if self.jitter < 0.0 {
            self.cell_size / 4.0
        } else {
            self.jitter
        }
    }

    pub fn training_anchors<T: Scalar>(&self) -> TrainingAnchors<T> {
        TrainingAnchors {
            count: self.cells_per_lane,
            cell_size: cast(self.cell_size),
            jitter: cast(self.jitter()),
            neg_ratio: cast(self.neg_ratio),
        }
    }
}

/// One lane slot: curve and lane logit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotState<T> {
    pub theta: CurveParams<T>,
    pub logit: T,
}

/// One anchor cell: bar and cell logit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellState<T> {
    pub eta: SegmentParams<T>,
    pub logit: T,
}

/// Every optimized quantity, with a flat-vector view laid out as all slots
/// (`[A, B, p_s, p_e, logit]`) followed by all cells
/// (`[x, y, z, l, alpha, logit]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T> {
    pub slots: Vec<SlotState<T>>,
    pub cells: Vec<CellState<T>>,
}

impl<T: Scalar> ModelState<T> {
    pub fn len(&self) -> usize {
        self.slots.len() * SLOT_PARAMS + self.cells.len() * CELL_PARAMS
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slot_offset(j: usize) -> usize {
        j * SLOT_PARAMS
    }

    pub fn cell_offset(&self, c: usize) -> usize {
        self.slots.len() * SLOT_PARAMS + c * CELL_PARAMS
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len());
        for s in &self.slots {
            out.extend_from_slice(&s.theta.to_free());
            out.push(s.logit);
        }
        for c in &self.cells {
            let e = &c.eta;
            out.extend_from_slice(&[e.p_o.x, e.p_o.y, e.p_o.z, e.l, e.alpha, c.logit]);
        }
        out
    }

    /// Overwrites every parameter from `flat` (same layout as [`to_flat`]).
    ///
    /// [`to_flat`]: ModelState::to_flat
    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::ShapeMismatch(format!("flat vector of {} for a state of {}", flat.len(), self.len())));
        }
        let (head, tail) = flat.split_at(self.slots.len() * SLOT_PARAMS);
        for (s, chunk) in self.slots.iter_mut().zip(head.chunks_exact(SLOT_PARAMS)) {
            s.theta = CurveParams::from_free_slice(&chunk[..CURVE_FREE_PARAMS]);
            s.logit = chunk[CURVE_FREE_PARAMS];
        }
        for (c, chunk) in self.cells.iter_mut().zip(tail.chunks_exact(CELL_PARAMS)) {
            c.eta = SegmentParams { p_o: Vec3::new(chunk[0], chunk[1], chunk[2]), l: chunk[3], alpha: chunk[4] };
            c.logit = chunk[5];
        }
        Ok(())
    }

    pub fn prob(&self, j: usize) -> T {
        sigmoid(self.slots[j].logit)
    }

    pub fn predictions(&self) -> Vec<LanePrediction<T>> {
        self.slots.iter().map(|s| LanePrediction { theta: s.theta, prob_lane: sigmoid(s.logit) }).collect()
    }

    /// Curves of slots with probability at least `threshold`.
    pub fn lanes_above(&self, threshold: T) -> Vec<CurveParams<T>> {
        self.slots.iter().filter(|s| sigmoid(s.logit) >= threshold).map(|s| s.theta).collect()
    }

    /// Puts every bar heading back into `(−π/2, π/2]`.
    pub fn wrap_headings(&mut self) {
        for c in &mut self.cells {
            c.eta.alpha = wrap_heading(c.eta.alpha);
        }
    }
}

/// One anchor cell with its ground truth bar (positives only).
#[derive(Clone, Debug, PartialEq)]
pub struct CellTarget<T> {
    pub cell: AnchorCell<T>,
    pub gt: Option<SegmentParams<T>>,
}

impl<T: Scalar> CellTarget<T> {
    pub fn is_positive(&self) -> bool {
        self.gt.is_some()
    }
}

/// Ground truth for one fit: padded lane slots and anchor cells.
#[derive(Clone, Debug)]
pub struct FitProblem<T> {
    pub gts: Vec<GtSlot<T>>,
    pub cells: Vec<CellTarget<T>>,
    pub width: LocalWidth<T>,
    /// Positive cell indices per lane, in lane order.
    groups: Vec<Vec<usize>>,
}

impl<T: Scalar> FitProblem<T> {
    pub fn new(gts: Vec<GtSlot<T>>, cells: Vec<CellTarget<T>>, width: LocalWidth<T>) -> Self {
        let lanes = cells.iter().filter(|c| c.is_positive()).map(|c| c.cell.lane_id + 1).max().unwrap_or(0);
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); lanes];
        for (i, c) in cells.iter().enumerate() {
            if c.is_positive() {
                groups[c.cell.lane_id].push(i);
            }
        }
        for g in &mut groups {
            g.sort_by_key(|&i| cells[i].cell.order_index);
        }
        FitProblem { gts, cells, width, groups }
    }

    /// Pads `lanes` to `cfg.slots` and samples training anchors along each
    /// lane; positives whose cell misses the lane become negatives.
    pub fn from_lanes<R: Rng + ?Sized>(lanes: &[Polyline3<T>], cfg: &FitConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let gts = GtSlot::padded(lanes, cfg.slots)?;
        let params = cfg.training_anchors::<T>();
        let mut cells = Vec::new();
        for (i, lane) in lanes.iter().enumerate() {
            for mut cell in sample_training_anchors(lane, i, lanes, &params, rng)? {
                let gt = if cell.is_positive() { extract_gt_segment(lane, &cell) } else { None };
                if cell.is_positive() && gt.is_none() {
                    cell.label = CellLabel::Negative;
                }
                cells.push(CellTarget { cell, gt });
            }
        }
        Ok(Self::new(gts, cells, cfg.local_width()?))
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn positives(&self) -> usize {
        self.cells.iter().filter(|c| c.is_positive()).count()
    }
}

/// Uninformed bar for a cell: at its center, as long as the cell, heading
/// along +y, even odds.
pub fn initial_cell<T: Scalar>(cell: &AnchorCell<T>, z: T) -> CellState<T> {
    CellState {
        eta: SegmentParams { p_o: cell.center.extend(z), l: cell.half_size * T::lit(2.0), alpha: T::zero() },
        logit: T::zero(),
    }
}

/// Placeholder curve for the `k`-th unused slot: a 1 m stub along +y at the
/// bottom edge of the region spanned by `lo`/`hi`.
pub fn padding_curve<T: Scalar>(k: usize, count: usize, lo: Vec3<T>, hi: Vec3<T>) -> CurveParams<T> {
    let f = (T::from_usize(k).unwrap() + T::lit(0.5)) / T::from_usize(count.max(1)).unwrap();
    let x = lo.x + (hi.x - lo.x) * f;
    let p_s = Vec3::new(x, lo.y, lo.z);
    CurveParams::line(p_s, p_s + Vec3::new(T::zero(), T::one(), T::zero()))
}

/// State whose first slots hold `curves` with `logit`, padded with stub
/// curves at `pad_logit`, and uninformed cells for `problem`.
pub fn initial_state<T: Scalar>(
    curves: &[CurveParams<T>],
    logit: T,
    pad_logit: T,
    problem: &FitProblem<T>,
    lo: Vec3<T>,
    hi: Vec3<T>,
) -> Result<ModelState<T>> {
    let n = problem.gts.len();
    if curves.len() > n {
        return Err(Error::invalid(format!("{} curves exceed the {n} slots", curves.len())));
    }
    let mut slots: Vec<SlotState<T>> = curves.iter().map(|&theta| SlotState { theta, logit }).collect();
    let pads = n - curves.len();
    for k in 0..pads {
        slots.push(SlotState { theta: padding_curve(k, pads, lo, hi), logit: pad_logit });
    }
    let cells = problem.cells.iter().map(|c| initial_cell(&c.cell, T::zero())).collect();
    Ok(ModelState { slots, cells })
}


/// State matching the ground truth: `curves` in the first slots with
/// `logit`, padding at `−logit`, bars equal to their targets, and cell
/// logits `±logit` by label.
pub fn ground_truth_state(problem: &FitProblem<f64>, curves: &[CurveParams<f64>], logit: f64) -> Result<ModelState<f64>> {
    let (lo, hi) = (Vec3::new(-12.0, -12.0, 0.0), Vec3::new(12.0, 12.0, 0.0));
    let mut s = initial_state(curves, logit, -logit, problem, lo, hi)?;
    for (c, t) in s.cells.iter_mut().zip(&problem.cells) {
        if let Some(gt) = t.gt {
            c.eta = gt;
        }
        c.logit = if t.cell.is_positive() { logit } else { -logit };
    }
    Ok(s)
}

/// [`ground_truth_state`] with every parameter jittered and every logit
/// drawn from `[−3, 3]`, which keeps the objective away from its kinks.
pub fn jittered_state<R: Rng + ?Sized>(
    problem: &FitProblem<f64>,
    curves: &[CurveParams<f64>],
    rng: &mut R,
) -> Result<ModelState<f64>> {
    let mut jitter = |r: f64| Vec3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r));
    let mut s = ground_truth_state(problem, curves, 0.0)?;
    for slot in &mut s.slots {
        let th = slot.theta;
        slot.theta = CurveParams::from_free(th.a + jitter(0.3), th.b + jitter(0.3), th.p_s + jitter(0.4), th.p_e + jitter(0.4));
    }
    for c in &mut s.cells {
        c.eta.p_o += jitter(0.2);
    }
    for slot in &mut s.slots {
        slot.logit = rng.random_range(-3.0..3.0);
    }
    for c in &mut s.cells {
        c.eta.l = (c.eta.l + rng.random_range(-0.2..0.2)).max(0.3);
        c.eta.alpha += rng.random_range(-0.3..0.3);
        c.logit = rng.random_range(-3.0..3.0);
    }
    Ok(s)
}
