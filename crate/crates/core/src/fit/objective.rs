//! Composite objective, its gradient, and a finite-difference check.

use serde::{Deserialize, Serialize};

use super::{FitConfig, FitProblem, ModelState, CELL_PARAMS, SLOT_PARAMS};
use crate::assignment::{bce, cost_matrix, hungarian, slot_loss, GtSlot};
use crate::curve::{CurveParams, CURVE_FREE_PARAMS};
use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::local::{local_total_loss, segment_kl_grad, smoothness_loss_grad, LocalLossParts, LossWeights};
use crate::scalar::{cast, Scalar};

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Loss value split into its terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub gsm: T,
    pub kl: T,
    pub sm: T,
    pub cls: T,
    pub z: T,
    /// Whether the local terms are part of `total`.
    pub local: bool,
}

impl<T: Scalar> LossBreakdown<T> {
    pub fn local_parts(&self) -> LocalLossParts<T> {
        LocalLossParts { kl: self.kl, sm: self.sm, cls: self.cls, z: self.z }
    }
}

fn finite<T: Scalar>(v: T, term: &'static str) -> Result<T> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term })
    }
}

/// Loss and gradient with the matching `perm` held fixed (`perm[i]` is the
/// slot matched to ground-truth row `i`). The local terms enter only when
/// `local` is set. The gradient follows [`ModelState::to_flat`].
pub fn total_loss_fixed<T: Scalar>(
    state: &ModelState<T>,
    problem: &FitProblem<T>,
    perm: &[usize],
    weights: &LossWeights<T>,
    local: bool,
) -> Result<(LossBreakdown<T>, Vec<T>)> {
    let n = problem.gts.len();
    if state.slots.len() != n || perm.len() != n || state.cells.len() != problem.cells.len() {
        return Err(Error::ShapeMismatch(format!(
            "state has {} slots and {} cells; problem has {} slots and {} cells; matching has {} entries",
            state.slots.len(),
            state.cells.len(),
            n,
            problem.cells.len(),
            perm.len()
        )));
    }
    let mut grad = vec![T::zero(); state.len()];

    let mut gsm = T::zero();
    for (gt, &j) in problem.gts.iter().zip(perm) {
        let (v, g) = slot_term(&state.slots[j].theta, state.slots[j].logit, gt, weights.lambda1);
        gsm += v;
        grad[ModelState::<T>::slot_offset(j)..][..SLOT_PARAMS].copy_from_slice(&g);
    }
    let gsm = finite(gsm, "L_GSM")?;

    let mut parts = LocalLossParts { kl: T::zero(), sm: T::zero(), cls: T::zero(), z: T::zero() };
    if local {
        parts = local_terms(state, problem, weights, &mut grad)?;
    }
    let total = if local { gsm + local_total_loss(&parts, weights) } else { gsm };
    let out = LossBreakdown { total: finite(total, "total")?, gsm, kl: parts.kl, sm: parts.sm, cls: parts.cls, z: parts.z, local };
    Ok((out, grad))
}

fn slot_term<T: Scalar>(theta: &CurveParams<T>, logit: T, gt: &GtSlot<T>, lambda1: T) -> (T, [T; SLOT_PARAMS]) {
    type D<T> = Dual<T, SLOT_PARAMS>;
    let mut seed = [T::zero(); SLOT_PARAMS];
    seed[..CURVE_FREE_PARAMS].copy_from_slice(&theta.to_free());
    seed[CURVE_FREE_PARAMS] = logit;
    let v = D::vars(seed);
    let th = CurveParams::from_free_slice(&v[..CURVE_FREE_PARAMS]);
    let out = slot_loss(&th, sigmoid(v[CURVE_FREE_PARAMS]), gt, D::constant(lambda1));
    (out.value, out.grad)
}

fn local_terms<T: Scalar>(
    state: &ModelState<T>,
    problem: &FitProblem<T>,
    weights: &LossWeights<T>,
    grad: &mut [T],
) -> Result<LocalLossParts<T>> {
    let base = state.cell_offset(0);
    let cell_grad = |grad: &mut [T], c: usize, k: usize, v: T| grad[base + c * CELL_PARAMS + k] += v;

    // Bar shape.
    let mut kl = T::zero();
    for (c, target) in problem.cells.iter().enumerate() {
        if let Some(gt) = &target.gt {
            let (v, g) = segment_kl_grad(&state.cells[c].eta, gt, problem.width)?;
            kl += v;
            for (k, idx) in [0usize, 1, 3, 4].into_iter().enumerate() {
                cell_grad(grad, c, idx, weights.lambda2 * g[k]);
            }
        }
    }
    let kl = finite(kl, "L_kl")?;

    // Smoothness of the ordered bar centers.
    let lanes: Vec<Vec<Vec3<T>>> =
        problem.groups().iter().map(|g| g.iter().map(|&c| state.cells[c].eta.p_o).collect()).collect();
    let (sm, sm_grad) = smoothness_loss_grad(&lanes);
    let sm = finite(sm, "L_sm")?;
    for (g, lg) in problem.groups().iter().zip(&sm_grad) {
        for (&c, d) in g.iter().zip(lg) {
            for (k, v) in d.to_array().into_iter().enumerate() {
                cell_grad(grad, c, k, weights.lambda3 * v);
            }
        }
    }

    // Height, averaged over positives.
    let positives = problem.positives();
    let mut z = T::zero();
    if positives > 0 {
        let np = T::from_usize(positives).unwrap();
        for (c, target) in problem.cells.iter().enumerate() {
            if let Some(gt) = &target.gt {
                let e = state.cells[c].eta.p_o.z - gt.p_o.z;
                z += e * e / np;
                cell_grad(grad, c, 2, T::lit(2.0) * e / np);
            }
        }
    }
    let z = finite(z, "L_z")?;

    // Cell classification, averaged over all cells.
    let mut cls = T::zero();
    if !problem.cells.is_empty() {
        let nc = T::from_usize(problem.cells.len()).unwrap();
        for (c, target) in problem.cells.iter().enumerate() {
            let logit = Dual::<T, 1>::var(state.cells[c].logit, 0);
            let out = bce(sigmoid(logit), target.cell.is_positive());
            cls += out.value / nc;
            cell_grad(grad, c, 5, weights.lambda1 * out.grad[0] / nc);
        }
    }
    let cls = finite(cls, "L_cls")?;

    Ok(LocalLossParts { kl, sm, cls, z })
}

/// Total loss at `iteration`: re-solves the matching from the current state,
/// then applies [`total_loss_fixed`] with the local terms enabled once the
/// warmup is over. Returns the matching used.
pub fn total_loss<T: Scalar>(
    state: &ModelState<T>,
    problem: &FitProblem<T>,
    cfg: &FitConfig,
    iteration: usize,
) -> Result<(LossBreakdown<T>, Vec<T>, Vec<usize>)> {
    let weights = cfg.weights::<T>();
    let perm = hungarian(&cost_matrix(&state.predictions(), &problem.gts, weights.lambda1)?);
    let (loss, grad) = total_loss_fixed(state, problem, &perm, &weights, iteration >= cfg.warmup)?;
    Ok((loss, grad, perm))
}

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientCheck {
    /// Largest `|g_a − g_fd| / max(1, |g_a|, |g_fd|)` over all coordinates.
    pub max_rel_error: f64,
    /// Coordinate where it occurs.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the analytic gradient of [`total_loss_fixed`] with central
/// differences of step `h` in every coordinate, matching held fixed.
pub fn check_gradients<T: Scalar>(
    state: &ModelState<T>,
    problem: &FitProblem<T>,
    perm: &[usize],
    weights: &LossWeights<T>,
    local: bool,
    h: f64,
) -> Result<GradientCheck> {
    let (_, g) = total_loss_fixed(state, problem, perm, weights, local)?;
    let x0: Vec<f64> = state.to_flat().iter().map(|v| v.value_f64()).collect();
    let analytic: Vec<f64> = g.iter().map(|v| v.value_f64()).collect();
    let mut probe = state.clone();
    finite_difference_check(&x0, &analytic, h, |x| {
        let xs: Vec<T> = x.iter().map(|&v| cast(v)).collect();
        probe.set_flat(&xs)?;
        Ok(total_loss_fixed(&probe, problem, perm, weights, local)?.0.total.value_f64())
    })
}

/// Compares `analytic` with central differences of step `h` of `value`
/// around `x0`, coordinate by coordinate.
pub fn finite_difference_check(
    x0: &[f64],
    analytic: &[f64],
    h: f64,
    mut value: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<GradientCheck> {
    if analytic.len() != x0.len() {
        return Err(Error::ShapeMismatch(format!("{} gradient entries for {} coordinates", analytic.len(), x0.len())));
    }
    let mut numeric = Vec::with_capacity(x0.len());
    let mut x = x0.to_vec();
    for i in 0..x0.len() {
        x[i] = x0[i] + h;
        let up = value(&x)?;
        x[i] = x0[i] - h;
        let down = value(&x)?;
        x[i] = x0[i];
        numeric.push((up - down) / (2.0 * h));
    }
    let (mut max_rel_error, mut worst_index) = (0.0, 0);
    for (i, (a, b)) in analytic.iter().zip(&numeric).enumerate() {
        let e = (a - b).abs() / 1f64.max(a.abs()).max(b.abs());
        if e > max_rel_error {
            max_rel_error = e;
            worst_index = i;
        }
    }
    Ok(GradientCheck { max_rel_error, worst_index, analytic: analytic.to_vec(), numeric })
}

/// Partition of the flat parameters into blocks whose loss contributions are
/// independent once the matching is fixed: each slot's curve, each slot's
/// logit, each lane's bars (coupled by smoothness), the unused bars of
/// negative cells, and each cell's logit. Returns the block of every flat
/// index and the block count.
pub(crate) fn block_layout<T: Scalar>(state: &ModelState<T>, problem: &FitProblem<T>) -> (Vec<usize>, usize) {
    let n = state.slots.len();
    let groups = problem.groups().len();
    let free_bars = 2 * n + groups;
    let mut of_index = Vec::with_capacity(state.len());
    for j in 0..n {
        of_index.extend(std::iter::repeat_n(2 * j, CURVE_FREE_PARAMS));
        of_index.push(2 * j + 1);
    }
    let mut bar_block = vec![free_bars; problem.cells.len()];
    for (g, cells) in problem.groups().iter().enumerate() {
        for &c in cells {
            bar_block[c] = 2 * n + g;
        }
    }
    for (c, &b) in bar_block.iter().enumerate() {
        of_index.extend(std::iter::repeat_n(b, CELL_PARAMS - 1));
        of_index.push(free_bars + 1 + c);
    }
    (of_index, free_bars + 1 + problem.cells.len())
}

/// Loss contribution of every block of [`block_layout`] (weights applied);
/// the blocks sum to the total of [`total_loss_fixed`].
pub(crate) fn block_losses<T: Scalar>(
    state: &ModelState<T>,
    problem: &FitProblem<T>,
    perm: &[usize],
    weights: &LossWeights<T>,
    local: bool,
) -> Result<Vec<f64>> {
    let n = state.slots.len();
    let groups = problem.groups().len();
    let free_bars = 2 * n + groups;
    let mut out = vec![0.0; free_bars + 1 + problem.cells.len()];
    for (gt, &j) in problem.gts.iter().zip(perm) {
        let s = &state.slots[j];
        out[2 * j + 1] = (weights.lambda1 * bce(sigmoid(s.logit), gt.label())).value_f64();
        if let GtSlot::Lane(target) = gt {
            out[2 * j] = target.loss(&s.theta).value_f64();
        }
    }
    if !local {
        return Ok(out);
    }
    let positives = problem.positives();
    let np = T::from_usize(positives.max(1)).unwrap();
    for (g, cells) in problem.groups().iter().enumerate() {
        let mut acc = T::zero();
        for &c in cells {
            let eta = &state.cells[c].eta;
            let gt = problem.cells[c].gt.as_ref().expect("grouped cells are positive");
            acc += weights.lambda2 * crate::local::segment_kl(eta, gt, problem.width)?;
            let e = eta.p_o.z - gt.p_o.z;
            acc += e * e / np;
        }
        let pts: Vec<Vec3<T>> = cells.iter().map(|&c| state.cells[c].eta.p_o).collect();
        acc += weights.lambda3 * crate::local::smoothness_loss(&[pts]);
        out[2 * n + g] = acc.value_f64();
    }
    let nc = T::from_usize(problem.cells.len().max(1)).unwrap();
    for (c, target) in problem.cells.iter().enumerate() {
        out[free_bars + 1 + c] =
            (weights.lambda1 * bce(sigmoid(state.cells[c].logit), target.cell.is_positive()) / nc).value_f64();
    }
    Ok(out)
}
