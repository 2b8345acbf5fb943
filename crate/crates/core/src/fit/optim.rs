//! Adam with periodic re-matching and step rejection.

use std::io::Write;

use serde::Serialize;

use super::objective::{block_layout, block_losses};
use super::{total_loss_fixed, FitConfig, FitProblem, LossBreakdown, ModelState};
use crate::assignment::{cost_matrix, hungarian};
use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Guaranteed bound on a loss increase across one step under a fixed
/// objective, relative to `max(1, L)`.
pub const STEP_TOL: f64 = 1e-6;
/// Step-size scale multiplier after a rejected step.
const SHRINK: f64 = 0.5;
/// Step-size scale multiplier after an accepted step (capped at 1).
const GROW: f64 = 1.1;
/// Float slack allowed per block; their sum stays far below `STEP_TOL`.
const BLOCK_TOL: f64 = 1e-12;

/// Loss of the accepted state at one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    /// Increments whenever the objective changes (new matching or local
    /// terms switched on).
    #[serde(skip)]
    pub objective: usize,
    pub loss: f64,
    #[serde(rename = "L_GSM")]
    pub gsm: f64,
    #[serde(rename = "L_kl")]
    pub kl: f64,
    #[serde(rename = "L_sm")]
    pub sm: f64,
    #[serde(rename = "L_cls")]
    pub cls: f64,
    #[serde(rename = "L_z")]
    pub z: f64,
}

impl TraceRow {
    fn new<T: Scalar>(iter: usize, objective: usize, l: &LossBreakdown<T>) -> Self {
        TraceRow {
            iter,
            objective,
            loss: l.total.value_f64(),
            gsm: l.gsm.value_f64(),
            kl: l.kl.value_f64(),
            sm: l.sm.value_f64(),
            cls: l.cls.value_f64(),
            z: l.z.value_f64(),
        }
    }
}

/// Final state and bookkeeping of [`optimize`].
#[derive(Clone, Debug)]
pub struct OptimizeResult<T> {
    pub state: ModelState<T>,
    /// Matching in force at the end.
    pub perm: Vec<usize>,
    pub final_loss: LossBreakdown<T>,
    /// One row per iteration.
    pub trace: Vec<TraceRow>,
    /// Running minimum of the trace loss (reporting only).
    pub smoothed: Vec<f64>,
    pub iterations: usize,
    pub rejected: usize,
    pub converged: bool,
}

impl<T> OptimizeResult<T> {
    /// Trace as CSV with header `iter,loss,L_GSM,L_kl,L_sm,L_cls,L_z`.
    pub fn trace_csv(&self) -> String {
        trace_csv(&self.trace)
    }
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = Vec::new();
    writeln!(out, "iter,loss,L_GSM,L_kl,L_sm,L_cls,L_z").unwrap();
    for r in rows {
        writeln!(out, "{},{:e},{:e},{:e},{:e},{:e},{:e}", r.iter, r.loss, r.gsm, r.kl, r.sm, r.cls, r.z).unwrap();
    }
    String::from_utf8(out).unwrap()
}

fn diverged(iteration: usize, loss: f64, trace: &[TraceRow]) -> Error {
    Error::Divergence { iteration, loss, trace: trace.iter().map(|r| r.loss).collect() }
}

/// Minimizes the total loss from `init`.
///
/// Every `rematch_every` iterations the matching is re-solved; local terms
/// join after `warmup` iterations. Between those events the objective is
/// fixed and splits into independent parameter blocks (see
/// `block_layout`). Each Adam step is kept block by block: a block whose own
/// loss would rise is left unchanged and its step scale halved, so the total
/// never rises by more than `STEP_TOL·max(1, L)`. Accepted blocks regrow
/// their scale by 10% up to 1. The base step decays exponentially to
/// `lr·lr_final_ratio` over the budget. Stops at the budget,
/// or once the best loss improved by less than `conv_tol·max(1, L)` over
/// `conv_window` iterations after warmup. Fails with
/// [`Error::Divergence`] when a loss exceeds `divergence_limit` or is not
/// finite.
pub fn optimize<T: Scalar>(init: ModelState<T>, problem: &FitProblem<T>, cfg: &FitConfig) -> Result<OptimizeResult<T>> {
    cfg.validate()?;
    let weights = cfg.weights::<T>();
    let mut state = init;
    let dim = state.len();
    let mut x = state.to_flat();
    let (mut m, mut v) = (vec![0.0f64; dim], vec![0.0f64; dim]);
    let mut t_adam = 0i32;
    let mut fresh_grad = true;
    let (blocks, block_count) = block_layout(&state, problem);
    let mut scale = vec![1.0f64; block_count];
    let mut rejected = 0usize;
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut perm: Vec<usize> = Vec::new();
    let mut cur: Option<(LossBreakdown<T>, Vec<T>)> = None;
    let mut local_on = false;
    let mut objective = 0usize;
    let mut converged = false;
    let mut iterations = 0;
    let decay = cfg.lr_final_ratio.ln() / cfg.iterations.max(1) as f64;

    let check = |l: &LossBreakdown<T>, it: usize, trace: &[TraceRow]| -> Result<()> {
        let val = l.total.value_f64();
        if !val.is_finite() || val > cfg.divergence_limit {
            return Err(diverged(it, val, trace));
        }
        Ok(())
    };
    let eval = |state: &ModelState<T>, perm: &[usize], local: bool, it: usize, trace: &[TraceRow]| {
        total_loss_fixed(state, problem, perm, &weights, local).map_err(|e| match e {
            Error::NonFinite { .. } | Error::NotSpd => diverged(it, f64::NAN, trace),
            other => other,
        })
    };

    for it in 0..cfg.iterations {
        iterations = it + 1;
        let want_local = it >= cfg.warmup;
        if it % cfg.rematch_every == 0 || want_local != local_on || cur.is_none() {
            let new_perm = hungarian(&cost_matrix(&state.predictions(), &problem.gts, weights.lambda1)?);
            if new_perm != perm || want_local != local_on || cur.is_none() {
                perm = new_perm;
                local_on = want_local;
                let e = eval(&state, &perm, local_on, it, &trace)?;
                check(&e.0, it, &trace)?;
                cur = Some(e);
                fresh_grad = true;
                objective += 1;
            }
        }
        let (loss, grad) = cur.as_ref().unwrap();
        trace.push(TraceRow::new(it, objective, loss));

        if fresh_grad {
            t_adam += 1;
            for i in 0..dim {
                let g = grad[i].value_f64();
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            }
            fresh_grad = false;
        }
        let base_lr = cfg.lr * (decay * it as f64).exp();
        let (c1, c2) = (1.0 - BETA1.powi(t_adam), 1.0 - BETA2.powi(t_adam));
        let xp: Vec<T> = (0..dim)
            .map(|i| {
                let step = base_lr * scale[blocks[i]] * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                x[i] - cast(step)
            })
            .collect();
        let mut proposal = state.clone();
        proposal.set_flat(&xp)?;
        proposal.wrap_headings();
        let before = block_losses(&state, problem, &perm, &weights, local_on)?;
        let after = block_losses(&proposal, problem, &perm, &weights, local_on)
            .map_err(|_| diverged(it, f64::NAN, &trace))?;
        let keep: Vec<bool> = before
            .iter()
            .zip(&after)
            .map(|(b, a)| a.is_finite() && *a <= b + BLOCK_TOL * b.abs().max(1.0))
            .collect();
        for (b, &ok) in keep.iter().enumerate() {
            if ok {
                scale[b] = (scale[b] * GROW).min(1.0);
            } else {
                rejected += 1;
                scale[b] *= SHRINK;
            }
        }
        if keep.iter().any(|&k| k) {
            let proposed = proposal.to_flat();
            let mixed: Vec<T> = (0..dim).map(|i| if keep[blocks[i]] { proposed[i] } else { x[i] }).collect();
            state.set_flat(&mixed)?;
            x = mixed;
            let next = eval(&state, &perm, local_on, it, &trace)?;
            check(&next.0, it, &trace)?;
            cur = Some(next);
            fresh_grad = true;
        }

        if local_on && it >= cfg.warmup + cfg.conv_window {
            let tail = &trace[trace.len() - cfg.conv_window..];
            let best_before = trace[..trace.len() - cfg.conv_window]
                .iter()
                .filter(|r| r.iter >= cfg.warmup)
                .map(|r| r.loss)
                .fold(f64::INFINITY, f64::min);
            let best_now = tail.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
            if best_before.is_finite() && best_before - best_now < cfg.conv_tol * best_now.abs().max(1.0) {
                converged = true;
                break;
            }
        }
    }

    if perm.is_empty() {
        perm = hungarian(&cost_matrix(&state.predictions(), &problem.gts, weights.lambda1)?);
    }
    let (final_loss, _) = cur.map(Ok).unwrap_or_else(|| eval(&state, &perm, local_on, 0, &trace))?;
    let mut smoothed = Vec::with_capacity(trace.len());
    let mut best = f64::INFINITY;
    for r in &trace {
        best = best.min(r.loss);
        smoothed.push(best);
    }
    Ok(OptimizeResult { state, perm, final_loss, trace, smoothed, iterations, rejected, converged })
}
