//! Initial curves from a BEV raster: threshold bright cells, split them into
//! connected blobs, and fit one curve per elongated blob.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::bev::BevMap;
use crate::curve::{fit_curve, CurveParams};
use crate::error::{Error, Result};
use crate::geom::{Polyline3, Vec2, Vec3};
use crate::scalar::{cast, Scalar};

/// Settings for [`seed_curves`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedConfig {
    /// Intensity quantile (over non-empty cells) a cell must exceed.
    pub quantile: f64,
    /// Smallest blob kept, in cells.
    pub min_cells: usize,
    /// Shortest centerline kept, meters.
    pub min_length: f64,
    /// Bin width along the blob's main axis, meters.
    pub bin: f64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig { quantile: 0.5, min_cells: 20, min_length: 3.0, bin: 0.25 }
    }
}

impl SeedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.quantile) || !(self.min_length >= 0.0) || !(self.bin > 0.0) {
            return Err(Error::invalid("seed quantile must lie in [0, 1), min_length >= 0 and bin > 0"));
        }
        Ok(())
    }
}

/// One curve per bright elongated blob of `bev`, in raster scan order of the
/// blobs' first cell. Blobs whose centerline is too short or cannot be fitted
/// are skipped.
pub fn seed_curves<T: Scalar>(bev: &BevMap<T>, cfg: &SeedConfig) -> Result<Vec<CurveParams<T>>> {
    cfg.validate()?;
    let spec = &bev.spec;
    let (w, h) = (spec.width_px as usize, spec.height_px as usize);
    let mut lit: Vec<T> = bev.intensity().iter().zip(bev.density()).filter(|(_, &d)| d > T::zero()).map(|(&r, _)| r).collect();
    if lit.is_empty() {
        return Ok(Vec::new());
    }
    lit.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let threshold = lit[((lit.len() - 1) as f64 * cfg.quantile).floor() as usize];
    let mask: Vec<bool> = bev.intensity().iter().zip(bev.density()).map(|(&r, &d)| d > T::zero() && r > threshold).collect();

    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if !mask[start] || seen[start] {
            continue;
        }
        let blob = flood(start, w, h, &mask, &mut seen);
        if blob.len() < cfg.min_cells {
            continue;
        }
        let pts: Vec<Vec3<T>> = blob
            .iter()
            .map(|&i| {
                let (col, row) = ((i % w) as u32, (i / w) as u32);
                spec.cell_center(col, row).extend(bev.min_height()[i])
            })
            .collect();
        let Some(line) = centerline(&pts, cast(cfg.bin)) else { continue };
        if line.length() < cast(cfg.min_length) {
            continue;
        }
        match fit_curve(&line) {
            Ok(fit) => out.push(fit.params),
            Err(e) => log::debug!("skipping blob at cell {start}: {e}"),
        }
    }
    Ok(out)
}

fn flood(start: usize, w: usize, h: usize, mask: &[bool], seen: &mut [bool]) -> Vec<usize> {
    let mut blob = Vec::new();
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(i) = queue.pop_front() {
        blob.push(i);
        let (c, r) = ((i % w) as isize, (i / w) as isize);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (nc, nr) = (c + dc, r + dr);
                if nc < 0 || nr < 0 || nc >= w as isize || nr >= h as isize {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    blob
}

/// Means of `pts` in consecutive bins along their principal planar axis.
fn centerline<T: Scalar>(pts: &[Vec3<T>], bin: T) -> Option<Polyline3<T>> {
    let n = T::from_usize(pts.len()).unwrap();
    let mean = pts.iter().fold(Vec2::zero(), |a, p| a + p.xy()) / n;
    let (mut sxx, mut sxy, mut syy) = (T::zero(), T::zero(), T::zero());
    for p in pts {
        let d = p.xy() - mean;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let angle = T::lit(0.5) * (T::lit(2.0) * sxy).atan2(sxx - syy);
    let axis = Vec2::new(angle.cos(), angle.sin());
    let s: Vec<T> = pts.iter().map(|p| (p.xy() - mean).dot(axis)).collect();
    let lo = s.iter().copied().fold(T::infinity(), T::min);
    let bins = ((s.iter().copied().fold(T::neg_infinity(), T::max) - lo) / bin).floor().to_usize()? + 1;
    let mut acc = vec![(Vec3::zero(), 0usize); bins];
    for (p, &si) in pts.iter().zip(&s) {
        let k = (((si - lo) / bin).floor().to_usize().unwrap_or(0)).min(bins - 1);
        acc[k].0 += *p;
        acc[k].1 += 1;
    }
    let line: Vec<Vec3<T>> =
        acc.into_iter().filter(|(_, c)| *c > 0).map(|(sum, c)| sum / T::from_usize(c).unwrap()).collect();
    Polyline3::from_points_dedup(line).ok()
}
