//! Point clouds, trajectory-aligned cropping, and the 4-channel BEV raster.
//!
//! Channels per cell: mean intensity, point count, population variance of
//! z, minimum z. Empty cells hold 0 in every channel. Cells are half-open
//! `[lo, hi)` on both axes; row 0 is the lowest y.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Polyline3, Vec2};
use crate::scalar::Scalar;

/// Default raster size in pixels per side.
pub const DEFAULT_GRID_PX: u32 = 800;
/// Default meters per pixel (25 m over 800 px).
pub const DEFAULT_RESOLUTION: f64 = 0.03125;
/// Number of raster channels.
pub const CHANNELS: usize = 4;

/// One LiDAR return.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudPoint<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    /// Reflective intensity, ≥ 0.
    pub r: T,
}

impl<T: Scalar> CloudPoint<T> {
    pub fn new(x: T, y: T, z: T, r: T) -> Result<Self> {
        let p = CloudPoint { x, y, z, r };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.r.is_finite()) {
            return Err(Error::invalid("point coordinates must be finite"));
        }
        if self.r < T::zero() {
            return Err(Error::invalid("intensity must be non-negative"));
        }
        Ok(())
    }

    pub fn xy(&self) -> Vec2<T> {
        Vec2::new(self.x, self.y)
    }
}

/// Metric georeferencing of a raster.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec<T> {
    /// Lower-left corner, meters.
    pub origin: Vec2<T>,
    pub width_px: u32,
    pub height_px: u32,
    /// Meters per pixel.
    pub resolution: T,
}

impl<T: Scalar> Default for GridSpec<T> {
    fn default() -> Self {
        GridSpec {
            origin: Vec2::zero(),
            width_px: DEFAULT_GRID_PX,
            height_px: DEFAULT_GRID_PX,
            resolution: T::lit(DEFAULT_RESOLUTION),
        }
    }
}

impl<T: Scalar> GridSpec<T> {
    pub fn new(origin: Vec2<T>, width_px: u32, height_px: u32, resolution: T) -> Result<Self> {
        let g = GridSpec { origin, width_px, height_px, resolution };
        g.validate()?;
        Ok(g)
    }

    /// Square grid of metric side `side` centered on `center`.
    pub fn centered(center: Vec2<T>, side: T, resolution: T) -> Result<Self> {
        if !(side > T::zero()) || !(resolution > T::zero()) {
            return Err(Error::invalid("grid side and resolution must be positive"));
        }
        let px = (side / resolution).round().to_u32().ok_or_else(|| Error::invalid("grid too large"))?.max(1);
        let half = resolution * T::from_u32(px).unwrap() / T::lit(2.0);
        Self::new(Vec2::new(center.x - half, center.y - half), px, px, resolution)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        if !(self.resolution > T::zero()) || !self.resolution.is_finite() {
            return Err(Error::invalid("grid resolution must be positive"));
        }
        if !self.origin.x.is_finite() || !self.origin.y.is_finite() {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.width_px as usize * self.height_px as usize
    }

    /// Metric width and height.
    pub fn extent(&self) -> Vec2<T> {
        Vec2::new(
            self.resolution * T::from_u32(self.width_px).unwrap(),
            self.resolution * T::from_u32(self.height_px).unwrap(),
        )
    }

    pub fn upper_right(&self) -> Vec2<T> {
        self.origin + self.extent()
    }

    /// Whether `p` lies in the half-open metric rectangle.
    pub fn contains(&self, p: Vec2<T>) -> bool {
        self.cell_of(p).is_some()
    }

    /// `(col, row)` of the cell holding `p`, if inside.
    pub fn cell_of(&self, p: Vec2<T>) -> Option<(u32, u32)> {
        let fx = ((p.x - self.origin.x) / self.resolution).floor();
        let fy = ((p.y - self.origin.y) / self.resolution).floor();
        if !(fx >= T::zero() && fy >= T::zero()) {
            return None;
        }
        let (col, row) = (fx.to_u64()?, fy.to_u64()?);
        (col < self.width_px as u64 && row < self.height_px as u64).then_some((col as u32, row as u32))
    }

    /// Row-major flat index (row 0 = lowest y).
    pub fn index(&self, col: u32, row: u32) -> usize {
        row as usize * self.width_px as usize + col as usize
    }

    pub fn cell_center(&self, col: u32, row: u32) -> Vec2<T> {
        let half = T::lit(0.5);
        Vec2::new(
            self.origin.x + (T::from_u32(col).unwrap() + half) * self.resolution,
            self.origin.y + (T::from_u32(row).unwrap() + half) * self.resolution,
        )
    }
}

/// Rasterized 4-channel BEV map.
#[derive(Clone, Debug, PartialEq)]
pub struct BevMap<T> {
    pub spec: GridSpec<T>,
    /// Mean intensity, count, z variance, min z; each row-major.
    pub channels: [Vec<T>; CHANNELS],
}

impl<T: Scalar> BevMap<T> {
    pub fn empty(spec: GridSpec<T>) -> Self {
        let n = spec.cells();
        BevMap { spec, channels: std::array::from_fn(|_| vec![T::zero(); n]) }
    }

    pub fn intensity(&self) -> &[T] {
        &self.channels[0]
    }

    pub fn density(&self) -> &[T] {
        &self.channels[1]
    }

    pub fn variance(&self) -> &[T] {
        &self.channels[2]
    }

    pub fn min_height(&self) -> &[T] {
        &self.channels[3]
    }

    /// All four channel values at `(col, row)`.
    pub fn cell(&self, col: u32, row: u32) -> [T; CHANNELS] {
        let i = self.spec.index(col, row);
        std::array::from_fn(|c| self.channels[c][i])
    }

    /// Divides the density channel by `scale` (optional normalization).
    pub fn normalize_density(&mut self, scale: T) {
        for v in self.channels[1].iter_mut() {
            *v /= scale;
        }
    }
}

/// Canonical point order within the raster: by cell, then by coordinates.
fn canonical_order<T: Scalar>(a: &(usize, CloudPoint<T>), b: &(usize, CloudPoint<T>)) -> std::cmp::Ordering {
    let key = |p: &CloudPoint<T>| [p.x.value_f64(), p.y.value_f64(), p.z.value_f64(), p.r.value_f64()];
    a.0.cmp(&b.0).then_with(|| {
        let (ka, kb) = (key(&a.1), key(&b.1));
        ka.iter().zip(&kb).map(|(u, v)| u.total_cmp(v)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    })
}

/// Accumulates points per cell. Points are first sorted by cell index and
/// then by (x, y, z, r), so sums are taken in an order independent of the
/// input order. Per cell: `mean r = Σr / n`, `min z`, and variance by two
/// passes `Σ(z − z̄)² / n` with `z̄ = Σz / n`. Out-of-grid points are dropped.
pub fn rasterize<T: Scalar>(points: &[CloudPoint<T>], spec: &GridSpec<T>) -> BevMap<T> {
    let mut keyed: Vec<(usize, CloudPoint<T>)> = points
        .iter()
        .filter_map(|p| spec.cell_of(p.xy()).map(|(c, r)| (spec.index(c, r), *p)))
        .collect();
    keyed.sort_by(canonical_order);
    let mut map = BevMap::empty(*spec);
    let mut start = 0;
    while start < keyed.len() {
        let idx = keyed[start].0;
        let end = start + keyed[start..].partition_point(|e| e.0 == idx);
        let run = &keyed[start..end];
        let [c_r, c_n, c_var, c_min] = cell_stats(run.iter().map(|e| &e.1));
        map.channels[0][idx] = c_r;
        map.channels[1][idx] = c_n;
        map.channels[2][idx] = c_var;
        map.channels[3][idx] = c_min;
        start = end;
    }
    map
}

/// Channel values for one non-empty cell, summing in iteration order.
pub fn cell_stats<'a, T: Scalar>(pts: impl Iterator<Item = &'a CloudPoint<T>> + Clone) -> [T; CHANNELS] {
    let mut n = T::zero();
    let mut sum_r = T::zero();
    let mut sum_z = T::zero();
    let mut min_z = T::infinity();
    for p in pts.clone() {
        n += T::one();
        sum_r += p.r;
        sum_z += p.z;
        min_z = min_z.min(p.z);
    }
    let mean_z = sum_z / n;
    let mut ss = T::zero();
    for p in pts {
        let d = p.z - mean_z;
        ss += d * d;
    }
    [sum_r / n, n, ss / n, min_z]
}

/// Square regions of side `side` centered every `stride` meters of planar arc
/// length along `trajectory` (including both ends when they fall on the
/// stride), each with the points inside its half-open square.
pub fn crop_regions<T: Scalar>(
    cloud: &[CloudPoint<T>],
    trajectory: &Polyline3<T>,
    side: T,
    stride: T,
    resolution: T,
) -> Result<Vec<(GridSpec<T>, Vec<CloudPoint<T>>)>> {
    if !(side > T::zero()) || !(stride > T::zero()) || !(resolution > T::zero()) {
        return Err(Error::invalid("side, stride and resolution must be positive"));
    }
    let flat: Vec<_> = trajectory.points().iter().map(|p| p.xy().extend(T::zero())).collect();
    let flat = Polyline3::from_points_dedup(flat).map_err(|_| Error::Degenerate("trajectory has zero planar length".into()))?;
    let cum = flat.cumulative_lengths();
    let total = cum[cum.len() - 1];
    let eps = T::lit(1e-9) * total.max(T::one());
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let s = stride * T::from_usize(k).unwrap();
        if s > total + eps {
            break;
        }
        let c = flat.point_at_with(&cum, s.min(total)).xy();
        let spec = GridSpec::centered(c, side, resolution)?;
        let inside = cloud.iter().copied().filter(|p| spec.contains(p.xy())).collect();
        out.push((spec, inside));
        k += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn pt(x: f64, y: f64, z: f64, r: f64) -> CloudPoint<f64> {
        CloudPoint { x, y, z, r }
    }

    fn small_spec() -> GridSpec<f64> {
        GridSpec::new(Vec2::new(-2.0, -1.0), 40, 20, 0.1).unwrap()
    }

    #[test]
    fn single_and_pair_cells() {
        let spec = small_spec();
        let map = rasterize(&[pt(0.05, 0.05, 0.5, 7.0)], &spec);
        let (c, r) = spec.cell_of(Vec2::new(0.05, 0.05)).unwrap();
        assert_eq!(map.cell(c, r), [7.0, 1.0, 0.0, 0.5]);
        let map = rasterize(&[pt(0.01, 0.02, 1.0, 2.0), pt(0.03, 0.04, 3.0, 4.0)], &spec);
        assert_eq!(map.cell(c, r), [3.0, 2.0, 1.0, 1.0]);
        // every other cell keeps the empty sentinel
        let nonzero = (0..4).map(|ch| map.channels[ch].iter().filter(|v| **v != 0.0).count()).max().unwrap();
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn half_open_cells_and_dropped_points() {
        let spec = small_spec();
        assert_eq!(spec.cell_of(Vec2::new(-2.0, -1.0)), Some((0, 0)));
        assert_eq!(spec.cell_of(Vec2::new(2.0, 0.0)), None);
        assert_eq!(spec.cell_of(Vec2::new(0.0, 1.0)), None);
        assert_eq!(spec.cell_of(Vec2::new(-2.0000001, 0.0)), None);
        let map = rasterize(&[pt(5.0, 0.0, 0.0, 1.0), pt(f64::NAN, 0.0, 0.0, 1.0)], &spec);
        assert_eq!(map.density().iter().sum::<f64>(), 0.0);
    }

    fn random_cloud(rng: &mut impl Rng, n: usize) -> Vec<CloudPoint<f64>> {
        (0..n)
            .map(|_| pt(rng.random_range(-2.5..2.5), rng.random_range(-1.5..1.5), rng.random_range(-0.3..0.3), rng.random_range(0.0..100.0)))
            .collect()
    }

    #[test]
    fn matches_accumulation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = small_spec();
        let cloud = random_cloud(&mut rng, 10_000);
        let map = rasterize(&cloud, &spec);
        // oracle: per-cell buckets sorted independently, straightforward sums
        let mut buckets: HashMap<(u32, u32), Vec<CloudPoint<f64>>> = HashMap::new();
        for p in &cloud {
            let fx = ((p.x + 2.0) / 0.1).floor();
            let fy = ((p.y + 1.0) / 0.1).floor();
            if (0.0..40.0).contains(&fx) && (0.0..20.0).contains(&fy) {
                buckets.entry((fx as u32, fy as u32)).or_default().push(*p);
            }
        }
        let mut in_bounds = 0.0;
        for row in 0..20 {
            for col in 0..40 {
                let got = map.cell(col, row);
                match buckets.get_mut(&(col, row)) {
                    None => assert_eq!(got, [0.0; 4]),
                    Some(b) => {
                        b.sort_by(|a, c| {
                            a.x.total_cmp(&c.x).then(a.y.total_cmp(&c.y)).then(a.z.total_cmp(&c.z)).then(a.r.total_cmp(&c.r))
                        });
                        let n = b.len() as f64;
                        let mut sr = 0.0;
                        let mut sz = 0.0;
                        for p in b.iter() {
                            sr += p.r;
                            sz += p.z;
                        }
                        let mz = sz / n;
                        let mut ss = 0.0;
                        for p in b.iter() {
                            ss += (p.z - mz) * (p.z - mz);
                        }
                        let mn = b.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
                        assert_eq!(got, [sr / n, n, ss / n, mn]);
                        assert!(got[2] >= 0.0 && got[3] <= mz);
                        in_bounds += n;
                    }
                }
            }
        }
        assert_eq!(map.density().iter().sum::<f64>(), in_bounds);
    }

    #[test]
    fn order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = small_spec();
        let mut cloud = random_cloud(&mut rng, 3000);
        let a = rasterize(&cloud, &spec);
        cloud.shuffle(&mut rng);
        let b = rasterize(&cloud, &spec);
        assert_eq!(a, b);
    }

    #[test]
    fn crop_straight_trajectory() {
        let traj = Polyline3::new(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 26.0, 0.0)]).unwrap();
        let regions = crop_regions::<f64>(&[], &traj, 25.0, 13.0, 0.03125).unwrap();
        assert_eq!(regions.len(), 3);
        for (k, (spec, _)) in regions.iter().enumerate() {
            let center = spec.origin + spec.extent() / 2.0;
            assert!((center - Vec2::new(0.0, 13.0 * k as f64)).norm() < 1e-12);
            assert_eq!(spec.width_px, 800);
        }
        // a border point lands in exactly one of two touching regions
        let traj = Polyline3::new(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0)]).unwrap();
        let border = pt(0.0, 1.0, 0.0, 1.0);
        let regions = crop_regions(&[border], &traj, 2.0, 2.0, 0.5).unwrap();
        assert_eq!(regions.len(), 2);
        assert_eq!(regions.iter().map(|r| r.1.len()).sum::<usize>(), 1);
        assert_eq!(regions[1].1.len(), 1);
        // vertical trajectory has no planar extent
        let up = Polyline3::new(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 2.0)]).unwrap();
        assert!(matches!(crop_regions::<f64>(&[], &up, 2.0, 1.0, 0.5), Err(Error::Degenerate(_))));
    }

    #[test]
    fn crop_matches_containment_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud: Vec<_> = (0..5000)
            .map(|_| pt(rng.random_range(-20.0..20.0), rng.random_range(-10.0..60.0), 0.0, 1.0))
            .collect();
        let traj = Polyline3::new(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(3.0, 20.0, 0.0), Vec3::new(-4.0, 45.0, 0.0)]).unwrap();
        let regions = crop_regions(&cloud, &traj, 25.0, 13.0, 0.03125).unwrap();
        let mut total = 0;
        for (spec, pts) in &regions {
            let (lo, hi) = (spec.origin, spec.upper_right());
            let brute = cloud.iter().filter(|p| p.x >= lo.x && p.x < hi.x && p.y >= lo.y && p.y < hi.y).count();
            assert_eq!(brute, pts.len());
            total += pts.len();
        }
        let brute_total: usize = regions
            .iter()
            .map(|(s, _)| {
                let (lo, hi) = (s.origin, s.upper_right());
                cloud.iter().filter(|p| p.x >= lo.x && p.x < hi.x && p.y >= lo.y && p.y < hi.y).count()
            })
            .sum();
        assert_eq!(total, brute_total);
    }
}
