//! Synthetic scenes with known ground truth, and point clouds drawn from
//! them.
//!
//! Lanes in one scene share a heading `d` and a lateral profile `h(t)` with
//! `h(0) = h(1) = 0`; they differ by translation across `d`. The road is a
//! plane sloping along `d` only. Each lane is then exactly an adaptive-axis
//! cubic whose chord runs along `d`, so the ground truth is representable
//! without approximation error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bev::{CloudPoint, GridSpec};
use crate::curve::CurveParams;
use crate::error::{Error, Result};
use crate::geom::{Polyline3, Vec2, Vec3};
use crate::scalar::{cast, Scalar};

/// Most lanes a region may hold.
pub const MAX_LANES: usize = 8;

/// Scene generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub lanes_min: usize,
    pub lanes_max: usize,
    /// Largest deviation of the common heading from +y, radians.
    pub heading_max: f64,
    pub length_min: f64,
    pub length_max: f64,
    /// Bound on the cubic profile coefficients, meters; sets curvature.
    pub lateral_amp: f64,
    /// Distance between neighbouring lanes, meters.
    pub spacing: f64,
    /// Probability of adding one forking (split) or joining (merge) lane.
    pub split_merge_prob: f64,
    /// Largest road grade along the heading.
    pub grade_max: f64,
    /// Keep-out band at the region border, meters.
    pub margin: f64,
    /// Vertex spacing of the stored polylines, meters.
    pub point_spacing: f64,
    pub region: GridSpec<f64>,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            lanes_min: 3,
            lanes_max: 6,
            heading_max: 0.35,
            length_min: 16.0,
            length_max: 22.0,
            lateral_amp: 1.5,
            spacing: 3.5,
            split_merge_prob: 0.0,
            grade_max: 0.03,
            margin: 0.5,
            point_spacing: 0.25,
            region: default_region(),
            seed: 0,
        }
    }
}

/// 25×25 m at 0.03125 m/px, centered on the origin.
pub fn default_region() -> GridSpec<f64> {
    GridSpec { origin: Vec2::new(-12.5, -12.5), ..GridSpec::default() }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lanes_min > self.lanes_max || self.lanes_max > MAX_LANES {
            return Err(Error::invalid(format!("lane count range must satisfy min <= max <= {MAX_LANES}")));
        }
        let positive = [self.length_min, self.spacing, self.point_spacing];
        if positive.iter().any(|v| !(*v > 0.0)) || self.length_max < self.length_min {
            return Err(Error::invalid("lengths and spacings must be positive with length_min <= length_max"));
        }
        let nonneg = [self.heading_max, self.lateral_amp, self.grade_max, self.margin];
        if nonneg.iter().any(|v| !(*v >= 0.0)) || !(0.0..=1.0).contains(&self.split_merge_prob) {
            return Err(Error::invalid("ranges must be non-negative and probabilities in [0, 1]"));
        }
        self.region.validate()
    }
}

/// Road surface `z = z0 + grade·(d · (xy − anchor))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadPlane {
    pub z0: f64,
    pub grade: f64,
    pub heading: Vec2<f64>,
    pub anchor: Vec2<f64>,
}

impl RoadPlane {
    pub fn flat() -> Self {
        RoadPlane { z0: 0.0, grade: 0.0, heading: Vec2::new(0.0, 1.0), anchor: Vec2::zero() }
    }

    pub fn height(&self, p: Vec2<f64>) -> f64 {
        self.z0 + self.grade * self.heading.dot(p - self.anchor)
    }
}

/// Ground-truth lanes, their region and (optionally) a point cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Scene<T> {
    #[serde(with = "lanes_serde")]
    pub lanes: Vec<Polyline3<T>>,
    pub region: GridSpec<T>,
    pub road: RoadPlane,
    /// File holding the cloud when the scene is stored on disk.
    #[serde(default)]
    pub cloud_file: Option<String>,
    #[serde(skip)]
    pub cloud: Vec<CloudPoint<T>>,
}

mod lanes_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Lane {
        points: Vec<[f64; 3]>,
    }

    pub fn serialize<T: Scalar, S: Serializer>(lanes: &[Polyline3<T>], s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<Lane> =
            lanes.iter().map(|l| Lane { points: l.points().iter().map(|p| p.cast::<f64>().to_array()).collect() }).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Polyline3<T>>, D::Error> {
        let v: Vec<Lane> = Vec::deserialize(d)?;
        v.into_iter()
            .map(|l| Polyline3::new(l.points.into_iter().map(|p| Vec3::from_array(p).cast()).collect()).map_err(serde::de::Error::custom))
            .collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Shared lane geometry for one scene.
struct Layout {
    heading: Vec2<f64>,
    normal: Vec2<f64>,
    length: f64,
    a: f64,
    b: f64,
    starts: Vec<Vec2<f64>>,
    road: RoadPlane,
}

impl Layout {
    fn lateral(&self, t: f64) -> f64 {
        self.a * (t * t * t - t) + self.b * (t * t - t)
    }

    fn point(&self, start: Vec2<f64>, t: f64) -> Vec3<f64> {
        let xy = start + self.heading * (t * self.length) + self.normal * self.lateral(t);
        xy.extend(self.road.height(xy))
    }

    fn curve(&self, start: Vec2<f64>) -> CurveParams<f64> {
        // lateral part a(t³ − t) + b(t² − t) along the normal
        let n = self.normal.extend(0.0);
        let p_s = self.point(start, 0.0);
        let p_e = self.point(start, 1.0);
        CurveParams::from_free(n * self.a, n * self.b, p_s, p_e)
    }

    fn count(&self, spacing: f64) -> usize {
        ((self.length / spacing).ceil() as usize).max(1) + 1
    }

    fn polyline(&self, start: Vec2<f64>, spacing: f64) -> Result<Polyline3<f64>> {
        let n = self.count(spacing);
        Polyline3::new((0..n).map(|i| self.point(start, i as f64 / (n - 1) as f64)).collect())
    }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Lane that follows `base` for a shared stretch and then moves sideways by
/// `offset` (split), or the reverse (merge).
fn forked(layout: &Layout, start: Vec2<f64>, offset: f64, t_fork: f64, merge: bool, spacing: f64) -> Result<Polyline3<f64>> {
    let n = layout.count(spacing);
    let pts = (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            let u = if merge { (t_fork - t) / t_fork } else { (t - t_fork) / (1.0 - t_fork) };
            let base = layout.point(start, t);
            let xy = base.xy() + layout.normal * (offset * smoothstep(u));
            xy.extend(layout.road.height(xy))
        })
        .collect();
    Polyline3::new(pts)
}

/// Generated scene plus the exact cubic of every regular lane (forked lanes
/// have none).
pub struct GeneratedScene {
    pub scene: Scene<f64>,
    pub curves: Vec<Option<CurveParams<f64>>>,
}

/// Random scene per `cfg`, deterministic in `cfg.seed`.
pub fn generate_scene(cfg: &SceneConfig) -> Result<GeneratedScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = rng.random_range(cfg.lanes_min..=cfg.lanes_max);
    let region = cfg.region;
    let lo = region.origin + Vec2::new(cfg.margin, cfg.margin);
    let hi = region.upper_right() - Vec2::new(cfg.margin, cfg.margin);
    let room = (hi - lo).x.min((hi - lo).y);
    if n > 1 && (n - 1) as f64 * cfg.spacing > room {
        return Err(Error::Infeasible(format!("{n} lanes at {} m spacing do not fit in {room} m", cfg.spacing)));
    }
    let fork = n > 0 && n < MAX_LANES && rng.random_bool(cfg.split_merge_prob);
    let inside = |p: Vec3<f64>| p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
    let center = region.origin + region.extent() / 2.0;

    for _ in 0..1000 {
        let phi = uniform(&mut rng, -cfg.heading_max, cfg.heading_max);
        let heading = Vec2::new(-phi.sin(), phi.cos());
        let normal = Vec2::new(phi.cos(), phi.sin());
        let length = uniform(&mut rng, cfg.length_min, cfg.length_max);
        let a = uniform(&mut rng, -cfg.lateral_amp, cfg.lateral_amp);
        let b = uniform(&mut rng, -cfg.lateral_amp, cfg.lateral_amp);
        let shift = Vec2::new(uniform(&mut rng, -2.0, 2.0), uniform(&mut rng, -2.0, 2.0));
        let mid = center + shift - heading * (length / 2.0);
        let starts: Vec<Vec2<f64>> =
            (0..n).map(|k| mid + normal * ((k as f64 - (n as f64 - 1.0) / 2.0) * cfg.spacing)).collect();
        let road = RoadPlane {
            z0: uniform(&mut rng, -0.5, 0.5),
            grade: uniform(&mut rng, -cfg.grade_max, cfg.grade_max),
            heading,
            anchor: center,
        };
        let layout = Layout { heading, normal, length, a, b, starts, road };
        let mut lanes = Vec::with_capacity(n + 1);
        let mut curves = Vec::with_capacity(n + 1);
        for &s in &layout.starts {
            lanes.push(layout.polyline(s, cfg.point_spacing)?);
            curves.push(Some(layout.curve(s)));
        }
        if fork {
            // new lane beside an outer lane, sharing at least 2 m with it
            let outer = if rng.random_bool(0.5) { 0 } else { n - 1 };
            let side = if outer == 0 { -1.0 } else { 1.0 };
            let min_share = (2.5 / length).min(0.45);
            let t_fork = uniform(&mut rng, min_share, 0.5);
            let merge = rng.random_bool(0.5);
            let t_fork = if merge { 1.0 - t_fork } else { t_fork };
            lanes.push(forked(&layout, layout.starts[outer], side * cfg.spacing, t_fork, merge, cfg.point_spacing)?);
            curves.push(None);
        }
        if lanes.iter().all(|l| l.points().iter().all(|&p| inside(p))) {
            let scene = Scene {
                lanes: lanes.iter().map(|l| l.cast()).collect(),
                region,
                road,
                cloud_file: None,
                cloud: Vec::new(),
            };
            return Ok(GeneratedScene { scene, curves });
        }
    }
    Err(Error::Infeasible("no lane layout fits the region after 1000 draws".into()))
}

/// Point-cloud synthesis settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudConfig {
    /// Road returns per square meter.
    pub road_density: f64,
    /// Paint returns per square meter of painted area.
    pub paint_density: f64,
    pub paint_half_width: f64,
    pub paint_intensity_mean: f64,
    pub paint_intensity_sigma: f64,
    pub road_intensity_mean: f64,
    pub road_intensity_sigma: f64,
    pub z_noise: f64,
    pub seed: u64,
}

impl Default for CloudConfig {
    fn default() -> Self {
        CloudConfig {
            road_density: 50.0,
            paint_density: 3000.0,
            paint_half_width: 0.075,
            paint_intensity_mean: 80.0,
            paint_intensity_sigma: 10.0,
            road_intensity_mean: 10.0,
            road_intensity_sigma: 5.0,
            z_noise: 0.01,
            seed: 0,
        }
    }
}

impl CloudConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            self.road_density,
            self.paint_density,
            self.paint_half_width,
            self.paint_intensity_sigma,
            self.road_intensity_sigma,
            self.z_noise,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("cloud densities and spreads must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Uniform road returns over the region plus dense, bright returns within
/// `paint_half_width` of every lane; z from the road or lane plus noise.
pub fn synthesize_cloud<T: Scalar>(scene: &Scene<T>, cfg: &CloudConfig) -> Result<Vec<CloudPoint<T>>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let z_noise = Normal::new(0.0, cfg.z_noise).map_err(|e| Error::invalid(e.to_string()))?;
    let road_r = Normal::new(cfg.road_intensity_mean, cfg.road_intensity_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let paint_r = Normal::new(cfg.paint_intensity_mean, cfg.paint_intensity_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let region: GridSpec<f64> = GridSpec {
        origin: scene.region.origin.cast(),
        width_px: scene.region.width_px,
        height_px: scene.region.height_px,
        resolution: scene.region.resolution.value_f64(),
    };
    let (lo, ext) = (region.origin, region.extent());
    let mut out = Vec::new();
    let mut push = |x: f64, y: f64, z: f64, r: f64| {
        out.push(CloudPoint { x: cast(x), y: cast(y), z: cast(z), r: cast(r.max(0.0)) });
    };

    let road_count = (cfg.road_density * ext.x * ext.y).round() as usize;
    for _ in 0..road_count {
        let x = lo.x + ext.x * rng.random::<f64>();
        let y = lo.y + ext.y * rng.random::<f64>();
        if !region.contains(Vec2::new(x, y)) {
            continue;
        }
        let z = scene.road.height(Vec2::new(x, y)) + z_noise.sample(&mut rng);
        push(x, y, z, road_r.sample(&mut rng));
    }

    if cfg.paint_density > 0.0 && cfg.paint_half_width > 0.0 {
        for lane in &scene.lanes {
            let lane: Polyline3<f64> = lane.cast();
            let cum = lane.cumulative_lengths();
            let total = cum[cum.len() - 1];
            let count = (cfg.paint_density * total * 2.0 * cfg.paint_half_width).round() as usize;
            for _ in 0..count {
                let s = total * rng.random::<f64>();
                let base = lane.point_at_with(&cum, s);
                let tangent = lane.heading_at(&cum, s);
                let normal = Vec2::new(-tangent.y, tangent.x);
                let off = cfg.paint_half_width * (2.0 * rng.random::<f64>() - 1.0);
                let xy = base.xy() + normal * off;
                let z = base.z + z_noise.sample(&mut rng);
                let r = paint_r.sample(&mut rng);
                if region.contains(xy) {
                    push(xy.x, xy.y, z, r);
                }
            }
        }
    }
    Ok(out)
}
