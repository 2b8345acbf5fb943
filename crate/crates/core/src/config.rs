//! Run configuration: every tunable in one flat `key = value` namespace.
//!
//! Sources apply in order defaults, then file text, then explicit overrides;
//! later sources win. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{DEFAULT_SPACING, DEFAULT_THRESHOLDS};
use crate::fit::{FitConfig, SeedConfig};
use crate::synth::{CloudConfig, SceneConfig};

/// Evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub spacing: f64,
    pub thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { spacing: DEFAULT_SPACING, thresholds: DEFAULT_THRESHOLDS.to_vec() }
    }
}

/// Initial-state perturbation for recovery runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    /// Each terminal moves by this distance in a random 3D direction.
    pub terminal: f64,
    /// Multiplier on the free cubic and quadratic coefficients.
    pub scale: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig { terminal: 0.5, scale: 1.2 }
    }
}

/// Everything a run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub cloud: CloudConfig,
    pub fit: FitConfig,
    pub seeding: SeedConfig,
    pub eval: EvalConfig,
    pub perturb: PerturbConfig,
    /// Base seed; per-scene seeds derive from it.
    pub seed: u64,
    /// Number of scenes in batch commands.
    pub scenes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: SceneConfig::default(),
            cloud: CloudConfig::default(),
            fit: FitConfig::default(),
            seeding: SeedConfig::default(),
            eval: EvalConfig::default(),
            perturb: PerturbConfig::default(),
            seed: 0,
            scenes: 1,
        }
    }
}

fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e| Error::invalid(format!("bad value {value:?} for {key}: {e}")))
}

macro_rules! kv_table {
    ($($key:literal => $($path:ident).+),* $(,)?) => {
        /// Every accepted key, in snapshot order.
        pub const KEYS: &[&str] = &[$($key,)* "thresholds"];

        fn set_field(cfg: &mut RunConfig, key: &str, value: &str) -> Result<()> {
            match key {
                $($key => cfg.$($path).+ = parse_value(key, value)?,)*
                "thresholds" => {
                    cfg.eval.thresholds = value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| parse_value(key, s))
                        .collect::<Result<_>>()?
                }
                _ => return Err(Error::invalid(format!("unknown configuration key {key:?}"))),
            }
            Ok(())
        }

        fn get_field(cfg: &RunConfig, key: &str) -> Option<String> {
            match key {
                $($key => Some(cfg.$($path).+.to_string()),)*
                "thresholds" => Some(cfg.eval.thresholds.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")),
                _ => None,
            }
        }
    };
}

kv_table! {
    "seed" => seed,
    "scenes" => scenes,
    "lanes_min" => scene.lanes_min,
    "lanes_max" => scene.lanes_max,
    "heading_max" => scene.heading_max,
    "length_min" => scene.length_min,
    "length_max" => scene.length_max,
    "lateral_amp" => scene.lateral_amp,
    "lane_spacing" => scene.spacing,
    "split_merge_prob" => scene.split_merge_prob,
    "grade_max" => scene.grade_max,
    "margin" => scene.margin,
    "point_spacing" => scene.point_spacing,
    "region_x" => scene.region.origin.x,
    "region_y" => scene.region.origin.y,
    "region_width_px" => scene.region.width_px,
    "region_height_px" => scene.region.height_px,
    "resolution" => scene.region.resolution,
    "road_density" => cloud.road_density,
    "paint_density" => cloud.paint_density,
    "paint_half_width" => cloud.paint_half_width,
    "paint_intensity_mean" => cloud.paint_intensity_mean,
    "paint_intensity_sigma" => cloud.paint_intensity_sigma,
    "road_intensity_mean" => cloud.road_intensity_mean,
    "road_intensity_sigma" => cloud.road_intensity_sigma,
    "z_noise" => cloud.z_noise,
    "lambda1" => fit.lambda1,
    "lambda2" => fit.lambda2,
    "lambda3" => fit.lambda3,
    "lr" => fit.lr,
    "lr_final_ratio" => fit.lr_final_ratio,
    "iterations" => fit.iterations,
    "warmup" => fit.warmup,
    "rematch_every" => fit.rematch_every,
    "conv_tol" => fit.conv_tol,
    "conv_window" => fit.conv_window,
    "divergence_limit" => fit.divergence_limit,
    "slots" => fit.slots,
    "cells_per_lane" => fit.cells_per_lane,
    "cell_size" => fit.cell_size,
    "jitter" => fit.jitter,
    "neg_ratio" => fit.neg_ratio,
    "curvature_gain" => fit.curvature_gain,
    "width" => fit.width,
    "prob_threshold" => fit.prob_threshold,
    "seed_quantile" => seeding.quantile,
    "seed_min_cells" => seeding.min_cells,
    "seed_min_length" => seeding.min_length,
    "seed_bin" => seeding.bin,
    "eval_spacing" => eval.spacing,
    "perturb_terminal" => perturb.terminal,
    "perturb_scale" => perturb.scale,
}

/// Splits `key = value` text into pairs; `#` starts a comment.
pub fn parse_pairs(text: &str, label: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse { location: format!("{label}:{}", i + 1), message: "expected key = value".into() });
        };
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Splits a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::invalid(format!("override {s:?} is not key=value")))
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        set_field(self, key, value)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        get_field(self, key)
    }

    /// Applies `key = value` text; errors carry `label:line`.
    pub fn apply_text(&mut self, text: &str, label: &str) -> Result<()> {
        for (line, k, v) in parse_pairs(text, label)? {
            self.set(&k, &v).map_err(|e| Error::Parse { location: format!("{label}:{line}"), message: e.to_string() })?;
        }
        Ok(())
    }

    /// Defaults, then `file` (text and label), then `overrides`; validated.
    pub fn resolve(file: Option<(&str, &str)>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some((text, label)) = file {
            cfg.apply_text(text, label)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.cloud.validate()?;
        self.fit.validate()?;
        self.seeding.validate()?;
        if !(self.eval.spacing > 0.0) || self.eval.thresholds.is_empty() || self.eval.thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::invalid("eval_spacing and every threshold must be positive, with at least one threshold"));
        }
        if !(self.perturb.terminal >= 0.0) || !self.perturb.scale.is_finite() {
            return Err(Error::invalid("perturb_terminal must be >= 0 and perturb_scale finite"));
        }
        Ok(())
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k).unwrap())).collect()
    }

    /// Seed of scene `index`.
    pub fn scene_seed(&self, index: usize) -> u64 {
        mix_seed(self.seed, index as u64)
    }

    /// Configuration for scene `index`, with derived generator, cloud and
    /// anchor seeds.
    pub fn for_scene(&self, index: usize) -> RunConfig {
        let s = self.scene_seed(index);
        let mut cfg = self.clone();
        cfg.scene.seed = s;
        cfg.cloud.seed = mix_seed(s, 1);
        cfg.fit.seed = mix_seed(s, 2);
        cfg
    }
}
