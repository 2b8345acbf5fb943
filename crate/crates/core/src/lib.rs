//! Hierarchical 3D lane geometry.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anchor;
pub mod assignment;
pub mod bev;
pub mod config;
pub mod curve;
pub mod dual;
pub mod error;
pub mod eval;
pub mod fit;
pub mod geom;
pub mod io;
pub mod linalg;
pub mod local;
pub mod pipeline;
pub mod scalar;
pub mod synth;

#[cfg(test)]
mod testutil;

pub use dual::{Dual, Dual64};
pub use error::{Error, Result};
pub use geom::{Polyline3, Vec2, Vec3};
pub use scalar::Scalar;

pub use anchor::AnchorCell;
pub use bev::{BevMap, CloudPoint, GridSpec};
pub use config::RunConfig;
pub use curve::CurveParams;
pub use eval::EvalReport;
pub use fit::{FitConfig, FitProblem, ModelState};
pub use local::{Gauss2, SegmentParams};
pub use synth::Scene;

/// Double-precision instantiations.
pub type CurveParams64 = CurveParams<f64>;
pub type SegmentParams64 = SegmentParams<f64>;
pub type Gauss2F64 = Gauss2<f64>;
pub type Polyline64 = Polyline3<f64>;
pub type CloudPoint64 = CloudPoint<f64>;
pub type GridSpec64 = GridSpec<f64>;
pub type BevMap64 = BevMap<f64>;
pub type AnchorCell64 = AnchorCell<f64>;
pub type ModelState64 = ModelState<f64>;
pub type FitProblem64 = FitProblem<f64>;
pub type Scene64 = Scene<f64>;

/// Single-precision instantiations.
pub type CurveParams32 = CurveParams<f32>;
pub type SegmentParams32 = SegmentParams<f32>;
pub type Gauss2F32 = Gauss2<f32>;
pub type Polyline32 = Polyline3<f32>;
pub type CloudPoint32 = CloudPoint<f32>;
pub type GridSpec32 = GridSpec<f32>;
pub type BevMap32 = BevMap<f32>;
pub type AnchorCell32 = AnchorCell<f32>;
pub type ModelState32 = ModelState<f32>;
pub type FitProblem32 = FitProblem<f32>;
