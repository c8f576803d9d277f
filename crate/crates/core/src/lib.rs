//! Depth evaluation, pose estimation, reconstruction and coverage analysis
//! for endoscopic video, plus a synthetic colon generator used to produce
//! ground truth for all of them.
//!
//! Numerical modules are generic over the scalar type (`f32` or `f64`);
//! the aliases below fix the common choices.

pub mod bundle_adjust;
pub mod coverage;
pub mod depth_eval;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod pipeline;
pub mod preprocess;
pub mod reconstruct;
pub mod scalar;
pub mod synthcolon;

pub use error::{Error, Result};
pub use nalgebra;
pub use scalar::Real;

pub type Pose64 = geometry::Pose<f64>;
pub type Pose32 = geometry::Pose<f32>;
pub type Intrinsics64 = geometry::CameraIntrinsics<f64>;
pub type Intrinsics32 = geometry::CameraIntrinsics<f32>;
pub type DepthFrame64 = depth_eval::DepthFrame<f64>;
pub type DepthFrame32 = depth_eval::DepthFrame<f32>;
pub type DepthSequence64 = depth_eval::DepthSequence<f64>;
pub type DepthSequence32 = depth_eval::DepthSequence<f32>;
pub type TrackSet64 = bundle_adjust::TrackSet<f64>;
pub type TrackSet32 = bundle_adjust::TrackSet<f32>;
pub type BaProblem64 = bundle_adjust::BaProblem<f64>;
pub type BaProblem32 = bundle_adjust::BaProblem<f32>;
