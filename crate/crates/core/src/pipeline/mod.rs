//! End-to-end run: synthesize a sequence, then evaluate depth, estimate
//! poses, fuse a cloud and measure coverage, with per-stage checks.

pub mod manifest;
pub mod validate;

use std::fmt;
use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use manifest::{manifest_path_for, AtomicFiles, RunManifest, Staging, RUN_MANIFEST_FILE, TOOL_VERSION};
pub use validate::{validate_formats, CheckStatus, FileCheck, FormatReport};

use crate::bundle_adjust::{estimate_trajectory, TrajectoryConfig, WindowSummary};
use crate::coverage::{assess, map_to_image, CoverageConfig, CoverageSummary};
use crate::depth_eval::{evaluate, AlignmentDomain, BootstrapConfig, DepthFrame, DepthSequence, EvaluationReport};
use crate::error::Error;
use crate::geometry::Pose;
use crate::grid::Grid;
use crate::io::{json, ply, png};
use crate::reconstruct::{fuse, voxel_downsample, PointCloud};
use crate::synthcolon::{export_dataset, generate, oracle_tracks, OracleTrackConfig, Phantom, Scene};

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const NUMERICAL: i32 = 4;
    pub const VALIDATION: i32 = 5;
}

/// Exit status for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_) => exit::CONFIG,
        Error::Io { .. } | Error::Format { .. } | Error::Json { .. } => exit::IO,
        Error::NonFinite(_) | Error::BehindCamera { .. } | Error::Numerical(_) => exit::NUMERICAL,
        Error::EmptyMask => exit::VALIDATION,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Render,
    Export,
    Eval,
    Tracks,
    Poses,
    Reconstruct,
    Coverage,
    Manifest,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{stage}: {source}")]
    Failed {
        stage: Stage,
        #[source]
        source: Error,
    },
    #[error("{stage}: check failed: {message}")]
    Check { stage: Stage, message: String },
}

impl PipelineError {
    pub fn stage(&self) -> Stage {
        match self {
            PipelineError::Failed { stage, .. } | PipelineError::Check { stage, .. } => *stage,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Failed { source, .. } => exit_code(source),
            PipelineError::Check { stage: Stage::Poses, .. } => exit::NUMERICAL,
            PipelineError::Check { .. } => exit::VALIDATION,
        }
    }
}

trait StageExt<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T> StageExt<T> for Result<T, Error> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|source| PipelineError::Failed { stage, source })
    }
}

fn check(ok: bool, stage: Stage, message: impl FnOnce() -> String) -> Result<(), PipelineError> {
    if ok {
        Ok(())
    } else {
        Err(PipelineError::Check { stage, message: message() })
    }
}

/// Synthetic prediction for the evaluation stage:
/// `pred = scale * gt * (1 + e) + shift` with `e ~ N(0, relative_noise)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalStageConfig {
    pub scale: f64,
    pub shift: f64,
    pub relative_noise: f64,
    pub domain: AlignmentDomain,
    pub bootstrap: Option<BootstrapConfig>,
    pub seed: u64,
    /// Smallest acceptable aligned delta1.
    pub min_delta1: f64,
}

impl Default for EvalStageConfig {
    fn default() -> Self {
        Self {
            scale: 0.8,
            shift: 5.0,
            relative_noise: 0.02,
            domain: AlignmentDomain::Depth,
            bootstrap: Some(BootstrapConfig {
                n_resamples: 200,
                ..Default::default()
            }),
            seed: 0,
            min_delta1: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructConfig {
    /// Pixel stride when back-projecting.
    pub stride: usize,
    /// Voxel edge for downsampling (mm); 0 keeps every point.
    pub voxel_mm: f64,
    /// Largest acceptable RMS distance of fused points to the phantom wall (mm).
    pub max_surface_rms_mm: f64,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            stride: 2,
            voxel_mm: 0.5,
            max_surface_rms_mm: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub scene: Scene,
    pub eval: EvalStageConfig,
    pub tracks: OracleTrackConfig,
    pub poses: TrajectoryConfig,
    /// Largest acceptable per-frame translation error of estimated poses (mm).
    pub max_translation_error_mm: f64,
    pub reconstruct: ReconstructConfig,
    pub coverage: CoverageConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scene: Scene::default(),
            eval: EvalStageConfig::default(),
            tracks: OracleTrackConfig {
                pixel_noise_sigma: 0.25,
                ..Default::default()
            },
            poses: TrajectoryConfig::default(),
            max_translation_error_mm: 1.0,
            reconstruct: ReconstructConfig::default(),
            coverage: CoverageConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Derives every random stream from one seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scene = self.scene.with_seed(seed);
        self.eval.seed = seed.wrapping_add(2);
        if let Some(b) = &mut self.eval.bootstrap {
            b.seed = seed.wrapping_add(3);
        }
        self.tracks.seed = seed.wrapping_add(4);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSummary {
    pub windows: Vec<WindowSummary>,
    pub max_rotation_error_rad: f64,
    pub max_translation_error_mm: f64,
    pub rms_translation_error_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub n_frames: usize,
    pub escaped_rays: usize,
    pub eval: EvaluationReport,
    pub n_tracks: usize,
    pub poses: PoseSummary,
    pub n_points: usize,
    pub surface_rms_mm: f64,
    pub coverage: CoverageSummary,
}

pub const DATASET_DIR: &str = "dataset";
pub const EVAL_FILE: &str = "eval.json";
pub const TRACKS_FILE: &str = "tracks.jsonl";
pub const ESTIMATED_POSES_FILE: &str = "poses_estimated.json";
pub const POSE_SUMMARY_FILE: &str = "pose_summary.json";
pub const CLOUD_FILE: &str = "cloud.ply";
pub const COVERAGE_IMAGE: &str = "coverage_map.png";
pub const COVERAGE_FILE: &str = "coverage.json";

/// Scaled, shifted and noisy copy of the ground truth.
pub fn perturb_depth(gt: &DepthSequence<f64>, cfg: &EvalStageConfig) -> Result<DepthSequence<f64>, Error> {
    let noise = Normal::new(0.0, cfg.relative_noise).map_err(|_| Error::invalid("relative noise must be non-negative"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let frames = gt
        .frames()
        .iter()
        .map(|f| {
            let values = f.values().as_slice().iter().zip(f.mask().as_slice()).map(|(&d, &m)| {
                if m {
                    cfg.scale * d * (1.0 + noise.sample(&mut rng)) + cfg.shift
                } else {
                    0.0
                }
            });
            let grid = Grid::from_vec(f.width(), f.height(), values.collect()).expect("sized");
            DepthFrame::new(grid, f.mask().clone())
        })
        .collect::<Result<Vec<_>, _>>()?;
    DepthSequence::new(frames)
}

/// RMS signed distance of points (in the frame of `reference`) to the wall.
pub fn surface_rms(phantom: &Phantom, cloud: &PointCloud, reference: &Pose<f64>) -> f64 {
    if cloud.is_empty() {
        return 0.0;
    }
    let sum: f64 = cloud
        .positions()
        .map(|p| {
            let d = phantom.sdf(&reference.transform(p));
            d * d
        })
        .sum();
    (sum / cloud.len() as f64).sqrt()
}

fn intensity_colors(frames: &[crate::synthcolon::RenderedFrame]) -> Vec<Grid<[u8; 3]>> {
    frames
        .iter()
        .map(|f| {
            f.intensity.map(|&x| {
                let g = (x.clamp(0.0, 1.0) * 255.0).round() as u8;
                [g, g, g]
            })
        })
        .collect()
}

/// Runs every stage, writing into `out_dir` only if all of them succeed.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path, seed: Option<u64>) -> Result<(RunManifest, PipelineSummary), PipelineError> {
    let staging = Staging::new(out_dir).at(Stage::Config)?;
    let mut manifest = RunManifest::new("pipeline", config, seed).at(Stage::Config)?;
    let out = staging.path().to_path_buf();
    let summary = run_stages(config, &out)?;
    manifest.summary = serde_json::to_value(&summary).map_err(|e| PipelineError::Failed {
        stage: Stage::Manifest,
        source: Error::invalid(e.to_string()),
    })?;
    let manifest = staging.commit(manifest).at(Stage::Manifest)?;
    Ok((manifest, summary))
}

fn run_stages(config: &PipelineConfig, out: &Path) -> Result<PipelineSummary, PipelineError> {
    log::info!("render: {} frames", config.scene.trajectory.n_frames);
    let seq = generate(&config.scene).map_err(|source| PipelineError::Failed {
        stage: match source {
            Error::InvalidInput(_) => Stage::Config,
            _ => Stage::Render,
        },
        source,
    })?;
    let frames = &seq.rendered.frames;
    let escaped: usize = frames.iter().map(|f| f.depth.width() * f.depth.height() - f.depth.valid_count()).sum();
    check(frames.iter().all(|f| f.depth.valid_count() > 0), Stage::Render, || {
        "a frame has no surface hits".to_string()
    })?;

    log::info!("export");
    export_dataset(frames, &out.join(DATASET_DIR), Some(&config.scene), Some(seq.rendered.exposure)).at(Stage::Export)?;

    log::info!("eval");
    let gt = DepthSequence::new(frames.iter().map(|f| f.depth.clone()).collect())
        .at(Stage::Eval)?
        .cast::<f64>();
    let pred = perturb_depth(&gt, &config.eval).at(Stage::Eval)?;
    let eval = evaluate(&pred, &gt, config.eval.domain, config.eval.bootstrap.as_ref()).at(Stage::Eval)?;
    json::write_json(&out.join(EVAL_FILE), &eval).at(Stage::Eval)?;
    check(eval.metrics.delta1.value >= config.eval.min_delta1, Stage::Eval, || {
        format!("aligned delta1 {} below {}", eval.metrics.delta1.value, config.eval.min_delta1)
    })?;

    log::info!("tracks");
    let tracks = oracle_tracks(frames, &config.tracks).at(Stage::Tracks)?;
    check(!tracks.is_empty(), Stage::Tracks, || "no tracks survived".to_string())?;
    json::write_tracks(&out.join(TRACKS_FILE), &tracks).at(Stage::Tracks)?;

    log::info!("poses: {} tracks", tracks.len());
    let ks: Vec<_> = frames.iter().map(|f| f.intrinsics).collect();
    let estimate = estimate_trajectory(&tracks, &ks, &config.poses).at(Stage::Poses)?;
    json::write_poses(&out.join(ESTIMATED_POSES_FILE), &estimate.poses).at(Stage::Poses)?;
    let reference = frames[0].pose;
    let to_ref = reference.inverse();
    let (mut max_rot, mut max_trans, mut sq) = (0.0f64, 0.0f64, 0.0);
    for (est, f) in estimate.poses.iter().zip(frames) {
        let (angle, dist) = est.distance_to(&to_ref.compose(&f.pose));
        max_rot = max_rot.max(angle);
        max_trans = max_trans.max(dist);
        sq += dist * dist;
    }
    let pose_summary = PoseSummary {
        windows: estimate.windows.clone(),
        max_rotation_error_rad: max_rot,
        max_translation_error_mm: max_trans,
        rms_translation_error_mm: (sq / frames.len() as f64).sqrt(),
    };
    json::write_json(&out.join(POSE_SUMMARY_FILE), &pose_summary).at(Stage::Poses)?;
    check(estimate.windows.iter().all(|w| w.converged), Stage::Poses, || {
        "bundle adjustment did not converge in every window".to_string()
    })?;
    check(max_trans <= config.max_translation_error_mm, Stage::Poses, || {
        format!("translation error {max_trans:.4} mm exceeds {} mm", config.max_translation_error_mm)
    })?;

    log::info!("reconstruct");
    let colors = intensity_colors(frames);
    let labels: Vec<_> = frames.iter().map(|f| f.label.clone()).collect();
    let depth32 = DepthSequence::new(frames.iter().map(|f| f.depth.clone()).collect()).at(Stage::Reconstruct)?;
    let mut cloud = fuse(
        &depth32,
        &estimate.poses,
        &frames[0].intrinsics,
        Some(&colors),
        Some(&labels),
        config.reconstruct.stride,
    )
    .at(Stage::Reconstruct)?;
    if config.reconstruct.voxel_mm > 0.0 {
        cloud = voxel_downsample(&cloud, config.reconstruct.voxel_mm).at(Stage::Reconstruct)?;
    }
    ply::write(&out.join(CLOUD_FILE), &cloud, Default::default()).at(Stage::Reconstruct)?;
    let surface_rms_mm = surface_rms(&seq.phantom, &cloud, &reference);
    check(!cloud.is_empty(), Stage::Reconstruct, || "empty point cloud".to_string())?;
    check(surface_rms_mm <= config.reconstruct.max_surface_rms_mm, Stage::Reconstruct, || {
        format!("fused points are {surface_rms_mm:.4} mm RMS from the wall")
    })?;

    log::info!("coverage: {} points", cloud.len());
    let hint: Vector3<f64> = estimate.poses.last().expect("non-empty").translation() - estimate.poses[0].translation();
    let hint = (hint.norm() > 0.0).then_some(hint);
    let (map, coverage) = assess(&cloud, hint.as_ref(), &config.coverage).at(Stage::Coverage)?;
    png::write_gray8(&out.join(COVERAGE_IMAGE), &map_to_image(&map)).at(Stage::Coverage)?;
    json::write_json(&out.join(COVERAGE_FILE), &coverage).at(Stage::Coverage)?;
    check((0.0..=1.0).contains(&coverage.coverage_ratio), Stage::Coverage, || {
        format!("coverage ratio {} outside [0, 1]", coverage.coverage_ratio)
    })?;

    Ok(PipelineSummary {
        n_frames: frames.len(),
        escaped_rays: escaped,
        eval,
        n_tracks: tracks.len(),
        poses: pose_summary,
        n_points: cloud.len(),
        surface_rms_mm,
        coverage,
    })
}
