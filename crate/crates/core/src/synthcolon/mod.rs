//! Synthetic colonoscopy: a procedural phantom, camera fly-throughs, a ray
//! marching renderer, ground-truth tracks and dataset export.

pub mod curve;
pub mod export;
pub mod phantom;
pub mod render;
pub mod tracks;
pub mod trajectory;

use serde::{Deserialize, Serialize};

pub use curve::{Curve, CurveFrame, TubeCoords};
pub use export::{export_dataset, DatasetManifest};
pub use phantom::{build_phantom, Phantom, PhantomSpec, PolypSpec};
pub use render::{render, render_sequence, LightingSpec, RenderedFrame, RenderedSequence};
pub use tracks::{oracle_tracks, OracleTrackConfig};
pub use trajectory::{sample_trajectory, Trajectory, TrajectorySpec};

use crate::error::Result;

/// Everything needed to regenerate a synthetic sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scene {
    pub phantom: PhantomSpec,
    pub trajectory: TrajectorySpec,
    pub lighting: LightingSpec,
}

impl Scene {
    /// Seeds the phantom and trajectory generators from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.phantom.seed = seed;
        self.trajectory.seed = seed.wrapping_add(1);
        self
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub phantom: Phantom,
    pub trajectory: Trajectory,
    pub rendered: RenderedSequence,
}

/// Builds the phantom, samples a trajectory and renders every frame.
pub fn generate(scene: &Scene) -> Result<SyntheticSequence> {
    let phantom = build_phantom(&scene.phantom)?;
    let trajectory = sample_trajectory(&scene.trajectory, &phantom)?;
    let rendered = render_sequence(&phantom, &trajectory, &scene.lighting)?;
    Ok(SyntheticSequence {
        phantom,
        trajectory,
        rendered,
    })
}
