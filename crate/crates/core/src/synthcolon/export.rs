//! Writes a rendered sequence to disk.
//!
//! Layout of the output directory:
//!
//! - `frame_XXXX_intensity.png`: 8-bit grayscale, `round(255 * intensity)`
//! - `frame_XXXX_depth.pfm`: single-channel float depth in mm, 0 where the ray escaped
//! - `frame_XXXX_label.png`: 8-bit class ids (0 mucosa, 1 polyp)
//! - `poses.json`: camera-to-world poses, one `{ "R": [9 row-major], "t": [3] }` per frame
//! - `intrinsics.json`: `{ fx, fy, cx, cy, width, height }` shared by all frames
//! - `manifest.json`: frame count, scene configuration and SHA-256 of every other file

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::render::RenderedFrame;
use super::Scene;
use crate::error::{Error, Result};
use crate::io::{self, json, pfm, png};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const POSES_FILE: &str = "poses.json";
pub const INTRINSICS_FILE: &str = "intrinsics.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_frames: usize,
    pub width: usize,
    pub height: usize,
    pub exposure: Option<f64>,
    pub scene: Option<Scene>,
    pub files: Vec<ManifestFile>,
}

pub fn intensity_name(i: usize) -> String {
    format!("frame_{i:04}_intensity.png")
}

pub fn depth_name(i: usize) -> String {
    format!("frame_{i:04}_depth.pfm")
}

pub fn label_name(i: usize) -> String {
    format!("frame_{i:04}_label.png")
}

/// Writes all frames into `out_dir` (created if missing) and returns the
/// manifest that was written alongside them.
pub fn export_dataset(
    frames: &[RenderedFrame],
    out_dir: &Path,
    scene: Option<&Scene>,
    exposure: Option<f64>,
) -> Result<DatasetManifest> {
    let first = frames.first().ok_or_else(|| Error::invalid("no frames to export"))?;
    if frames.iter().any(|f| f.intrinsics != first.intrinsics) {
        return Err(Error::invalid("exported frames must share one set of intrinsics"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut names = Vec::with_capacity(3 * frames.len() + 2);
    for (i, f) in frames.iter().enumerate() {
        let name = intensity_name(i);
        png::write_unit_gray(&out_dir.join(&name), &f.intensity)?;
        names.push(name);
        let name = depth_name(i);
        pfm::write_depth(&out_dir.join(&name), &f.depth)?;
        names.push(name);
        let name = label_name(i);
        png::write_gray8(&out_dir.join(&name), &f.label)?;
        names.push(name);
    }
    let poses: Vec<_> = frames.iter().map(|f| f.pose).collect();
    json::write_poses(&out_dir.join(POSES_FILE), &poses)?;
    names.push(POSES_FILE.to_string());
    json::write_intrinsics(&out_dir.join(INTRINSICS_FILE), &first.intrinsics)?;
    names.push(INTRINSICS_FILE.to_string());

    let files = names
        .into_iter()
        .map(|path| {
            let sha256 = io::sha256_file(&out_dir.join(&path))?;
            Ok(ManifestFile { path, sha256 })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        n_frames: frames.len(),
        width: first.depth.width(),
        height: first.depth.height(),
        exposure,
        scene: scene.cloned(),
        files,
    };
    json::write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
