//! JSON records: intrinsics, pose lists, JSON-lines tracks, and generic
//! pretty-printed documents.
//!
//! * Intrinsics: `{"fx", "fy", "cx", "cy", "width", "height"}`.
//! * Poses: a list of `{"R": [9 floats, row-major], "t": [3 floats]}`,
//!   camera-to-world, translation in mm.
//! * Tracks: one JSON object per line,
//!   `{"id": int, "obs": [{"f": frame, "u": col, "v": row, "d": depth_mm}, ...]}`.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bundle_adjust::{Track, TrackSet};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Pretty-printed with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicsRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl From<&CameraIntrinsics<f64>> for IntrinsicsRecord {
    fn from(k: &CameraIntrinsics<f64>) -> Self {
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

impl IntrinsicsRecord {
    pub fn to_intrinsics(&self) -> Result<CameraIntrinsics<f64>> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics<f64>> {
    let rec: IntrinsicsRecord = read_json(path)?;
    rec.to_intrinsics().map_err(|e| Error::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics<f64>) -> Result<()> {
    write_json(path, &IntrinsicsRecord::from(k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl From<&Pose<f64>> for PoseRecord {
    fn from(p: &Pose<f64>) -> Self {
        let r = p.rotation();
        Self {
            r: std::array::from_fn(|i| r[(i / 3, i % 3)]),
            t: [p.translation().x, p.translation().y, p.translation().z],
        }
    }
}

impl PoseRecord {
    pub fn to_pose(&self) -> Result<Pose<f64>> {
        Pose::new(Matrix3::from_row_slice(&self.r), Vector3::from(self.t))
    }
}

pub fn poses_to_records(poses: &[Pose<f64>]) -> Vec<PoseRecord> {
    poses.iter().map(PoseRecord::from).collect()
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose<f64>>> {
    let recs: Vec<PoseRecord> = read_json(path)?;
    recs.iter()
        .enumerate()
        .map(|(i, r)| {
            r.to_pose().map_err(|e| Error::Json {
                path: path.to_path_buf(),
                message: format!("pose {i}: {e}"),
            })
        })
        .collect()
}

pub fn write_poses(path: &Path, poses: &[Pose<f64>]) -> Result<()> {
    write_json(path, &poses_to_records(poses))
}

/// Parses JSON-lines tracks. Blank lines are skipped.
pub fn parse_tracks(reader: impl BufRead, path: &Path) -> Result<TrackSet<f64>> {
    let mut tracks = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Track<f64> = serde_json::from_str(&line).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", n + 1),
        })?;
        tracks.push(t);
    }
    TrackSet::new(tracks).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_tracks(path: &Path) -> Result<TrackSet<f64>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_tracks(BufReader::new(f), path)
}

pub fn write_tracks(path: &Path, tracks: &TrackSet<f64>) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for t in tracks.tracks() {
        let line = serde_json::to_string(t).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
