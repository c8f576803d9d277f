//! File formats and directory conventions.

pub mod json;
pub mod pfm;
pub mod ply;
pub mod png;

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::depth_eval::DepthSequence;
use crate::error::{Error, Result};

/// Files in `dir` whose extension matches `ext` (case-insensitive), sorted
/// by file name.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let matches = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case(ext));
        if matches && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Depth maps of a directory in file-name order: every `*.pfm` file, or if
/// there are none, every `*.png` that has a JSON sidecar.
pub fn load_depth_dir(dir: &Path) -> Result<DepthSequence<f32>> {
    let pfms = list_files(dir, "pfm")?;
    let frames = if !pfms.is_empty() {
        pfms.iter().map(|p| pfm::read_depth(p)).collect::<Result<Vec<_>>>()?
    } else {
        list_files(dir, "png")?
            .into_iter()
            .filter(|p| png::sidecar_path(p).is_file())
            .map(|p| png::read_depth16(&p))
            .collect::<Result<Vec<_>>>()?
    };
    if frames.is_empty() {
        return Err(Error::invalid(format!("no depth maps found in {}", dir.display())));
    }
    DepthSequence::new(frames)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
