//! Format checks over a directory of artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{walk_files, RunManifest};
use crate::error::Result;
use crate::io::{self, json, pfm, ply, png};
use crate::synthcolon::DatasetManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileCheck {
    pub path: PathBuf,
    pub status: CheckStatus,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatReport {
    pub files: Vec<FileCheck>,
}

impl FormatReport {
    /// No file failed. Warnings do not count as failures.
    pub fn passed(&self) -> bool {
        self.files.iter().all(|f| f.status != CheckStatus::Fail)
    }

    pub fn count(&self, status: CheckStatus) -> usize {
        self.files.iter().filter(|f| f.status == status).count()
    }
}

fn outcome(r: Result<String>) -> (CheckStatus, String) {
    match r {
        Ok(m) => (CheckStatus::Pass, m),
        Err(e) => (CheckStatus::Fail, e.to_string()),
    }
}

fn check_png(path: &Path) -> (CheckStatus, String) {
    match png::is_gray16(path) {
        Err(e) => (CheckStatus::Fail, e.to_string()),
        Ok(true) if !png::sidecar_path(path).is_file() => (
            CheckStatus::Warn,
            "16-bit depth PNG without a JSON sidecar; the depth unit is unknown".to_string(),
        ),
        Ok(true) => outcome(png::read_depth16(path).map(|d| format!("16-bit depth {}x{}", d.width(), d.height()))),
        Ok(false) => outcome(png::read_image(path).map(|i| format!("{}x{} image, {} channel(s)", i.width(), i.height(), i.channels()))),
    }
}

fn check_json(path: &Path) -> (CheckStatus, String) {
    let value: serde_json::Value = match json::read_json(path) {
        Ok(v) => v,
        Err(e) => return (CheckStatus::Fail, e.to_string()),
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    if let Ok(m) = serde_json::from_value::<DatasetManifest>(value.clone()) {
        for f in &m.files {
            match io::sha256_file(&dir.join(&f.path)) {
                Ok(h) if h == f.sha256 => {}
                Ok(_) => return (CheckStatus::Fail, format!("{} does not match its recorded hash", f.path)),
                Err(e) => return (CheckStatus::Fail, e.to_string()),
            }
        }
        return (CheckStatus::Pass, format!("dataset manifest, {} files verified", m.files.len()));
    }
    if let Ok(m) = serde_json::from_value::<RunManifest>(value) {
        if let Some(missing) = m.outputs.iter().find(|o| !dir.join(o).is_file()) {
            return (CheckStatus::Fail, format!("listed output {missing} is missing"));
        }
        return (CheckStatus::Pass, format!("run manifest, {} outputs present", m.outputs.len()));
    }
    (CheckStatus::Pass, "well-formed JSON".to_string())
}

/// Checks every PFM, PNG, JSONL, PLY and JSON file below `dir`. Other files
/// are ignored. Never fails as a whole; problems are reported per file.
pub fn validate_formats(dir: &Path) -> FormatReport {
    let files = match walk_files(dir) {
        Ok(f) => f,
        Err(e) => {
            return FormatReport {
                files: vec![FileCheck {
                    path: dir.to_path_buf(),
                    status: CheckStatus::Fail,
                    message: e.to_string(),
                }],
            }
        }
    };
    let mut checks = Vec::new();
    for path in files {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        let (status, message) = match ext.as_str() {
            "pfm" => outcome(pfm::read(&path).map(|p| format!("{}x{}x{} float", p.width, p.height, p.channels))),
            "png" => check_png(&path),
            "jsonl" => outcome(json::read_tracks(&path).map(|t| format!("{} tracks", t.len()))),
            "ply" => outcome(ply::read(&path).map(|c| format!("{} points", c.len()))),
            "json" => {
                let image = path.with_extension("png");
                if image.is_file() && png::is_gray16(&image).unwrap_or(false) {
                    outcome(png::read_sidecar(&image).map(|s| format!("depth sidecar, {} mm per unit", s.mm_per_unit)))
                } else {
                    check_json(&path)
                }
            }
            _ => continue,
        };
        checks.push(FileCheck { path, status, message });
    }
    FormatReport { files: checks }
}
