//! Run bookkeeping and all-or-nothing output directories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Record of one tool invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    /// Output files relative to the output directory, sorted.
    pub outputs: Vec<String>,
    /// Stage results and headline numbers.
    pub summary: serde_json::Value,
    pub wall_clock_s: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: &impl Serialize, seed: Option<u64>) -> Result<Self> {
        let config = serde_json::to_value(config).map_err(|e| Error::invalid(format!("configuration: {e}")))?;
        Ok(Self {
            tool_version: TOOL_VERSION.to_string(),
            subcommand: subcommand.to_string(),
            config,
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            summary: serde_json::Value::Null,
            wall_clock_s: 0.0,
        })
    }

    /// Hashes `path`, or every regular file below it if it is a directory.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            for file in walk_files(path)? {
                let hash = io::sha256_file(&file)?;
                self.inputs.insert(file.display().to_string(), hash);
            }
        } else {
            let hash = io::sha256_file(path)?;
            self.inputs.insert(path.display().to_string(), hash);
        }
        Ok(())
    }

    /// The manifest with its wall-clock field zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_s: 0.0,
            ..self.clone()
        }
    }
}

/// Regular files below `dir`, sorted.
pub fn walk_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.is_file() {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Output directory that only appears once everything in it was written.
///
/// Files go to a hidden sibling directory; [`Staging::commit`] moves them
/// into the destination. Dropping an uncommitted staging area deletes it.
#[derive(Debug)]
pub struct Staging {
    dest: PathBuf,
    tmp: PathBuf,
    started: Instant,
    committed: bool,
}

impl Staging {
    pub fn new(dest: &Path) -> Result<Self> {
        let name = dest
            .file_name()
            .ok_or_else(|| Error::invalid(format!("output path {} has no final component", dest.display())))?;
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        if dest.exists() && !dest.is_dir() {
            return Err(Error::invalid(format!("output path {} exists and is not a directory", dest.display())));
        }
        std::fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
        let tmp = parent.join(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::create_dir(&tmp).map_err(|e| Error::io(&tmp, e))?;
        Ok(Self {
            dest: dest.to_path_buf(),
            tmp,
            started: Instant::now(),
            committed: false,
        })
    }

    /// Directory to write into.
    pub fn path(&self) -> &Path {
        &self.tmp
    }

    pub fn dest(&self) -> &Path {
        &self.dest
    }

    /// Writes the manifest, listing every staged file, then moves all
    /// files into place. Existing files of the same name are replaced.
    pub fn commit(mut self, mut manifest: RunManifest) -> Result<RunManifest> {
        let files = walk_files(&self.tmp)?;
        manifest.outputs = files
            .iter()
            .map(|f| relative_name(f, &self.tmp))
            .filter(|n| n != RUN_MANIFEST_FILE)
            .collect();
        manifest.wall_clock_s = self.started.elapsed().as_secs_f64();
        io::json::write_json(&self.tmp.join(RUN_MANIFEST_FILE), &manifest)?;

        if !self.dest.exists() {
            std::fs::rename(&self.tmp, &self.dest).map_err(|e| Error::io(&self.dest, e))?;
        } else {
            for entry in std::fs::read_dir(&self.tmp).map_err(|e| Error::io(&self.tmp, e))? {
                let from = entry.map_err(|e| Error::io(&self.tmp, e))?.path();
                let to = self.dest.join(from.file_name().expect("entry has a name"));
                if to.is_dir() {
                    std::fs::remove_dir_all(&to).map_err(|e| Error::io(&to, e))?;
                }
                std::fs::rename(&from, &to).map_err(|e| Error::io(&to, e))?;
            }
            std::fs::remove_dir(&self.tmp).map_err(|e| Error::io(&self.tmp, e))?;
        }
        self.committed = true;
        Ok(manifest)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.tmp);
        }
    }
}

/// Output files that are written under temporary names and renamed into
/// place together once every one of them exists.
#[derive(Debug)]
pub struct AtomicFiles {
    entries: Vec<(PathBuf, PathBuf)>,
    started: Instant,
    committed: bool,
}

impl Default for AtomicFiles {
    fn default() -> Self {
        Self::new()
    }
}

impl AtomicFiles {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            started: Instant::now(),
            committed: false,
        }
    }

    /// Temporary path to write `dest` to. Creates the parent directory.
    pub fn stage(&mut self, dest: &Path) -> Result<PathBuf> {
        let name = dest
            .file_name()
            .ok_or_else(|| Error::invalid(format!("output path {} has no file name", dest.display())))?;
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
        // Keep the extension: some writers pick the format from it.
        let tmp = parent.join(format!(".partial-{}-{}", std::process::id(), name.to_string_lossy()));
        self.entries.push((tmp.clone(), dest.to_path_buf()));
        Ok(tmp)
    }

    /// Renames every staged file into place and writes `manifest` to
    /// `manifest_path` with the final output list.
    pub fn commit(mut self, mut manifest: RunManifest, manifest_path: &Path) -> Result<RunManifest> {
        for (tmp, _) in &self.entries {
            if !tmp.is_file() {
                return Err(Error::invalid(format!("staged output {} was never written", tmp.display())));
            }
        }
        for (tmp, dest) in &self.entries {
            std::fs::rename(tmp, dest).map_err(|e| Error::io(dest, e))?;
        }
        self.committed = true;
        manifest.outputs = self.entries.iter().map(|(_, d)| d.display().to_string()).collect();
        manifest.outputs.sort();
        manifest.wall_clock_s = self.started.elapsed().as_secs_f64();
        io::json::write_json(manifest_path, &manifest)?;
        Ok(manifest)
    }
}

impl Drop for AtomicFiles {
    fn drop(&mut self) {
        if !self.committed {
            for (tmp, _) in &self.entries {
                let _ = std::fs::remove_file(tmp);
            }
        }
    }
}

/// Manifest location for a single-file output: `<file>.manifest.json`.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn relative_name(file: &Path, root: &Path) -> String {
    let rel = file.strip_prefix(root).unwrap_or(file);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}
