//! Fusion of posed depth frames into a world-frame point cloud, and voxel
//! downsampling.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::depth_eval::DepthSequence;
use crate::error::{Error, Result};
use crate::geometry::{backproject_unchecked, CameraIntrinsics, Pose};
use crate::grid::Grid;
use crate::scalar::Real;

pub const LABEL_MUCOSA: u8 = 0;
pub const LABEL_POLYP: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub xyz: Vector3<f64>,
    pub rgb: Option<[u8; 3]>,
    pub label: Option<u8>,
}

impl CloudPoint {
    pub fn new(xyz: Vector3<f64>) -> Self {
        Self {
            xyz,
            rgb: None,
            label: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn new(points: Vec<CloudPoint>) -> Result<Self> {
        if points.iter().any(|p| !p.xyz.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("point cloud coordinates"));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_colors(&self) -> bool {
        self.points.iter().any(|p| p.rgb.is_some())
    }

    pub fn has_labels(&self) -> bool {
        self.points.iter().any(|p| p.label.is_some())
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vector3<f64>> {
        self.points.iter().map(|p| &p.xyz)
    }

    /// Applies a rigid transform to every point.
    pub fn transformed(&self, g: &Pose<f64>) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| CloudPoint {
                    xyz: g.transform(&p.xyz),
                    ..*p
                })
                .collect(),
        }
    }
}

/// Backprojects every valid pixel on the `stride` lattice (rows and columns
/// `0, stride, 2*stride, ...`) of every frame and moves it into the world
/// frame with that frame's pose. Points are emitted frame by frame in
/// row-major order.
pub fn fuse<T: Real>(
    depths: &DepthSequence<T>,
    poses: &[Pose<f64>],
    intrinsics: &CameraIntrinsics<f64>,
    colors: Option<&[Grid<[u8; 3]>]>,
    labels: Option<&[Grid<u8>]>,
    stride: usize,
) -> Result<PointCloud> {
    if stride < 1 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    let n = depths.len();
    if poses.len() != n {
        return Err(Error::invalid(format!("{n} depth frames but {} poses", poses.len())));
    }
    let (w, h) = (depths.width(), depths.height());
    if intrinsics.width as usize != w || intrinsics.height as usize != h {
        return Err(Error::invalid("intrinsics image size differs from depth frames"));
    }
    if let Some(c) = colors {
        if c.len() != n || c.iter().any(|g| g.width() != w || g.height() != h) {
            return Err(Error::invalid("color frames do not match depth frames"));
        }
    }
    if let Some(l) = labels {
        if l.len() != n || l.iter().any(|g| g.width() != w || g.height() != h) {
            return Err(Error::invalid("label frames do not match depth frames"));
        }
    }
    let per_frame: Vec<Vec<CloudPoint>> = depths
        .frames()
        .par_iter()
        .enumerate()
        .map(|(f, frame)| {
            let mut pts = Vec::new();
            for row in (0..h).step_by(stride) {
                for col in (0..w).step_by(stride) {
                    let Some(d) = frame.depth(col, row) else {
                        continue;
                    };
                    let pc = backproject_unchecked(col as f64, row as f64, d.as_f64(), intrinsics);
                    pts.push(CloudPoint {
                        xyz: poses[f].transform(&pc),
                        rgb: colors.map(|c| c[f].at(col, row)),
                        label: labels.map(|l| l[f].at(col, row)),
                    });
                }
            }
            if pts.is_empty() {
                log::warn!("frame {f} contributed no points");
            }
            pts
        })
        .collect();
    Ok(PointCloud {
        points: per_frame.into_iter().flatten().collect(),
    })
}

#[derive(Default)]
struct VoxelAccumulator {
    sum: Vector3<f64>,
    count: usize,
    rgb_sum: [u64; 3],
    rgb_count: u64,
    label_votes: BTreeMap<u8, usize>,
}

/// One point per occupied voxel of edge `voxel_mm`: the centroid of its
/// points, their mean color (rounded) and their majority label, ties going
/// to the higher class id so lesions win over mucosa. Output is ordered by
/// voxel index.
pub fn voxel_downsample(cloud: &PointCloud, voxel_mm: f64) -> Result<PointCloud> {
    if !(voxel_mm > 0.0 && voxel_mm.is_finite()) {
        return Err(Error::invalid("voxel size must be positive"));
    }
    let mut voxels: BTreeMap<(i64, i64, i64), VoxelAccumulator> = BTreeMap::new();
    for p in &cloud.points {
        let key = (
            (p.xyz.x / voxel_mm).floor() as i64,
            (p.xyz.y / voxel_mm).floor() as i64,
            (p.xyz.z / voxel_mm).floor() as i64,
        );
        let acc = voxels.entry(key).or_default();
        acc.sum += p.xyz;
        acc.count += 1;
        if let Some(rgb) = p.rgb {
            for c in 0..3 {
                acc.rgb_sum[c] += rgb[c] as u64;
            }
            acc.rgb_count += 1;
        }
        if let Some(l) = p.label {
            *acc.label_votes.entry(l).or_default() += 1;
        }
    }
    let points = voxels
        .into_values()
        .map(|acc| {
            let rgb = (acc.rgb_count > 0).then(|| {
                let mean = |c: usize| ((acc.rgb_sum[c] as f64 / acc.rgb_count as f64).round()) as u8;
                [mean(0), mean(1), mean(2)]
            });
            // Iteration is in ascending class order, so `>=` favors higher ids.
            let label = acc
                .label_votes
                .iter()
                .fold(None, |best: Option<(u8, usize)>, (&l, &n)| match best {
                    Some((_, bn)) if bn > n => best,
                    _ => Some((l, n)),
                })
                .map(|(l, _)| l);
            CloudPoint {
                xyz: acc.sum / acc.count as f64,
                rgb,
                label,
            }
        })
        .collect();
    Ok(PointCloud { points })
}
