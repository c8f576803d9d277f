//! Ground-truth point tracks taken from rendered depth and poses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::render::RenderedFrame;
use crate::bundle_adjust::{Track, TrackObservation, TrackSet};
use crate::error::{Error, Result};
use crate::geometry::{backproject_unchecked, CameraIntrinsics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleTrackConfig {
    /// Spacing of seed pixels in each frame.
    pub grid_stride: usize,
    /// A seed from frame `i` is followed through frames `i..i + window`.
    pub window: usize,
    /// Standard deviation of Gaussian noise added to `u` and `v` (px).
    pub pixel_noise_sigma: f64,
    /// Relative depth mismatch above which a reprojection is occluded.
    pub depth_tolerance: f64,
    pub seed: u64,
}

impl Default for OracleTrackConfig {
    fn default() -> Self {
        Self {
            grid_stride: 16,
            window: 16,
            pixel_noise_sigma: 0.0,
            depth_tolerance: 0.01,
            seed: 0,
        }
    }
}

/// Depth at a sub-pixel position, interpolated only when all four
/// neighbours are valid.
fn bilinear_depth(frame: &RenderedFrame, u: f64, v: f64) -> Option<f64> {
    let (w, h) = (frame.depth.width(), frame.depth.height());
    let c0 = (u.floor() as usize).min(w - 1);
    let r0 = (v.floor() as usize).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let r1 = (r0 + 1).min(h - 1);
    let (fu, fv) = (u - c0 as f64, v - r0 as f64);
    let d = |c, r| frame.depth.depth(c, r).map(f64::from);
    let (d00, d10, d01, d11) = (d(c0, r0)?, d(c1, r0)?, d(c0, r1)?, d(c1, r1)?);
    Some((d00 * (1.0 - fu) + d10 * fu) * (1.0 - fv) + (d01 * (1.0 - fu) + d11 * fu) * fv)
}

fn in_bounds(u: f64, v: f64, k: &CameraIntrinsics<f64>) -> bool {
    u >= 0.0 && v >= 0.0 && u <= (k.width - 1) as f64 && v <= (k.height - 1) as f64
}

/// Seeds a grid of pixels in every frame and follows each surface point
/// through the next `window - 1` frames. Observations carry the exact
/// projected depth; pixel noise (if any) perturbs only `u` and `v`.
pub fn oracle_tracks(frames: &[RenderedFrame], config: &OracleTrackConfig) -> Result<TrackSet<f64>> {
    if config.window < 2 {
        return Err(Error::invalid("track window must be at least 2"));
    }
    if config.grid_stride < 1 {
        return Err(Error::invalid("grid stride must be at least 1"));
    }
    let noise = Normal::new(0.0, config.pixel_noise_sigma)
        .map_err(|_| Error::invalid("pixel noise sigma must be finite and non-negative"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let inverses: Vec<_> = frames.iter().map(|f| f.pose.inverse()).collect();
    let mut tracks = Vec::new();
    let mut next_id = 0u64;
    for (i, seed_frame) in frames.iter().enumerate() {
        let k = &seed_frame.intrinsics;
        let stride = config.grid_stride;
        for row in (stride / 2..k.height as usize).step_by(stride) {
            for col in (stride / 2..k.width as usize).step_by(stride) {
                let Some(d) = seed_frame.depth.depth(col, row) else { continue };
                let pw = seed_frame
                    .pose
                    .transform(&backproject_unchecked(col as f64, row as f64, d as f64, k));
                let mut obs = Vec::new();
                for j in i..frames.len().min(i + config.window) {
                    let kj = &frames[j].intrinsics;
                    let pc = inverses[j].transform(&pw);
                    if pc.z <= 1e-6 {
                        continue;
                    }
                    let u = kj.fx * pc.x / pc.z + kj.cx;
                    let v = kj.fy * pc.y / pc.z + kj.cy;
                    if !in_bounds(u, v, kj) {
                        continue;
                    }
                    match bilinear_depth(&frames[j], u, v) {
                        Some(rendered) if (pc.z - rendered).abs() <= config.depth_tolerance * pc.z => {}
                        _ => continue,
                    }
                    obs.push(TrackObservation {
                        frame: j,
                        u,
                        v,
                        depth: pc.z,
                    });
                }
                if obs.len() < 2 {
                    continue;
                }
                if config.pixel_noise_sigma > 0.0 {
                    for o in &mut obs {
                        let kj = &frames[o.frame].intrinsics;
                        o.u = (o.u + noise.sample(&mut rng)).clamp(0.0, (kj.width - 1) as f64);
                        o.v = (o.v + noise.sample(&mut rng)).clamp(0.0, (kj.height - 1) as f64);
                    }
                }
                tracks.push(Track {
                    id: next_id,
                    observations: obs,
                });
                next_id += 1;
            }
        }
    }
    TrackSet::new(tracks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle_adjust::BaProblem;
    use crate::geometry::Pose;
    use crate::synthcolon::phantom::{build_phantom, PhantomSpec, PolypSpec};
    use crate::synthcolon::render::{render, LightingSpec};
    use nalgebra::Matrix3;

    fn view(ph: &crate::synthcolon::phantom::Phantom, s: f64, size: u32) -> RenderedFrame {
        let f = ph.curve().frame(s);
        let pose = Pose::new(Matrix3::from_columns(&[f.normal.cross(&f.tangent), f.normal, f.tangent]), f.position).unwrap();
        let k = CameraIntrinsics::from_fov(size, size, 90f64.to_radians()).unwrap();
        render(ph, &pose, &k, &LightingSpec::default(), 1.0, Some(1.0)).unwrap()
    }

    #[test]
    fn noise_free_tracks_have_zero_residual() {
        let ph = build_phantom(&PhantomSpec::default()).unwrap();
        let frames: Vec<_> = (0..4).map(|i| view(&ph, 40.0 + 2.0 * i as f64, 40)).collect();
        let tracks = oracle_tracks(&frames, &OracleTrackConfig { grid_stride: 6, ..Default::default() }).unwrap();
        assert!(tracks.len() > 10);
        let ks: Vec<_> = frames.iter().map(|f| f.intrinsics).collect();
        let poses: Vec<_> = frames.iter().map(|f| frames[0].pose.inverse().compose(&f.pose)).collect();
        let problem = BaProblem::new(tracks, ks, 1.0, None).unwrap();
        let r = problem.residual(&poses).unwrap();
        assert!(r.values.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn static_camera_repeats_observations() {
        let ph = build_phantom(&PhantomSpec::default()).unwrap();
        let f = view(&ph, 50.0, 24);
        let frames = vec![f.clone(), f.clone(), f];
        let tracks = oracle_tracks(&frames, &OracleTrackConfig { grid_stride: 5, ..Default::default() }).unwrap();
        for t in tracks.tracks() {
            let first = t.observations[0];
            for o in &t.observations {
                assert!((o.u - first.u).abs() < 1e-9 && (o.v - first.v).abs() < 1e-9 && (o.depth - first.depth).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn occluded_points_are_dropped() {
        // A tall polyp ahead of both cameras. The rear camera cannot see the
        // wall just beyond the polyp that the front camera sees.
        let spec = PhantomSpec {
            polyps: vec![PolypSpec {
                s: 60.0,
                theta: 0.0,
                height: 7.0,
                width: 10.0,
            }],
            haustra_amplitude: 0.0,
            ..PhantomSpec::cylinder(12.0, 200.0)
        };
        let ph = build_phantom(&spec).unwrap();
        let a = view(&ph, 52.0, 48);
        let b = view(&ph, 40.0, 48);
        let frames = vec![a, b];
        let tracks = oracle_tracks(&frames, &OracleTrackConfig { grid_stride: 2, ..Default::default() }).unwrap();
        let inv_b = frames[1].pose.inverse();
        let mut rejected = 0;
        for row in (1..48).step_by(2) {
            for col in (1..48).step_by(2) {
                let Some(d) = frames[0].depth.depth(col, row) else { continue };
                let pw = frames[0].pose.transform(&backproject_unchecked(col as f64, row as f64, d as f64, &frames[0].intrinsics));
                let pc = inv_b.transform(&pw);
                let k = &frames[1].intrinsics;
                if pc.z <= 1e-6 {
                    continue;
                }
                let (u, v) = (k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy);
                if !in_bounds(u, v, k) {
                    continue;
                }
                // Independent check: march from camera b toward the point
                // and see whether the wall is crossed first.
                let origin = *frames[1].pose.translation();
                let dir = pw - origin;
                let blocked = (1..400).any(|t| ph.sdf(&(origin + dir * (t as f64 / 400.0) * 0.97)) > 0.0);
                let tracked = tracks.tracks().iter().any(|t| {
                    t.observations.len() == 2 && t.observations[0].frame == 0 && (t.observations[0].u - col as f64).abs() < 1e-9 && (t.observations[0].v - row as f64).abs() < 1e-9
                });
                if blocked {
                    rejected += 1;
                    assert!(!tracked, "occluded point ({col},{row}) kept");
                }
            }
        }
        assert!(rejected > 0);
    }
}
