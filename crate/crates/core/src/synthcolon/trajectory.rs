//! Camera fly-throughs along the phantom centerline.
//!
//! Augmentations: random per-frame speed, time-reversed segments, a
//! per-sequence jitter of the intrinsics, and a per-sequence brightness
//! attenuation factor.

use nalgebra::{Matrix3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::phantom::Phantom;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    pub n_frames: usize,
    pub width: u32,
    pub height: u32,
    /// Horizontal field of view before jitter (degrees).
    pub fov_deg: f64,
    /// Per-frame advance is uniform in `[speed_min, speed_max]` (mm/frame).
    pub speed_min: f64,
    pub speed_max: f64,
    /// Arclength of the first camera (mm).
    pub start_s: f64,
    /// Largest angle between the optical axis and the local tangent (deg).
    pub max_tilt_deg: f64,
    /// Largest distance of the camera from the centerline (mm).
    pub max_offset: f64,
    /// Half-open frame ranges `[start, end)` played backwards.
    pub flip_segments: Vec<(usize, usize)>,
    /// Additional randomly placed reversed ranges.
    pub random_flips: usize,
    /// Each intrinsic parameter is scaled by a factor in `1 +- pct / 100`.
    pub intrinsics_jitter_pct: f64,
    /// Attenuation is uniform in `[attenuation_min, attenuation_max]`.
    pub attenuation_min: f64,
    pub attenuation_max: f64,
    pub seed: u64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            n_frames: 32,
            width: 256,
            height: 256,
            fov_deg: 90.0,
            speed_min: 1.0,
            speed_max: 2.5,
            start_s: 20.0,
            max_tilt_deg: 10.0,
            max_offset: 1.5,
            flip_segments: Vec::new(),
            random_flips: 0,
            intrinsics_jitter_pct: 2.0,
            attenuation_min: 0.6,
            attenuation_max: 1.0,
            seed: 0,
        }
    }
}

/// Cameras closer than this to the wall count as outside the lumen (mm).
pub const WALL_CLEARANCE: f64 = 0.5;
const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose<f64>>,
    pub intrinsics: CameraIntrinsics<f64>,
    pub attenuation: f64,
    /// Centerline arclength of each camera, in playback order.
    pub arclengths: Vec<f64>,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.n_frames < 1 {
            return bad("trajectory needs at least one frame");
        }
        if self.width < 1 || self.height < 1 {
            return bad("image size must be at least 1x1");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad("field of view must be in (0, 180) degrees");
        }
        if !(self.speed_min >= 0.0 && self.speed_max >= self.speed_min && self.speed_max.is_finite()) {
            return bad("speed range must satisfy 0 <= min <= max");
        }
        if !(0.0..90.0).contains(&self.max_tilt_deg) || !(self.max_offset >= 0.0) {
            return bad("tilt must be in [0, 90) degrees and offset non-negative");
        }
        if !(0.0..=100.0).contains(&self.intrinsics_jitter_pct) {
            return bad("intrinsics jitter must be in [0, 100] percent");
        }
        if !(self.attenuation_min >= 0.0 && self.attenuation_max >= self.attenuation_min && self.attenuation_max <= 1.0) {
            return bad("attenuation range must lie in [0, 1]");
        }
        for &(a, b) in &self.flip_segments {
            if a >= b || b > self.n_frames {
                return bad("flip segments must be non-empty ranges within the sequence");
            }
        }
        Ok(())
    }
}

/// Camera looking along `forward`, with image rows pointing along `down`.
fn camera_rotation(forward: &Vector3<f64>, down: &Vector3<f64>) -> Matrix3<f64> {
    let z = forward.normalize();
    let y = (down - z * down.dot(&z)).normalize();
    let x = y.cross(&z);
    Matrix3::from_columns(&[x, y, z])
}

pub fn sample_trajectory(spec: &TrajectorySpec, phantom: &Phantom) -> Result<Trajectory> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_frames;
    let len = phantom.length();

    // Arclengths: random speeds, resampled if the run leaves the tube.
    let margin = phantom.r_max();
    let mut arclengths = Vec::new();
    for attempt in 0..=MAX_RETRIES {
        arclengths.clear();
        let mut s = spec.start_s;
        arclengths.push(s);
        for _ in 1..n {
            let v = if spec.speed_max > spec.speed_min {
                rng.random_range(spec.speed_min..=spec.speed_max)
            } else {
                spec.speed_min
            };
            s += v;
            arclengths.push(s);
        }
        if s <= len - margin && spec.start_s >= 0.0 {
            break;
        }
        if attempt == MAX_RETRIES || spec.speed_min == spec.speed_max {
            return Err(Error::invalid(format!(
                "trajectory reaches s = {s:.1} mm but the phantom is {len:.1} mm long"
            )));
        }
    }

    let mut poses = Vec::with_capacity(n);
    let max_tilt = spec.max_tilt_deg.to_radians();
    for &s in &arclengths {
        let f = phantom.curve().frame(s);
        let mut placed = None;
        for _ in 0..MAX_RETRIES {
            let offset = if spec.max_offset > 0.0 {
                let r = spec.max_offset * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                (f.normal * a.cos() + f.binormal * a.sin()) * r
            } else {
                Vector3::zeros()
            };
            let base = camera_rotation(&f.tangent, &f.normal);
            let rotation = if max_tilt > 0.0 {
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let axis = Unit::new_normalize(Vector3::new(phi.cos(), phi.sin(), 0.0));
                let angle = rng.random_range(0.0..=max_tilt);
                base * UnitQuaternion::from_axis_angle(&axis, angle).to_rotation_matrix().into_inner()
            } else {
                base
            };
            let position = f.position + offset;
            if phantom.sdf_with_hint(&position, Some(s)) < -WALL_CLEARANCE {
                placed = Some(Pose::new(rotation, position)?);
                break;
            }
        }
        poses.push(placed.ok_or_else(|| {
            Error::invalid(format!("could not place a camera inside the lumen at s = {s:.1} mm"))
        })?);
    }

    let mut segments = spec.flip_segments.clone();
    if n >= 4 {
        for _ in 0..spec.random_flips {
            let l = rng.random_range(2..=n / 2);
            let a = rng.random_range(0..=n - l);
            segments.push((a, a + l));
        }
    }
    for (a, b) in segments {
        poses[a..b].reverse();
        arclengths[a..b].reverse();
    }

    let j = spec.intrinsics_jitter_pct / 100.0;
    let mut jitter = || if j > 0.0 { 1.0 + rng.random_range(-j..=j) } else { 1.0 };
    let base = CameraIntrinsics::from_fov(spec.width, spec.height, spec.fov_deg.to_radians())?;
    let (jfx, jfy, jcx, jcy) = (jitter(), jitter(), jitter(), jitter());
    let intrinsics = CameraIntrinsics::new(
        base.fx * jfx,
        base.fy * jfy,
        (base.cx * jcx).min(spec.width as f64 - 1.0),
        (base.cy * jcy).min(spec.height as f64 - 1.0),
        spec.width,
        spec.height,
    )?;
    let attenuation = if spec.attenuation_max > spec.attenuation_min {
        rng.random_range(spec.attenuation_min..=spec.attenuation_max)
    } else {
        spec.attenuation_min
    };

    Ok(Trajectory {
        poses,
        intrinsics,
        attenuation,
        arclengths,
    })
}

/// Base (un-jittered) intrinsics of a spec.
pub fn nominal_intrinsics(spec: &TrajectorySpec) -> Result<CameraIntrinsics<f64>> {
    CameraIntrinsics::from_fov(spec.width, spec.height, spec.fov_deg.to_radians())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthcolon::phantom::{build_phantom, PhantomSpec};

    fn plain() -> TrajectorySpec {
        TrajectorySpec {
            n_frames: 20,
            speed_min: 2.0,
            speed_max: 2.0,
            max_tilt_deg: 0.0,
            max_offset: 0.0,
            intrinsics_jitter_pct: 0.0,
            attenuation_min: 1.0,
            attenuation_max: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn constant_speed_is_uniform() {
        let ph = build_phantom(&PhantomSpec::default()).unwrap();
        let t = sample_trajectory(&plain(), &ph).unwrap();
        for w in t.arclengths.windows(2) {
            assert!((w[1] - w[0] - 2.0).abs() < 1e-6);
        }
        for (p, &s) in t.poses.iter().zip(&t.arclengths) {
            let tc = ph.locate(p.translation(), Some(s));
            assert!((tc.s - s).abs() < 1e-6);
            assert!(tc.rho < 1e-6);
            let axis = p.rotation().column(2).into_owned();
            assert!((axis - tc.frame.tangent).norm() < 1e-9);
        }
    }

    #[test]
    fn full_flip_reverses() {
        let ph = build_phantom(&PhantomSpec::default()).unwrap();
        let fwd = sample_trajectory(&TrajectorySpec { seed: 4, ..Default::default() }, &ph).unwrap();
        let spec = TrajectorySpec {
            seed: 4,
            flip_segments: vec![(0, 32)],
            ..Default::default()
        };
        let rev = sample_trajectory(&spec, &ph).unwrap();
        let mut expect = fwd.poses.clone();
        expect.reverse();
        assert_eq!(rev.poses, expect);
        assert_eq!(rev.intrinsics, fwd.intrinsics);
    }

    #[test]
    fn deterministic_and_bounded() {
        let ph = build_phantom(&PhantomSpec::default()).unwrap();
        let spec = TrajectorySpec {
            seed: 11,
            random_flips: 2,
            ..Default::default()
        };
        let a = sample_trajectory(&spec, &ph).unwrap();
        assert_eq!(a, sample_trajectory(&spec, &ph).unwrap());
        let base = nominal_intrinsics(&spec).unwrap();
        let j = spec.intrinsics_jitter_pct / 100.0;
        for (x, b) in [(a.intrinsics.fx, base.fx), (a.intrinsics.fy, base.fy), (a.intrinsics.cx, base.cx), (a.intrinsics.cy, base.cy)] {
            assert!((x / b - 1.0).abs() <= j + 1e-12);
        }
        assert!((0.6..=1.0).contains(&a.attenuation));
        for (p, &s) in a.poses.iter().zip(&a.arclengths) {
            assert!(ph.sdf_with_hint(p.translation(), Some(s)) < -WALL_CLEARANCE);
            let tilt = p.rotation().column(2).dot(&ph.locate(p.translation(), Some(s)).frame.tangent).clamp(-1.0, 1.0).acos();
            assert!(tilt <= spec.max_tilt_deg.to_radians() + 1e-9);
        }
    }

    #[test]
    fn overlong_run_is_rejected() {
        let ph = build_phantom(&PhantomSpec::default()).unwrap();
        let spec = TrajectorySpec {
            n_frames: 500,
            ..plain()
        };
        assert!(sample_trajectory(&spec, &ph).is_err());
        assert!(sample_trajectory(&TrajectorySpec { flip_segments: vec![(3, 3)], ..plain() }, &ph).is_err());
    }
}
