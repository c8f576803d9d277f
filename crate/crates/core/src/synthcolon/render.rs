//! Ray marching of the phantom with a point light at the camera.
//!
//! Each pixel ray is marched with safe steps: while the ray is closer to the
//! centerline than the smallest wall radius nearby it jumps straight to that
//! radius, otherwise it advances by the wall offset divided by a Lipschitz
//! bound (sphere tracing). Once within 1e-3 mm of the wall, or after
//! stepping past it, the crossing is bracketed and refined to machine
//! precision, so the reported depth lies on the wall itself.
//!
//! Shading: `attenuation * (albedo * cos(i) + k_s * max(0, cos(2i))^n) / dist^2`,
//! where `i` is the incidence angle. `cos(2i)` is the Phong lobe for a
//! viewer at the light.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::phantom::Phantom;
use super::trajectory::Trajectory;
use crate::depth_eval::{quantile_sorted, DepthFrame};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::grid::Grid;

pub const MAX_STEPS: usize = 256;
/// Distance to the wall at which marching stops (mm).
pub const SURFACE_TOLERANCE: f64 = 1e-3;
const STEP_SAFETY: f64 = 0.9;
/// Allowed deviation of a curved centerline from its tangent over one
/// radial jump (mm).
const BEND_SLACK: f64 = 0.2;
/// Target value of the first frame's 95th radiance percentile.
pub const EXPOSURE_TARGET: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LightingSpec {
    pub albedo: f64,
    pub specular_strength: f64,
    pub shininess: f64,
}

impl Default for LightingSpec {
    fn default() -> Self {
        Self {
            albedo: 1.0,
            specular_strength: 0.6,
            shininess: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    /// Radiance before tone mapping (attenuation included).
    pub radiance: Grid<f64>,
    /// Tone-mapped to `[0, 1]`.
    pub intensity: Grid<f64>,
    /// Z-depth of the first wall hit (mm); escaped rays are masked out and
    /// stored as 0.
    pub depth: DepthFrame<f32>,
    pub label: Grid<u8>,
    pub pose: Pose<f64>,
    pub intrinsics: CameraIntrinsics<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Z-depth in the camera frame (mm).
    pub depth: f64,
    pub point: Vector3<f64>,
    pub s: f64,
    pub theta: f64,
    /// Unit wall normal facing the lumen.
    pub normal: Vector3<f64>,
}

struct Marcher<'a> {
    phantom: &'a Phantom,
    origin: Vector3<f64>,
    /// Ray direction scaled so its component along the optical axis is 1;
    /// the ray parameter is then z-depth.
    dir: Vector3<f64>,
    dir_norm: f64,
    unit: Vector3<f64>,
    hint: f64,
}

impl Marcher<'_> {
    /// Wall offset at depth `tau`, or `None` once the ray has left the tube
    /// through an open end.
    fn offset(&mut self, tau: f64) -> Option<(f64, super::curve::TubeCoords)> {
        let p = self.origin + self.dir * tau;
        let tc = self.phantom.locate(&p, Some(self.hint));
        if tc.s < 0.0 || tc.s > self.phantom.length() {
            return None;
        }
        self.hint = tc.s;
        Some((self.phantom.wall_offset(&tc), tc))
    }

    /// Crossing inside `[a, b]` with `offset(a) < 0 <= offset(b)`.
    fn refine(&mut self, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64) -> Option<f64> {
        let mut side = 0i8;
        for _ in 0..200 {
            if (b - a) * self.dir_norm < 1e-11 {
                break;
            }
            let t = if fb > fa { (a * fb - b * fa) / (fb - fa) } else { 0.5 * (a + b) };
            let t = t.clamp(a, b);
            let (ft, _) = self.offset(t)?;
            if ft.abs() < 1e-13 {
                return Some(t);
            }
            if ft < 0.0 {
                a = t;
                fa = ft;
                if side == -1 {
                    fb /= 2.0;
                }
                side = -1;
            } else {
                b = t;
                fb = ft;
                if side == 1 {
                    fa /= 2.0;
                }
                side = 1;
            }
        }
        Some(if fb.abs() < fa.abs() { b } else { a })
    }

    /// Distance along the ray until it is `radius` from the local tangent
    /// line of the centerline.
    fn radial_jump(&self, tc: &super::curve::TubeCoords, radius: f64) -> f64 {
        let t = tc.frame.tangent;
        let q = tc.radial * tc.rho;
        let v_perp = self.unit - t * self.unit.dot(&t);
        let a = v_perp.norm_squared();
        if a < 1e-18 {
            return f64::INFINITY;
        }
        let b = 2.0 * q.dot(&v_perp);
        let c = tc.rho * tc.rho - radius * radius;
        let disc = (b * b - 4.0 * a * c).max(0.0);
        ((-b + disc.sqrt()) / (2.0 * a)).max(0.0)
    }

    fn trace(&mut self) -> Option<(f64, super::curve::TubeCoords)> {
        let ph = self.phantom;
        let lipschitz = ph.lipschitz();
        let kappa = ph.curve().max_curvature();
        let bend_limit = if kappa > 0.0 { (2.0 * BEND_SLACK / kappa).sqrt() } else { f64::INFINITY };
        let mut tau = 0.0;
        let mut prev = (0.0, f64::NEG_INFINITY);
        for _ in 0..MAX_STEPS {
            let (d, tc) = self.offset(tau)?;
            if d >= 0.0 {
                if prev.1 == f64::NEG_INFINITY {
                    // The camera itself is in the wall.
                    return None;
                }
                let t = self.refine(prev.0, tau, prev.1, d)?;
                return Some((t, self.offset(t)?.1));
            }
            prev = (tau, d);
            let along = self.unit.dot(&tc.frame.tangent);
            let r_here = ph.r_min_between(tc.s, tc.s);
            let step = if tc.rho < r_here - 1e-9 {
                // Grow the jump's arclength range until its inner radius
                // bound is self-consistent.
                let mut radius = r_here;
                let mut jump = 0.0;
                for _ in 0..6 {
                    jump = self.radial_jump(&tc, radius).min(bend_limit);
                    let s_end = tc.s + jump.min(4.0 * ph.length()) * along;
                    let r = ph.r_min_between(tc.s, s_end);
                    if r >= radius {
                        break;
                    }
                    radius = r;
                }
                if tc.rho >= radius - 1e-9 {
                    STEP_SAFETY * d.abs() / lipschitz
                } else {
                    jump.min(8.0 * ph.length())
                }
            } else {
                let bound = d.abs() / lipschitz;
                if bound < SURFACE_TOLERANCE {
                    // Close to the wall: probe ahead for the crossing.
                    let mut delta = SURFACE_TOLERANCE;
                    for _ in 0..8 {
                        let t2 = tau + delta / self.dir_norm;
                        let (d2, _) = self.offset(t2)?;
                        if d2 >= 0.0 {
                            let t = self.refine(tau, t2, d, d2)?;
                            return Some((t, self.offset(t)?.1));
                        }
                        delta *= 2.0;
                    }
                    delta / 2.0
                } else {
                    STEP_SAFETY * bound
                }
            };
            tau += step.max(1e-9) / self.dir_norm;
        }
        None
    }
}

/// Marches the pixel ray through `(u, v)`.
pub fn trace_pixel(phantom: &Phantom, pose: &Pose<f64>, k: &CameraIntrinsics<f64>, u: f64, v: f64, s_hint: f64) -> Option<Hit> {
    let dir_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
    let dir = pose.rotation() * dir_cam;
    let dir_norm = dir.norm();
    let mut m = Marcher {
        phantom,
        origin: *pose.translation(),
        dir,
        dir_norm,
        unit: dir / dir_norm,
        hint: s_hint,
    };
    let (tau, tc) = m.trace()?;
    Some(Hit {
        depth: tau,
        point: m.origin + dir * tau,
        s: tc.s,
        theta: tc.theta,
        normal: phantom.inward_normal(&tc),
    })
}

/// Radiance reaching the camera from a hit with unit attenuation.
pub fn shade(hit: &Hit, camera: &Vector3<f64>, lighting: &LightingSpec) -> f64 {
    let to_cam = camera - hit.point;
    let dist2 = to_cam.norm_squared();
    let l = to_cam / dist2.sqrt();
    let cos_i = hit.normal.dot(&l).max(0.0);
    let lobe = (2.0 * cos_i * cos_i - 1.0).max(0.0);
    let specular = if cos_i > 0.0 && lobe > 0.0 { lobe.powf(lighting.shininess) } else { 0.0 };
    (lighting.albedo * cos_i + lighting.specular_strength * specular) / dist2
}

/// Radiance of each pixel with unit attenuation, plus depth and labels.
struct RawFrame {
    radiance: Vec<f64>,
    depth: Vec<f32>,
    mask: Vec<bool>,
    label: Vec<u8>,
}

fn render_raw(phantom: &Phantom, pose: &Pose<f64>, k: &CameraIntrinsics<f64>, lighting: &LightingSpec) -> RawFrame {
    let (w, h) = (k.width as usize, k.height as usize);
    let s_cam = phantom.locate(pose.translation(), None).s;
    let rows: Vec<Vec<(f64, f32, bool, u8)>> = (0..h)
        .into_par_iter()
        .map(|row| {
            (0..w)
                .map(|col| match trace_pixel(phantom, pose, k, col as f64, row as f64, s_cam) {
                    Some(hit) => (
                        shade(&hit, pose.translation(), lighting),
                        hit.depth as f32,
                        true,
                        phantom.label_at(hit.s, hit.theta),
                    ),
                    None => (0.0, 0.0, false, 0),
                })
                .collect()
        })
        .collect();
    let mut raw = RawFrame {
        radiance: Vec::with_capacity(w * h),
        depth: Vec::with_capacity(w * h),
        mask: Vec::with_capacity(w * h),
        label: Vec::with_capacity(w * h),
    };
    for (r, d, m, l) in rows.into_iter().flatten() {
        raw.radiance.push(r);
        raw.depth.push(d);
        raw.mask.push(m && d > 0.0);
        raw.label.push(l);
    }
    raw
}

/// Exposure that maps the 95th percentile of hit radiance to 0.9.
fn exposure_for(raw: &RawFrame) -> f64 {
    let mut hits: Vec<f64> = raw
        .radiance
        .iter()
        .zip(&raw.mask)
        .filter(|(_, &m)| m)
        .map(|(&r, _)| r)
        .collect();
    if hits.is_empty() {
        return 1.0;
    }
    hits.sort_by(f64::total_cmp);
    let p95 = quantile_sorted(&hits, 0.95);
    if p95 > 0.0 {
        EXPOSURE_TARGET / p95
    } else {
        1.0
    }
}

fn finish(raw: RawFrame, pose: &Pose<f64>, k: &CameraIntrinsics<f64>, attenuation: f64, exposure: f64) -> Result<RenderedFrame> {
    let (w, h) = (k.width as usize, k.height as usize);
    let radiance: Vec<f64> = raw.radiance.iter().map(|&r| attenuation * r).collect();
    let intensity = radiance.iter().map(|&r| (r * exposure).clamp(0.0, 1.0)).collect();
    Ok(RenderedFrame {
        radiance: Grid::from_vec(w, h, radiance).expect("sized"),
        intensity: Grid::from_vec(w, h, intensity).expect("sized"),
        depth: DepthFrame::new(
            Grid::from_vec(w, h, raw.depth).expect("sized"),
            Grid::from_vec(w, h, raw.mask).expect("sized"),
        )?,
        label: Grid::from_vec(w, h, raw.label).expect("sized"),
        pose: *pose,
        intrinsics: *k,
    })
}

/// Renders one view. Without an explicit exposure the frame is tone-mapped
/// on its own unattenuated radiance.
pub fn render(
    phantom: &Phantom,
    pose: &Pose<f64>,
    k: &CameraIntrinsics<f64>,
    lighting: &LightingSpec,
    attenuation: f64,
    exposure: Option<f64>,
) -> Result<RenderedFrame> {
    if !(attenuation >= 0.0 && attenuation.is_finite()) {
        return Err(Error::invalid("attenuation must be non-negative"));
    }
    if phantom.sdf(pose.translation()) >= 0.0 {
        return Err(Error::invalid("camera is outside the lumen"));
    }
    let raw = render_raw(phantom, pose, k, lighting);
    let exposure = exposure.unwrap_or_else(|| exposure_for(&raw));
    finish(raw, pose, k, attenuation, exposure)
}

#[derive(Debug, Clone)]
pub struct RenderedSequence {
    pub frames: Vec<RenderedFrame>,
    /// Shared tone-mapping scale, set from the first frame.
    pub exposure: f64,
    pub attenuation: f64,
}

/// Renders every pose of a trajectory with one exposure derived from the
/// first frame's unattenuated radiance.
pub fn render_sequence(phantom: &Phantom, trajectory: &Trajectory, lighting: &LightingSpec) -> Result<RenderedSequence> {
    let k = &trajectory.intrinsics;
    let mut exposure = None;
    let mut frames = Vec::with_capacity(trajectory.poses.len());
    for (i, pose) in trajectory.poses.iter().enumerate() {
        if phantom.sdf(pose.translation()) >= 0.0 {
            return Err(Error::invalid(format!("camera {i} is outside the lumen")));
        }
        let raw = render_raw(phantom, pose, k, lighting);
        let e = *exposure.get_or_insert_with(|| exposure_for(&raw));
        let frame = finish(raw, pose, k, trajectory.attenuation, e)?;
        let missing = frame.depth.width() * frame.depth.height() - frame.depth.valid_count();
        log::debug!("frame {i}: {missing} rays escaped");
        frames.push(frame);
    }
    Ok(RenderedSequence {
        frames,
        exposure: exposure.unwrap_or(1.0),
        attenuation: trajectory.attenuation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthcolon::phantom::{build_phantom, PhantomSpec};

    fn axial() -> (Phantom, Pose<f64>, CameraIntrinsics<f64>) {
        let ph = build_phantom(&PhantomSpec::cylinder(10.0, 300.0)).unwrap();
        let pose = Pose::from_translation(Vector3::new(0.0, 0.0, 20.0));
        let k = CameraIntrinsics::from_fov(48, 48, 90f64.to_radians()).unwrap();
        (ph, pose, k)
    }

    #[test]
    fn axial_cylinder_depth_is_exact() {
        let (ph, pose, k) = axial();
        let lighting = LightingSpec::default();
        let f = render(&ph, &pose, &k, &lighting, 1.0, None).unwrap();
        for row in 0..48 {
            for col in 0..48 {
                let x = (col as f64 - k.cx) / k.fx;
                let y = (row as f64 - k.cy) / k.fy;
                let m = (x * x + y * y).sqrt();
                let z = 10.0 / m;
                match f.depth.depth(col, row) {
                    Some(d) => assert!((d as f64 - z).abs() < 1e-3, "({col},{row}) {d} vs {z}"),
                    None => assert!(z > 280.0),
                }
            }
        }
    }

    #[test]
    fn attenuation_is_linear() {
        let (ph, pose, k) = axial();
        let l = LightingSpec::default();
        let a = render(&ph, &pose, &k, &l, 0.4, Some(1.0)).unwrap();
        let b = render(&ph, &pose, &k, &l, 0.8, Some(1.0)).unwrap();
        for (x, y) in a.radiance.as_slice().iter().zip(b.radiance.as_slice()) {
            assert_eq!(2.0 * x, *y);
        }
        let z = render(&ph, &pose, &k, &l, 0.0, None).unwrap();
        assert!(z.intensity.as_slice().iter().all(|&x| x == 0.0));
        assert_eq!(z.depth, a.depth);
    }

    #[test]
    fn lambert_falls_off_with_distance() {
        let (ph, pose, k) = axial();
        let l = LightingSpec {
            specular_strength: 0.0,
            ..Default::default()
        };
        let f = render(&ph, &pose, &k, &l, 1.0, Some(1.0)).unwrap();
        let row = 24;
        let mut samples: Vec<(f32, f64)> = (0..48)
            .filter_map(|c| f.depth.depth(c, row).map(|d| (d, f.radiance.at(c, row))))
            .collect();
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in samples.windows(2) {
            if w[1].0 > w[0].0 {
                assert!(w[1].1 < w[0].1);
            }
        }
    }

    #[test]
    fn hits_lie_on_the_default_phantom() {
        let ph = build_phantom(&PhantomSpec::default()).unwrap();
        let f = ph.curve().frame(60.0);
        let pose = Pose::new(
            nalgebra::Matrix3::from_columns(&[f.normal.cross(&f.tangent), f.normal, f.tangent]),
            f.position,
        )
        .unwrap();
        let k = CameraIntrinsics::from_fov(32, 32, 90f64.to_radians()).unwrap();
        let frame = render(&ph, &pose, &k, &LightingSpec::default(), 1.0, None).unwrap();
        assert!(frame.depth.valid_count() > 900);
        for row in 0..32 {
            for col in 0..32 {
                if let Some(d) = frame.depth.depth(col, row) {
                    let pc = crate::geometry::backproject_unchecked(col as f64, row as f64, d as f64, &k);
                    let pw = pose.transform(&pc);
                    assert!(ph.sdf(&pw).abs() < 2e-3);
                }
            }
        }
        assert!(frame.label.as_slice().iter().any(|&l| l == 1));
    }
}
