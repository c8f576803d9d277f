//! Procedural colon phantom: a tube around a smooth centerline whose radius
//! carries sinusoidal haustral folds and Gaussian polyps growing into the
//! lumen.
//!
//! In tube coordinates `(s, rho, theta)` the wall sits at `rho = r(s, theta)`
//! with
//!
//! ```text
//! r = r0 * (1 + a * sin(2 pi s / lambda)) - sum_i h_i * exp(-d_i^2 / (2 sigma_i^2))
//! d_i^2 = (s - s_i)^2 + (r0 * wrap(theta - theta_i))^2,   sigma_i = width_i / 4
//! ```
//!
//! A polyp's labeled footprint is `d_i <= width_i / 2`. The signed distance
//! is negative inside the lumen.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::curve::{Curve, TubeCoords};
use crate::error::{Error, Result};
use crate::reconstruct::{LABEL_MUCOSA, LABEL_POLYP};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolypSpec {
    /// Arclength of the polyp center (mm).
    pub s: f64,
    /// Angle of the polyp center (rad).
    pub theta: f64,
    /// Protrusion into the lumen (mm).
    pub height: f64,
    /// Diameter of the labeled footprint (mm).
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    /// Centerline control points (mm).
    pub centerline: Vec<[f64; 3]>,
    pub base_radius: f64,
    /// Fold amplitude as a fraction of the base radius.
    pub haustra_amplitude: f64,
    pub haustra_wavelength: f64,
    pub polyps: Vec<PolypSpec>,
    /// Number of extra polyps placed at random along the tube.
    pub random_polyps: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    /// A gently bending 240 mm segment with folds and two polyps.
    fn default() -> Self {
        Self {
            centerline: vec![
                [0.0, 0.0, 0.0],
                [0.0, 0.0, 60.0],
                [8.0, 3.0, 120.0],
                [14.0, 0.0, 180.0],
                [14.0, -4.0, 240.0],
            ],
            base_radius: 12.0,
            haustra_amplitude: 0.08,
            haustra_wavelength: 24.0,
            polyps: vec![
                PolypSpec {
                    s: 70.0,
                    theta: 1.2,
                    height: 3.0,
                    width: 8.0,
                },
                PolypSpec {
                    s: 140.0,
                    theta: 4.0,
                    height: 2.0,
                    width: 6.0,
                },
            ],
            random_polyps: 0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    /// Straight tube along `+z` from the origin with no folds or polyps.
    pub fn cylinder(radius: f64, length: f64) -> Self {
        Self {
            centerline: vec![[0.0, 0.0, 0.0], [0.0, 0.0, length]],
            base_radius: radius,
            haustra_amplitude: 0.0,
            haustra_wavelength: 1.0,
            polyps: Vec::new(),
            random_polyps: 0,
            seed: 0,
        }
    }
}

/// Arclength bin width of the inner-radius table (mm).
const RMIN_BIN: f64 = 1.0;
const CHECK_DS: f64 = 0.25;
const CHECK_THETA: usize = 256;

/// Built phantom with precomputed bounds for ray marching.
#[derive(Debug, Clone)]
pub struct Phantom {
    spec: PhantomSpec,
    polyps: Vec<PolypSpec>,
    curve: Curve,
    /// Lower bound of `r` per arclength bin.
    rmin_bins: Vec<f64>,
    r_min: f64,
    r_max: f64,
    /// Bounds of `|dr/ds|` and `|dr/dtheta|`.
    max_rs: f64,
    max_rtheta: f64,
}

/// Radius and its partial derivatives at one `(s, theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusSample {
    pub r: f64,
    pub r_s: f64,
    pub r_theta: f64,
}

fn wrap_angle(x: f64) -> f64 {
    let t = x.rem_euclid(std::f64::consts::TAU);
    if t > std::f64::consts::PI {
        t - std::f64::consts::TAU
    } else {
        t
    }
}

pub fn build_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    if !(spec.base_radius > 0.0 && spec.base_radius.is_finite()) {
        return Err(Error::invalid("base radius must be positive"));
    }
    if !(0.0..1.0).contains(&spec.haustra_amplitude) {
        return Err(Error::invalid("haustra amplitude must be in [0, 1)"));
    }
    if !(spec.haustra_wavelength > 0.0 && spec.haustra_wavelength.is_finite()) {
        return Err(Error::invalid("haustra wavelength must be positive"));
    }
    let control: Vec<Vector3<f64>> = spec.centerline.iter().map(|p| Vector3::from(*p)).collect();
    let curve = Curve::new(&control)?;

    let mut polyps = spec.polyps.clone();
    if spec.random_polyps > 0 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);
        let len = curve.length();
        for _ in 0..spec.random_polyps {
            polyps.push(PolypSpec {
                s: rng.random_range(0.1 * len..0.9 * len),
                theta: rng.random_range(0.0..std::f64::consts::TAU),
                height: rng.random_range(0.1..0.3) * spec.base_radius,
                width: rng.random_range(0.3..0.7) * spec.base_radius,
            });
        }
    }
    for p in &polyps {
        if !(p.height >= 0.0 && p.height < spec.base_radius) {
            return Err(Error::invalid("polyp height must be in [0, base radius)"));
        }
        if !(p.width > 0.0) || !p.s.is_finite() || !p.theta.is_finite() {
            return Err(Error::invalid("polyp width must be positive and its position finite"));
        }
    }

    let mut phantom = Phantom {
        spec: spec.clone(),
        polyps,
        curve,
        rmin_bins: Vec::new(),
        r_min: 0.0,
        r_max: 0.0,
        max_rs: 0.0,
        max_rtheta: 0.0,
    };
    let len = phantom.curve.length();
    let n_bins = (len / RMIN_BIN).ceil().max(1.0) as usize;
    let mut raw_bins = vec![f64::INFINITY; n_bins];
    let (mut r_min, mut r_max, mut max_rs, mut max_rt) = (f64::INFINITY, 0.0f64, 0.0f64, 0.0f64);
    let n_s = (len / CHECK_DS).ceil() as usize;
    for i in 0..=n_s {
        let s = (i as f64 * CHECK_DS).min(len);
        let bin = ((s / RMIN_BIN) as usize).min(n_bins - 1);
        for j in 0..CHECK_THETA {
            let theta = j as f64 * std::f64::consts::TAU / CHECK_THETA as f64;
            let r = phantom.radius(s, theta);
            raw_bins[bin] = raw_bins[bin].min(r.r);
            r_min = r_min.min(r.r);
            r_max = r_max.max(r.r);
            max_rs = max_rs.max(r.r_s.abs());
            max_rt = max_rt.max(r.r_theta.abs());
        }
    }
    if r_min <= 0.0 {
        return Err(Error::invalid("tube radius reaches zero (self-intersecting phantom)"));
    }
    let k = phantom.curve.max_curvature();
    if k * r_max >= 0.5 {
        return Err(Error::invalid("centerline bends too tightly for the tube radius"));
    }
    // Slack for variation between check samples.
    let slack = max_rs * CHECK_DS + max_rt * std::f64::consts::PI / CHECK_THETA as f64 + 1e-6;
    // A bin also covers its neighbors so lookups near bin edges stay safe.
    phantom.rmin_bins = (0..n_bins)
        .map(|b| {
            let lo = b.saturating_sub(1);
            let hi = (b + 1).min(n_bins - 1);
            raw_bins[lo..=hi].iter().copied().fold(f64::INFINITY, f64::min) - slack
        })
        .collect();
    phantom.r_min = r_min - slack;
    phantom.r_max = r_max + slack;
    phantom.max_rs = max_rs * 1.05 + 1e-9;
    phantom.max_rtheta = max_rt * 1.05 + 1e-9;
    if phantom.r_min <= 0.0 {
        return Err(Error::invalid("tube radius comes too close to zero"));
    }
    Ok(phantom)
}

impl Phantom {
    pub fn spec(&self) -> &PhantomSpec {
        &self.spec
    }

    /// Explicit and randomly placed polyps.
    pub fn polyps(&self) -> &[PolypSpec] {
        &self.polyps
    }

    pub fn curve(&self) -> &Curve {
        &self.curve
    }

    pub fn length(&self) -> f64 {
        self.curve.length()
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn radius(&self, s: f64, theta: f64) -> RadiusSample {
        let r0 = self.spec.base_radius;
        let w = std::f64::consts::TAU / self.spec.haustra_wavelength;
        let a = self.spec.haustra_amplitude;
        let mut r = r0 * (1.0 + a * (w * s).sin());
        let mut r_s = r0 * a * w * (w * s).cos();
        let mut r_theta = 0.0;
        for p in &self.polyps {
            let sigma = p.width / 4.0;
            let ds = s - p.s;
            let dt = wrap_angle(theta - p.theta);
            let e = p.height * (-(ds * ds + r0 * r0 * dt * dt) / (2.0 * sigma * sigma)).exp();
            r -= e;
            r_s += e * ds / (sigma * sigma);
            r_theta += e * r0 * r0 * dt / (sigma * sigma);
        }
        RadiusSample { r, r_s, r_theta }
    }

    /// Lower bound of the radius over arclengths in `[s_a, s_b]`.
    pub(crate) fn r_min_between(&self, s_a: f64, s_b: f64) -> f64 {
        let (lo, hi) = if s_a <= s_b { (s_a, s_b) } else { (s_b, s_a) };
        let n = self.rmin_bins.len();
        let bin = |s: f64| ((s / RMIN_BIN).floor().max(0.0) as usize).min(n - 1);
        if hi < 0.0 || lo > self.length() {
            return self.r_min;
        }
        self.rmin_bins[bin(lo)..=bin(hi)].iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Bound on the gradient norm of `rho - r` away from the centerline
    /// (`rho >= r_min / 2`).
    pub(crate) fn lipschitz(&self) -> f64 {
        let bend = (1.0 - self.curve.max_curvature() * self.r_max).max(0.1);
        let rs = self.max_rs / bend;
        let rt = 2.0 * self.max_rtheta / self.r_min;
        (1.0 + rs * rs + rt * rt).sqrt()
    }

    pub fn locate(&self, p: &Vector3<f64>, hint: Option<f64>) -> TubeCoords {
        self.curve.locate(p, hint)
    }

    /// `rho - r(s, theta)`: zero on the wall, negative inside. Not a
    /// distance; see [`Phantom::sdf`].
    pub fn wall_offset(&self, tc: &TubeCoords) -> f64 {
        tc.rho - self.radius(tc.s, tc.theta).r
    }

    /// Gradient of [`Phantom::wall_offset`] and its first-order distance
    /// normalization at the given coordinates.
    fn offset_gradient(&self, tc: &TubeCoords) -> (Vector3<f64>, f64) {
        let rs = self.radius(tc.s, tc.theta);
        let stretch = (1.0 - tc.frame.curvature.dot(&tc.radial) * tc.rho).max(0.1);
        let rho_eff = tc.rho.max(self.r_min / 2.0);
        let e_theta = tc.frame.tangent.cross(&tc.radial);
        let grad = tc.radial - tc.frame.tangent * (rs.r_s / stretch) - e_theta * (rs.r_theta / rho_eff);
        (grad, rs.r)
    }

    /// Signed distance to the wall, first-order accurate near the wall.
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        self.sdf_with_hint(p, None)
    }

    pub fn sdf_with_hint(&self, p: &Vector3<f64>, hint: Option<f64>) -> f64 {
        let tc = self.locate(p, hint);
        let (grad, r) = self.offset_gradient(&tc);
        (tc.rho - r) / grad.norm()
    }

    /// Unit wall normal pointing into the lumen.
    pub fn inward_normal(&self, tc: &TubeCoords) -> Vector3<f64> {
        -self.offset_gradient(tc).0.normalize()
    }

    pub fn label_at(&self, s: f64, theta: f64) -> u8 {
        let r0 = self.spec.base_radius;
        let hit = self.polyps.iter().any(|p| {
            let ds = s - p.s;
            let dt = wrap_angle(theta - p.theta) * r0;
            (ds * ds + dt * dt).sqrt() <= p.width / 2.0
        });
        if hit {
            LABEL_POLYP
        } else {
            LABEL_MUCOSA
        }
    }

    pub fn label(&self, p: &Vector3<f64>) -> u8 {
        let tc = self.locate(p, None);
        self.label_at(tc.s, tc.theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_cylinder_sdf_is_exact() {
        let ph = build_phantom(&PhantomSpec::cylinder(10.0, 100.0)).unwrap();
        for (x, y, z) in [(3.0f64, 4.0f64, 20.0f64), (0.0, 12.0, 50.0), (-7.0, 0.5, 99.0), (0.0, 0.1, 1.0)] {
            let p = Vector3::new(x, y, z);
            let r = (x * x + y * y).sqrt();
            assert!((ph.sdf(&p) - (r - 10.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn validation() {
        let mut s = PhantomSpec::default();
        s.base_radius = 0.0;
        assert!(build_phantom(&s).is_err());
        let mut s = PhantomSpec::default();
        s.haustra_amplitude = 1.0;
        assert!(build_phantom(&s).is_err());
        let mut s = PhantomSpec::default();
        s.polyps[0].height = 12.0;
        assert!(build_phantom(&s).is_err());
        // Overlapping tall polyps close the lumen.
        let mut s = PhantomSpec::cylinder(5.0, 50.0);
        for theta in [0.0, 1.0, 2.0, 3.0, 4.0, 5.0] {
            s.polyps.push(PolypSpec { s: 25.0, theta, height: 4.9, width: 40.0 });
        }
        assert!(build_phantom(&s).is_err());
        assert!(build_phantom(&PhantomSpec::default()).is_ok());
    }

    #[test]
    fn wall_points_have_zero_sdf() {
        let ph = build_phantom(&PhantomSpec::default()).unwrap();
        for i in 0..50 {
            let s = 5.0 + i as f64 * 4.5;
            let theta = i as f64 * 0.7;
            let f = ph.curve().frame(s);
            let dir = f.normal * theta.cos() + f.binormal * theta.sin();
            // Root of the radial offset along the ray from the centerline.
            let (mut lo, mut hi) = (0.0, 2.0 * ph.r_max());
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if ph.sdf_with_hint(&(f.position + dir * mid), Some(s)) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let p = f.position + dir * lo;
            assert!(ph.sdf(&p).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_is_unit_near_wall() {
        let ph = build_phantom(&PhantomSpec::default()).unwrap();
        let h = 1e-5;
        for i in 0..40 {
            let s = 10.0 + i as f64 * 5.3;
            let theta = i as f64 * 1.1;
            let f = ph.curve().frame(s);
            let dir = f.normal * theta.cos() + f.binormal * theta.sin();
            let r = ph.radius(s, theta).r;
            let p = f.position + dir * (r - 0.05);
            let g = Vector3::from_fn(|k, _| {
                let mut e = Vector3::zeros();
                e[k] = h;
                (ph.sdf(&(p + e)) - ph.sdf(&(p - e))) / (2.0 * h)
            });
            assert!((g.norm() - 1.0).abs() < 0.05, "|grad| = {}", g.norm());
        }
    }

    #[test]
    fn polyp_footprint_is_labeled() {
        let ph = build_phantom(&PhantomSpec::default()).unwrap();
        let p = ph.spec().polyps[0];
        assert_eq!(ph.label_at(p.s, p.theta), LABEL_POLYP);
        assert_eq!(ph.label_at(p.s + p.width, p.theta), LABEL_MUCOSA);
        assert_eq!(ph.label_at(p.s, p.theta + std::f64::consts::PI), LABEL_MUCOSA);
    }

    #[test]
    fn random_polyps_are_seeded() {
        let mut s = PhantomSpec::default();
        s.random_polyps = 3;
        s.seed = 9;
        let a = build_phantom(&s).unwrap();
        let b = build_phantom(&s).unwrap();
        assert_eq!(a.polyps(), b.polyps());
        assert_eq!(a.polyps().len(), 5);
    }
}
