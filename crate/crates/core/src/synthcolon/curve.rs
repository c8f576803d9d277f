//! Arclength-parameterized centerline with rotation-minimizing frames.
//!
//! Control points are interpolated with a centripetal Catmull-Rom spline,
//! resampled at a fixed arclength spacing, and evaluated by linear
//! interpolation between samples. Beyond either end the curve continues as
//! a straight line along the end tangent. Collinear control points give an
//! exact straight line.

use nalgebra::Vector3;

use crate::coverage::perpendicular_reference;
use crate::error::{Error, Result};

/// Arclength spacing of the resampled curve (mm).
pub const SAMPLE_SPACING: f64 = 0.5;
const DENSE_PER_SEGMENT: usize = 512;

/// Local frame at one arclength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveFrame {
    pub position: Vector3<f64>,
    pub tangent: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub binormal: Vector3<f64>,
    /// `dT/ds`.
    pub curvature: Vector3<f64>,
}

/// Point expressed in tube coordinates around the curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubeCoords {
    pub s: f64,
    pub rho: f64,
    /// In `[0, 2 pi)`, measured from `normal` toward `binormal`.
    pub theta: f64,
    pub frame: CurveFrame,
    /// Unit vector from the curve toward the point (`normal` on the curve).
    pub radial: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct Curve {
    positions: Vec<Vector3<f64>>,
    tangents: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
    curvatures: Vec<Vector3<f64>>,
    spacing: f64,
    length: f64,
    straight: bool,
    max_curvature: f64,
}

fn catmull_rom(p: [Vector3<f64>; 4], t: f64) -> Vector3<f64> {
    // Centripetal parameterization (Barry-Goldman pyramid).
    let knot = |a: &Vector3<f64>, b: &Vector3<f64>| (b - a).norm().sqrt().max(1e-12);
    let t0 = 0.0;
    let t1 = t0 + knot(&p[0], &p[1]);
    let t2 = t1 + knot(&p[1], &p[2]);
    let t3 = t2 + knot(&p[2], &p[3]);
    let u = t1 + t * (t2 - t1);
    let lerp = |a: &Vector3<f64>, b: &Vector3<f64>, ta: f64, tb: f64| a * ((tb - u) / (tb - ta)) + b * ((u - ta) / (tb - ta));
    let a1 = lerp(&p[0], &p[1], t0, t1);
    let a2 = lerp(&p[1], &p[2], t1, t2);
    let a3 = lerp(&p[2], &p[3], t2, t3);
    let b1 = lerp(&a1, &a2, t0, t2);
    let b2 = lerp(&a2, &a3, t1, t3);
    lerp(&b1, &b2, t1, t2)
}

impl Curve {
    pub fn new(control: &[Vector3<f64>]) -> Result<Self> {
        if control.len() < 2 {
            return Err(Error::invalid("centerline needs at least 2 control points"));
        }
        if control.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("centerline control points"));
        }
        if control.windows(2).any(|w| (w[1] - w[0]).norm() < 1e-9) {
            return Err(Error::invalid("centerline control points must be distinct"));
        }
        let first = control[0];
        let last = control[control.len() - 1];
        let chord = last - first;
        let straight = control.iter().all(|p| {
            let d = p - first;
            d.cross(&chord).norm() <= 1e-12 * chord.norm() * d.norm().max(1.0) && d.dot(&chord) >= 0.0
        }) && control.windows(2).all(|w| (w[1] - w[0]).dot(&chord) > 0.0);
        if straight {
            return Ok(Self::line(first, chord));
        }

        // Dense spline samples with phantom end points mirrored outward.
        let n = control.len();
        let at = |i: isize| -> Vector3<f64> {
            if i < 0 {
                control[0] * 2.0 - control[1]
            } else if i as usize >= n {
                control[n - 1] * 2.0 - control[n - 2]
            } else {
                control[i as usize]
            }
        };
        let mut dense = vec![control[0]];
        for seg in 0..n - 1 {
            let i = seg as isize;
            let p = [at(i - 1), at(i), at(i + 1), at(i + 2)];
            for k in 1..=DENSE_PER_SEGMENT {
                dense.push(catmull_rom(p, k as f64 / DENSE_PER_SEGMENT as f64));
            }
        }
        let mut cumulative = vec![0.0];
        for w in dense.windows(2) {
            cumulative.push(cumulative.last().unwrap() + (w[1] - w[0]).norm());
        }
        let total = *cumulative.last().unwrap();
        let n_seg = (total / SAMPLE_SPACING).round().max(1.0) as usize;
        let spacing = total / n_seg as f64;
        let mut positions = Vec::with_capacity(n_seg + 1);
        let mut j = 0;
        for k in 0..=n_seg {
            let target = (k as f64 * spacing).min(total);
            while j + 2 < cumulative.len() && cumulative[j + 1] < target {
                j += 1;
            }
            let span = cumulative[j + 1] - cumulative[j];
            let t = if span > 0.0 { ((target - cumulative[j]) / span).clamp(0.0, 1.0) } else { 0.0 };
            positions.push(dense[j] + (dense[j + 1] - dense[j]) * t);
        }
        let m = positions.len();
        let tangents: Vec<Vector3<f64>> = (0..m)
            .map(|k| {
                let a = positions[k.saturating_sub(1)];
                let b = positions[(k + 1).min(m - 1)];
                (b - a).normalize()
            })
            .collect();
        let curvatures: Vec<Vector3<f64>> = (0..m)
            .map(|k| {
                let a = k.saturating_sub(1);
                let b = (k + 1).min(m - 1);
                (tangents[b] - tangents[a]) / ((b - a) as f64 * spacing)
            })
            .collect();
        // Double-reflection rotation-minimizing frames.
        let mut normals = vec![perpendicular_reference(&tangents[0])];
        for k in 0..m - 1 {
            let v1 = positions[k + 1] - positions[k];
            let c1 = v1.dot(&v1);
            let r_l = normals[k] - v1 * (2.0 / c1 * v1.dot(&normals[k]));
            let t_l = tangents[k] - v1 * (2.0 / c1 * v1.dot(&tangents[k]));
            let v2 = tangents[k + 1] - t_l;
            let c2 = v2.dot(&v2);
            let next = if c2 > 1e-30 { r_l - v2 * (2.0 / c2 * v2.dot(&r_l)) } else { r_l };
            let t = tangents[k + 1];
            normals.push((next - t * next.dot(&t)).normalize());
        }
        let max_curvature = curvatures.iter().map(|c| c.norm()).fold(0.0, f64::max);
        Ok(Self {
            positions,
            tangents,
            normals,
            curvatures,
            spacing,
            length: n_seg as f64 * spacing,
            straight: false,
            max_curvature,
        })
    }

    fn line(start: Vector3<f64>, chord: Vector3<f64>) -> Self {
        let length = chord.norm();
        let t = chord / length;
        let end = start + t * length;
        Self {
            positions: vec![start, end],
            tangents: vec![t, t],
            normals: vec![perpendicular_reference(&t); 2],
            curvatures: vec![Vector3::zeros(); 2],
            spacing: length,
            length,
            straight: true,
            max_curvature: 0.0,
        }
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn is_straight(&self) -> bool {
        self.straight
    }

    pub fn max_curvature(&self) -> f64 {
        self.max_curvature
    }

    fn n_segments(&self) -> usize {
        self.positions.len() - 1
    }

    /// Frame at segment `k`, fraction `t` in `[0, 1]`.
    fn frame_in_segment(&self, k: usize, t: f64) -> CurveFrame {
        let lerp = |v: &[Vector3<f64>]| v[k] + (v[k + 1] - v[k]) * t;
        let tangent = lerp(&self.tangents).normalize();
        let n = lerp(&self.normals);
        let normal = (n - tangent * n.dot(&tangent)).normalize();
        CurveFrame {
            position: lerp(&self.positions),
            tangent,
            normal,
            binormal: tangent.cross(&normal),
            curvature: lerp(&self.curvatures),
        }
    }

    /// Frame at arclength `s`; straight extrapolation outside `[0, L]`.
    pub fn frame(&self, s: f64) -> CurveFrame {
        let last = self.n_segments();
        if s <= 0.0 || s >= self.length {
            let (k, base) = if s <= 0.0 { (0, 0.0) } else { (last, self.length) };
            let t = self.tangents[k];
            let normal = self.normals[k];
            return CurveFrame {
                position: self.positions[k] + t * (s - base),
                tangent: t,
                normal,
                binormal: t.cross(&normal),
                curvature: Vector3::zeros(),
            };
        }
        let x = s / self.spacing;
        let k = (x.floor() as usize).min(last - 1);
        self.frame_in_segment(k, x - k as f64)
    }

    /// Signed along-track offset of `p` from the curve at vertex `k`.
    fn vertex_offset(&self, p: &Vector3<f64>, k: usize) -> f64 {
        (p - self.positions[k]).dot(&self.tangents[k])
    }

    /// Tube coordinates of `p`. `hint` is an arclength near the answer; it
    /// makes the lookup local instead of a scan over the whole curve.
    pub fn locate(&self, p: &Vector3<f64>, hint: Option<f64>) -> TubeCoords {
        let s = if self.straight {
            self.vertex_offset(p, 0)
        } else {
            self.project(p, hint)
        };
        let frame = self.frame(s);
        let q = p - frame.position;
        let rho = q.norm();
        let (theta, radial) = if rho > 0.0 {
            let th = q.dot(&frame.binormal).atan2(q.dot(&frame.normal));
            let th = if th < 0.0 { th + std::f64::consts::TAU } else { th };
            (if th >= std::f64::consts::TAU { 0.0 } else { th.abs() }, q / rho)
        } else {
            (0.0, frame.normal)
        };
        TubeCoords {
            s,
            rho,
            theta,
            frame,
            radial,
        }
    }

    fn project(&self, p: &Vector3<f64>, hint: Option<f64>) -> f64 {
        let last = self.n_segments();
        let mut k = match hint {
            Some(h) if h.is_finite() => ((h / self.spacing).floor().max(0.0) as usize).min(last - 1),
            _ => {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, c) in self.positions.iter().enumerate() {
                    let d = (p - c).norm_squared();
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                best.min(last - 1)
            }
        };
        // Walk to the segment whose end offsets bracket zero.
        loop {
            if self.vertex_offset(p, k) < 0.0 {
                if k == 0 {
                    return self.vertex_offset(p, 0);
                }
                k -= 1;
            } else if self.vertex_offset(p, k + 1) >= 0.0 {
                if k + 1 == last {
                    return self.length + self.vertex_offset(p, last);
                }
                k += 1;
            } else {
                break;
            }
        }
        // g(t) = (p - C(t)) . T(t) decreases through zero on [0, 1].
        let g = |t: f64| {
            let f = self.frame_in_segment(k, t);
            (p - f.position).dot(&f.tangent)
        };
        let (mut a, mut b) = (0.0, 1.0);
        let (mut ga, mut gb) = (g(a), g(b));
        let mut side = 0i8;
        for _ in 0..100 {
            let t = (a * gb - b * ga) / (gb - ga);
            let gt = g(t);
            if gt == 0.0 || (b - a) < 1e-15 {
                a = t;
                b = t;
                break;
            }
            if gt > 0.0 {
                a = t;
                ga = gt;
                if side == 1 {
                    gb /= 2.0;
                }
                side = 1;
            } else {
                b = t;
                gb = gt;
                if side == -1 {
                    ga /= 2.0;
                }
                side = -1;
            }
            if gt.abs() < 1e-13 {
                a = t;
                b = t;
                break;
            }
        }
        (k as f64 + 0.5 * (a + b)) * self.spacing
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_line_is_exact() {
        let c = Curve::new(&[Vector3::zeros(), Vector3::new(0.0, 0.0, 50.0), Vector3::new(0.0, 0.0, 100.0)]).unwrap();
        assert!(c.is_straight());
        assert_eq!(c.length(), 100.0);
        let tc = c.locate(&Vector3::new(3.0, 4.0, 42.0), None);
        assert_eq!(tc.s, 42.0);
        assert!((tc.rho - 5.0).abs() < 1e-15);
        let f = c.frame(-10.0);
        assert_eq!(f.position, Vector3::new(0.0, 0.0, -10.0));
    }

    #[test]
    fn curved_frames_are_orthonormal_and_locate_inverts() {
        let ctrl = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(10.0, 0.0, 60.0),
            Vector3::new(0.0, 15.0, 120.0),
            Vector3::new(-10.0, 5.0, 180.0),
        ];
        let c = Curve::new(&ctrl).unwrap();
        assert!(!c.is_straight());
        assert!(c.max_curvature() > 0.0);
        for i in 0..200 {
            let s = c.length() * (i as f64 + 0.37) / 200.0;
            let f = c.frame(s);
            assert!((f.tangent.norm() - 1.0).abs() < 1e-12);
            assert!(f.tangent.dot(&f.normal).abs() < 1e-12);
            let theta = i as f64 * 0.29;
            let p = f.position + (f.normal * theta.cos() + f.binormal * theta.sin()) * 7.0;
            for hint in [None, Some(s + 3.0), Some(0.0)] {
                let tc = c.locate(&p, hint);
                assert!((tc.s - s).abs() < 1e-8, "s {s} got {}", tc.s);
                assert!((tc.rho - 7.0).abs() < 1e-8);
                let wrapped = (tc.theta - theta.rem_euclid(std::f64::consts::TAU)).abs();
                assert!(wrapped < 1e-8 || (wrapped - std::f64::consts::TAU).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_bad_control_points() {
        assert!(Curve::new(&[Vector3::zeros()]).is_err());
        assert!(Curve::new(&[Vector3::zeros(), Vector3::zeros()]).is_err());
    }
}
