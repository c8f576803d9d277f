//! Pinhole camera model, rigid poses and the SE(3) exponential/logarithm.
//!
//! Conventions used throughout the crate:
//!
//! * Pixel coordinates `(u, v)` are `(column, row)`; the origin is the
//!   center of the top-left pixel.
//! * Depth is z-depth, the distance along the optical axis, not ray length.
//! * A [`Pose`] maps camera-frame points into the world frame:
//!   `p_world = R * p_cam + t`.
//! * Twists are ordered `[rho; omega]`: translational part first, rotation
//!   vector last.

use nalgebra::{Matrix3, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Pinhole intrinsics. Focal lengths and principal point in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel intrinsics with the principal point at the image center
    /// and the given horizontal field of view.
    pub fn from_fov(width: u32, height: u32, fov_x: T) -> Result<Self> {
        let two = T::lit(2.0);
        let fx = T::lit(width as f64) / (two * (fov_x / two).tan());
        let cx = T::lit((width as f64 - 1.0) / 2.0);
        let cy = T::lit((height as f64 - 1.0) / 2.0);
        Self::new(fx, fx, cx, cy, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("fx", self.fx), ("fy", self.fy), ("cx", self.cx), ("cy", self.cy)] {
            if !x.is_finite() {
                return Err(Error::invalid(format!("intrinsics {name} is not finite")));
            }
        }
        if self.width < 1 || self.height < 1 {
            return Err(Error::invalid("intrinsics image size must be at least 1x1"));
        }
        if self.fx <= T::zero() || self.fy <= T::zero() {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        let w = T::lit(self.width as f64);
        let h = T::lit(self.height as f64);
        if self.cx < T::zero() || self.cx >= w || self.cy < T::zero() || self.cy >= h {
            return Err(Error::invalid("principal point outside the image"));
        }
        Ok(())
    }

    /// True when `(u, v)` lies inside `[0, width) x [0, height)`.
    #[inline]
    pub fn contains(&self, u: T, v: T) -> bool {
        u >= T::zero()
            && v >= T::zero()
            && u < T::lit(self.width as f64)
            && v < T::lit(self.height as f64)
    }

    pub fn cast<U: Real>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics {
            fx: U::lit(self.fx.as_f64()),
            fy: U::lit(self.fy.as_f64()),
            cx: U::lit(self.cx.as_f64()),
            cy: U::lit(self.cy.as_f64()),
            width: self.width,
            height: self.height,
        }
    }
}

/// A pixel with its z-depth, `[p, d]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelDepthObservation<T> {
    pub u: T,
    pub v: T,
    pub depth: T,
}

impl<T: Real> PixelDepthObservation<T> {
    pub fn new(u: T, v: T, depth: T) -> Self {
        Self { u, v, depth }
    }

    fn check_finite(&self) -> Result<()> {
        if self.u.is_finite() && self.v.is_finite() && self.depth.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite("pixel observation"))
        }
    }
}

/// Lifts a pixel with z-depth to a camera-frame point.
pub fn backproject<T: Real>(
    obs: &PixelDepthObservation<T>,
    k: &CameraIntrinsics<T>,
) -> Result<Vector3<T>> {
    obs.check_finite()?;
    if obs.depth <= T::zero() {
        return Err(Error::invalid("depth must be positive"));
    }
    Ok(backproject_unchecked(obs.u, obs.v, obs.depth, k))
}

#[inline]
pub(crate) fn backproject_unchecked<T: Real>(u: T, v: T, z: T, k: &CameraIntrinsics<T>) -> Vector3<T> {
    Vector3::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z)
}

/// Projects a camera-frame point. The result may fall outside the image.
pub fn project<T: Real>(point: &Vector3<T>, k: &CameraIntrinsics<T>) -> Result<PixelDepthObservation<T>> {
    if !(point.x.is_finite() && point.y.is_finite() && point.z.is_finite()) {
        return Err(Error::NonFinite("camera-frame point"));
    }
    if point.z <= T::zero() {
        return Err(Error::BehindCamera { z: point.z.as_f64() });
    }
    Ok(PixelDepthObservation {
        u: k.fx * point.x / point.z + k.cx,
        v: k.fy * point.y / point.z + k.cy,
        depth: point.z,
    })
}

/// Converts a ray-length depth at pixel `(u, v)` into z-depth.
pub fn ray_length_to_z<T: Real>(u: T, v: T, ray_length: T, k: &CameraIntrinsics<T>) -> T {
    ray_length / ray_norm(u, v, k)
}

/// Converts a z-depth at pixel `(u, v)` into the distance along the ray.
pub fn z_to_ray_length<T: Real>(u: T, v: T, z: T, k: &CameraIntrinsics<T>) -> T {
    z * ray_norm(u, v, k)
}

#[inline]
fn ray_norm<T: Real>(u: T, v: T, k: &CameraIntrinsics<T>) -> T {
    let x = (u - k.cx) / k.fx;
    let y = (v - k.cy) / k.fy;
    (x * x + y * y + T::one()).sqrt()
}

/// Rigid transform from the camera frame to the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    rotation: Matrix3<T>,
    translation: Vector3<T>,
}

impl<T: Real> Default for Pose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Pose<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates `R^T R = I` and `det R = +1` to [`Real::invariant_tol`].
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("pose"));
        }
        let tol = T::invariant_tol();
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if ortho > tol {
            return Err(Error::invalid(format!("rotation is not orthonormal (deviation {ortho})")));
        }
        let det = rotation.determinant();
        if (det - T::one()).abs() > tol {
            return Err(Error::invalid(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Skips validation. Callers guarantee the rotation is proper.
    pub(crate) fn from_parts(rotation: Matrix3<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<T>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    #[inline]
    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    /// `self * other`: apply `other` first, then `self`.
    #[inline]
    pub fn compose(&self, other: &Pose<T>) -> Pose<T> {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    #[inline]
    pub fn inverse(&self) -> Pose<T> {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    /// Rotation angle of `self^-1 * other` and distance between origins.
    pub fn distance_to(&self, other: &Pose<T>) -> (T, T) {
        let rel = self.inverse().compose(other);
        let angle = so3_log(&rel.rotation).norm();
        (angle, (self.translation - other.translation).norm())
    }

    /// Projects the rotation back onto SO(3) via SVD.
    pub fn orthonormalized(&self) -> Pose<T> {
        Pose {
            rotation: nearest_rotation(&self.rotation),
            translation: self.translation,
        }
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        Pose {
            rotation: self.rotation.map(|x| U::lit(x.as_f64())),
            translation: self.translation.map(|x| U::lit(x.as_f64())),
        }
    }

    pub fn is_valid(&self) -> bool {
        Pose::new(self.rotation, self.translation).is_ok()
    }
}

/// Nearest proper rotation in the Frobenius sense.
pub fn nearest_rotation<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < T::zero() {
        d[(2, 2)] = -T::one();
    }
    u * d * v_t
}

#[inline]
pub fn hat<T: Real>(w: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -w.z,
        w.y,
        w.z,
        T::zero(),
        -w.x,
        -w.y,
        w.x,
        T::zero(),
    )
}

#[inline]
fn vee<T: Real>(m: &Matrix3<T>) -> Vector3<T> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Below this squared angle the trigonometric coefficients switch to
/// their Taylor expansions.
const SMALL_ANGLE_SQ: f64 = 1e-8;

/// Below this `sin(theta)` (with `cos(theta) < 0`) the rotation log uses the
/// symmetric-part branch. Rotation vectors recovered there are accurate to
/// about `1e-12` rad; at exactly `pi` the sign of the axis is arbitrary.
const NEAR_PI_SIN: f64 = 1e-3;

/// Rodrigues coefficients `(sin t / t, (1 - cos t)/t^2, (t - sin t)/t^3)`.
fn rodrigues_coeffs<T: Real>(theta_sq: T) -> (T, T, T) {
    if theta_sq < T::lit(SMALL_ANGLE_SQ) {
        let t2 = theta_sq;
        let t4 = t2 * t2;
        (
            T::one() - t2 / T::lit(6.0) + t4 / T::lit(120.0),
            T::lit(0.5) - t2 / T::lit(24.0) + t4 / T::lit(720.0),
            T::lit(1.0 / 6.0) - t2 / T::lit(120.0) + t4 / T::lit(5040.0),
        )
    } else {
        let theta = theta_sq.sqrt();
        let (s, c) = theta.sin_cos();
        (
            s / theta,
            (T::one() - c) / theta_sq,
            (theta - s) / (theta_sq * theta),
        )
    }
}

/// Exponential map of SO(3).
pub fn so3_exp<T: Real>(omega: &Vector3<T>) -> Matrix3<T> {
    let (a, b, _) = rodrigues_coeffs(omega.norm_squared());
    let w = hat(omega);
    Matrix3::identity() + w * a + w * w * b
}

/// Logarithm of SO(3); returns the rotation vector with angle in `[0, pi]`.
pub fn so3_log<T: Real>(r: &Matrix3<T>) -> Vector3<T> {
    let skew = vee(&(r - r.transpose())) * T::lit(0.5);
    let sin_theta = skew.norm();
    let cos_theta = ((r.trace() - T::one()) * T::lit(0.5)).clamp(-T::one(), T::one());
    let theta = sin_theta.atan2(cos_theta);

    if theta * theta < T::lit(SMALL_ANGLE_SQ) {
        // theta / sin(theta) ~ 1 + theta^2 / 6
        return skew * (T::one() + theta * theta / T::lit(6.0));
    }
    if cos_theta < T::zero() && sin_theta < T::lit(NEAR_PI_SIN) {
        // R + R^T = 2 cos(t) I + 2 (1 - cos(t)) n n^T
        let sym = (r + r.transpose()) * T::lit(0.5);
        let nn = (sym - Matrix3::identity() * cos_theta) / (T::one() - cos_theta);
        let k = (0..3)
            .max_by(|&i, &j| nn[(i, i)].partial_cmp(&nn[(j, j)]).unwrap())
            .unwrap();
        let mut n: Vector3<T> = nn.column(k).into_owned() / nn[(k, k)].max(T::zero()).sqrt();
        n /= n.norm();
        if n.dot(&skew) < T::zero() {
            n = -n;
        }
        return n * theta;
    }
    skew * (theta / sin_theta)
}

/// Exponential map of SE(3) for a twist `[rho; omega]`.
pub fn se3_exp<T: Real>(twist: &Vector6<T>) -> Pose<T> {
    let rho = Vector3::new(twist[0], twist[1], twist[2]);
    let omega = Vector3::new(twist[3], twist[4], twist[5]);
    let (a, b, c) = rodrigues_coeffs(omega.norm_squared());
    let w = hat(&omega);
    let w2 = w * w;
    let rotation = Matrix3::identity() + w * a + w2 * b;
    let v = Matrix3::identity() + w * b + w2 * c;
    Pose::from_parts(rotation, v * rho)
}

/// Logarithm of SE(3); inverse of [`se3_exp`] while the rotation angle is
/// below `pi`.
pub fn se3_log<T: Real>(pose: &Pose<T>) -> Vector6<T> {
    let omega = so3_log(&pose.rotation);
    let theta_sq = omega.norm_squared();
    let w = hat(&omega);
    // V^-1 = I - W/2 + d W^2 with d = (1 - A / (2B)) / theta^2
    let d = if theta_sq < T::lit(SMALL_ANGLE_SQ) {
        T::lit(1.0 / 12.0) + theta_sq / T::lit(720.0) + theta_sq * theta_sq / T::lit(30240.0)
    } else {
        let (a, b, _) = rodrigues_coeffs(theta_sq);
        (T::one() - a / (T::lit(2.0) * b)) / theta_sq
    };
    let v_inv = Matrix3::identity() - w * T::lit(0.5) + w * w * d;
    let rho = v_inv * pose.translation;
    Vector6::new(rho.x, rho.y, rho.z, omega.x, omega.y, omega.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(500.0, 480.0, 319.5, 239.5, 640, 480).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose<f64> {
        let tw = Vector6::from_fn(|i, _| {
            if i < 3 {
                rng.random_range(-50.0..50.0)
            } else {
                rng.random_range(-1.5..1.5)
            }
        });
        se3_exp(&tw)
    }

    #[test]
    fn intrinsics_invariants() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 1, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 1.0, 0.0, 1, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 0, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, f64::NAN, 0.0, 1, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 1).is_ok());
    }

    #[test]
    fn principal_ray_is_optical_axis() {
        let k = k();
        let p = backproject(&PixelDepthObservation::new(k.cx, k.cy, 7.0), &k).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 7.0));
        let unit = backproject(&PixelDepthObservation::new(k.cx + k.fx, k.cy, 1.0), &k).unwrap();
        assert!((unit - Vector3::new(1.0, 0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn project_rejects_behind_camera() {
        let k = k();
        assert!(matches!(
            project(&Vector3::new(0.0, 0.0, 0.0), &k),
            Err(Error::BehindCamera { .. })
        ));
        let o = project(&Vector3::new(0.0, 0.0, 3.0), &k).unwrap();
        assert_eq!((o.u, o.v, o.depth), (k.cx, k.cy, 3.0));
        assert!(project(&Vector3::new(f64::NAN, 0.0, 1.0), &k).is_err());
        assert!(backproject(&PixelDepthObservation::new(1.0, f64::INFINITY, 1.0), &k).is_err());
    }

    #[test]
    fn project_backproject_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..4 {
            let fx = rng.random_range(50.0..900.0);
            let w = rng.random_range(16..1024u32);
            let h = rng.random_range(16..1024u32);
            let k = CameraIntrinsics::new(
                fx,
                fx * rng.random_range(0.8..1.2),
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
                w,
                h,
            )
            .unwrap();
            for _ in 0..1000 {
                let obs = PixelDepthObservation::new(
                    rng.random_range(0.0..w as f64),
                    rng.random_range(0.0..h as f64),
                    rng.random_range(0.1..200.0),
                );
                let back = project(&backproject(&obs, &k).unwrap(), &k).unwrap();
                assert!((back.u - obs.u).abs() < 1e-9);
                assert!((back.v - obs.v).abs() < 1e-9);
                assert!((back.depth - obs.depth).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ray_length_conversion_round_trip() {
        let k = k();
        let z = 12.5;
        let r = z_to_ray_length(10.0, 400.0, z, &k);
        assert!(r > z);
        assert!((ray_length_to_z(10.0, 400.0, r, &k) - z).abs() < 1e-12);
        let p = backproject(&PixelDepthObservation::new(10.0, 400.0, z), &k).unwrap();
        assert!((p.norm() - r).abs() < 1e-12);
    }

    #[test]
    fn pose_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let c = random_pose(&mut rng);
            let p = Vector3::new(rng.random(), rng.random(), rng.random()) * 30.0;

            let id = a.compose(&a.inverse());
            assert!((id.rotation - Matrix3::identity()).amax() < 1e-9);
            assert!(id.translation.amax() < 1e-9);

            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            assert!((left.rotation - right.rotation).amax() < 1e-9);
            assert!((left.translation - right.translation).amax() < 1e-9);

            assert!((a.inverse().transform(&a.transform(&p)) - p).amax() < 1e-9);
            assert_eq!(Pose::identity().compose(&b), b);
        }
    }

    #[test]
    fn pose_validation() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = -1.0;
        assert!(Pose::new(m, Vector3::zeros()).is_err(), "reflection rejected");
        assert!(Pose::new(Matrix3::identity() * 1.001, Vector3::zeros()).is_err());
        assert!(Pose::<f64>::new(Matrix3::identity(), Vector3::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn exp_log_basics() {
        let id = se3_exp(&Vector6::<f64>::zeros());
        assert_eq!(id, Pose::identity());
        let pure = se3_exp(&Vector6::new(1.0, -2.0, 3.0, 0.0, 0.0, 0.0));
        assert_eq!(*pure.rotation(), Matrix3::identity());
        assert_eq!(*pure.translation(), Vector3::new(1.0, -2.0, 3.0));
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let max_angle = std::f64::consts::PI - 0.1;
        for i in 0..1000 {
            let axis = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0f64),
            )
            .normalize();
            // Mix in tiny angles to exercise the Taylor branches.
            let angle = if i % 10 == 0 {
                rng.random_range(0.0..1e-5)
            } else {
                rng.random_range(0.0..max_angle)
            };
            let omega = axis * angle;
            let rho = Vector3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
            );
            let xi = Vector6::new(rho.x, rho.y, rho.z, omega.x, omega.y, omega.z);
            let pose = se3_exp(&xi);
            assert!(pose.is_valid());
            let back = se3_log(&pose);
            assert!((back - xi).amax() < 1e-8, "twist {xi:?} came back as {back:?}");
        }
    }

    #[test]
    fn log_near_pi_is_stable() {
        let axis = Vector3::new(0.3, -0.5, 0.8).normalize();
        for eps in [1e-3, 1e-6, 1e-9] {
            let omega = axis * (std::f64::consts::PI - eps);
            let back = so3_log(&so3_exp(&omega));
            assert!((back - omega).amax() < 1e-8, "eps {eps}: {back:?}");
        }
        let at_pi = so3_log(&so3_exp(&(axis * std::f64::consts::PI)));
        assert!((at_pi.norm() - std::f64::consts::PI).abs() < 1e-9);
        assert!((at_pi.normalize().dot(&axis).abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn works_in_single_precision() {
        let k = CameraIntrinsics::<f32>::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
        let obs = PixelDepthObservation::new(12.0f32, 80.0, 5.0);
        let back = project(&backproject(&obs, &k).unwrap(), &k).unwrap();
        assert!((back.u - obs.u).abs() < 1e-4);
        let xi = Vector6::new(0.1f32, 0.2, 0.3, 0.2, -0.1, 0.05);
        assert!((se3_log(&se3_exp(&xi)) - xi).amax() < 1e-5);
    }
}
