//! Value types and exact (noise-free) coordinate maps.
//!
//! Frames: radar points are expressed in the radar frame; a [`Pose`] maps the
//! radar frame into the camera frame, `p_cam = R p_radar + t`. The camera
//! looks down its +z axis.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating that a matrix is a proper rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// A radar detection in spherical coordinates.
///
/// `elevation` is the polar angle measured from the radar +z axis and
/// `azimuth` is measured in the x-y plane from +x towards +y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalPoint {
    range: f64,
    elevation: f64,
    azimuth: f64,
}

impl SphericalPoint {
    /// Builds a point, rejecting values outside `range > 0`,
    /// `elevation ∈ [0, π]`, `azimuth ∈ [0, 2π)`.
    pub fn new(range: f64, elevation: f64, azimuth: f64) -> Result<Self> {
        if !(range.is_finite() && range > 0.0) {
            return Err(Error::Domain(format!(
                "range must be positive, got {range}"
            )));
        }
        if !(0.0..=PI).contains(&elevation) {
            return Err(Error::Domain(format!(
                "elevation must lie in [0, pi], got {elevation}"
            )));
        }
        if !(0.0..TAU).contains(&azimuth) {
            return Err(Error::Domain(format!(
                "azimuth must lie in [0, 2pi), got {azimuth}"
            )));
        }
        Ok(Self {
            range,
            elevation,
            azimuth,
        })
    }

    /// Builds a point from unconstrained angles, folding them into the
    /// canonical intervals without moving the Cartesian point.
    ///
    /// Elevations outside `[0, π]` are reflected through the pole (which
    /// rotates the azimuth by π). Used for perturbed measurements whose
    /// angles may leave the canonical box.
    pub fn from_unwrapped(range: f64, elevation: f64, azimuth: f64) -> Result<Self> {
        if !(elevation.is_finite() && azimuth.is_finite()) {
            return Err(Error::Domain("angles must be finite".into()));
        }
        let mut elevation = elevation.rem_euclid(TAU);
        let mut azimuth = azimuth;
        if elevation > PI {
            elevation = TAU - elevation;
            azimuth += PI;
        }
        Self::new(range, elevation, wrap_azimuth(azimuth))
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn to_cartesian(&self) -> CartesianPoint {
        spherical_to_cartesian(self)
    }
}

/// Folds an angle into `[0, 2π)`.
pub fn wrap_azimuth(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs.
    if wrapped >= TAU {
        0.0
    } else {
        wrapped
    }
}

/// A point in a Cartesian frame (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianPoint(Vector3<f64>);

impl CartesianPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        Self::from_vector(Vector3::new(x, y, z))
    }

    pub fn from_vector(v: Vector3<f64>) -> Result<Self> {
        if v.iter().all(|c| c.is_finite()) {
            Ok(Self(v))
        } else {
            Err(Error::Domain(format!("non-finite Cartesian point {v:?}")))
        }
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn coords(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// An image observation in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Result<Self> {
        if u.is_finite() && v.is_finite() {
            Ok(Self { u, v })
        } else {
            Err(Error::Domain(format!("non-finite pixel ({u}, {v})")))
        }
    }
}

/// Zero-skew pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    fx: f64,
    fy: f64,
    u0: f64,
    v0: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, u0: f64, v0: f64) -> Result<Self> {
        if !(fx.is_finite() && fx > 0.0 && fy.is_finite() && fy > 0.0) {
            return Err(Error::Domain(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !(u0.is_finite() && v0.is_finite()) {
            return Err(Error::Domain("principal point must be finite".into()));
        }
        Ok(Self { fx, fy, u0, v0 })
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }

    pub fn fy(&self) -> f64 {
        self.fy
    }

    pub fn u0(&self) -> f64 {
        self.u0
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    /// The 3×3 calibration matrix.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.u0, //
            0.0, self.fy, self.v0, //
            0.0, 0.0, 1.0,
        )
    }

    /// `K⁻¹ [u, v, 1]ᵀ`: the viewing ray of a pixel, scaled to unit depth.
    pub fn unproject(&self, pixel: &PixelPoint) -> Vector3<f64> {
        Vector3::new(
            (pixel.u - self.u0) / self.fx,
            (pixel.v - self.v0) / self.fy,
            1.0,
        )
    }
}

/// Rigid transform from the radar frame to the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    /// Builds a pose from a raw matrix, which must be orthonormal with
    /// determinant +1 to within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation
            .iter()
            .chain(translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::Domain("pose contains non-finite values".into()));
        }
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        let det = rotation.determinant();
        if orth >= ROTATION_TOLERANCE || (det - 1.0).abs() >= ROTATION_TOLERANCE {
            return Err(Error::Domain(format!(
                "not a rotation: |RᵀR - I| = {orth:e}, det = {det}"
            )));
        }
        Ok(Self {
            rotation: Rotation3::from_matrix_unchecked(rotation),
            translation,
        })
    }

    pub fn from_parts(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::from_parts(Rotation3::identity(), Vector3::zeros())
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> &Matrix3<f64> {
        self.rotation.matrix()
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `R p + t`.
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_parts(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose::from_parts(r_inv, -(r_inv * self.translation))
    }

    /// Applies a local increment `[ω, δt]`: the rotation is pre-multiplied
    /// by `exp(ω)` and the translation shifted by `δt`. The result is
    /// re-orthonormalized.
    pub fn retract(&self, delta: &Vector6<f64>) -> Pose {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let dt = Vector3::new(delta[3], delta[4], delta[5]);
        let rotation = orthonormalize(&(Rotation3::new(omega) * self.rotation).into_inner());
        Pose::from_parts(rotation, self.translation + dt)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&self.rotation)
    }

    /// Intrinsic X-Y-Z Euler angles, see [`euler_xyz`].
    pub fn euler_xyz(&self) -> Vector3<f64> {
        euler_xyz(self.rotation.matrix())
    }
}

/// Projects a matrix onto SO(3) (nearest rotation in Frobenius norm).
pub fn orthonormalize(m: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut correction = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        correction[(2, 2)] = -1.0;
    }
    Rotation3::from_matrix_unchecked(u * correction * v_t)
}

/// Intrinsic X-Y-Z Euler angles `(a, b, c)` with `R = Rx(a) Ry(b) Rz(c)`.
///
/// `b ∈ [-π/2, π/2]`. At gimbal lock (`|cos b| ≈ 0`) the whole residual
/// rotation is attributed to `a` and `c = 0`.
pub fn euler_xyz(r: &Matrix3<f64>) -> Vector3<f64> {
    let sb = r[(0, 2)].clamp(-1.0, 1.0);
    let b = sb.asin();
    let cb = (r[(0, 0)] * r[(0, 0)] + r[(0, 1)] * r[(0, 1)]).sqrt();
    if cb > 1e-12 {
        let a = (-r[(1, 2)]).atan2(r[(2, 2)]);
        let c = (-r[(0, 1)]).atan2(r[(0, 0)]);
        Vector3::new(a, b, c)
    } else {
        let a = r[(2, 1)].atan2(r[(1, 1)]);
        Vector3::new(a, b, 0.0)
    }
}

/// Inverse of [`euler_xyz`].
pub fn rotation_from_euler_xyz(angles: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), angles.x)
        * Rotation3::from_axis_angle(&Vector3::y_axis(), angles.y)
        * Rotation3::from_axis_angle(&Vector3::z_axis(), angles.z)
}

pub fn spherical_to_cartesian(p: &SphericalPoint) -> CartesianPoint {
    let (st, ct) = p.elevation.sin_cos();
    let (sp, cp) = p.azimuth.sin_cos();
    CartesianPoint(Vector3::new(
        p.range * st * cp,
        p.range * st * sp,
        p.range * ct,
    ))
}

/// Inverse of [`spherical_to_cartesian`]. On the z axis the azimuth is 0.
pub fn cartesian_to_spherical(p: &CartesianPoint) -> Result<SphericalPoint> {
    let v = p.coords();
    let range = v.norm();
    if range == 0.0 {
        return Err(Error::Domain(
            "cannot convert the origin to spherical".into(),
        ));
    }
    let rho_xy = v.x.hypot(v.y);
    let elevation = rho_xy.atan2(v.z);
    let azimuth = if rho_xy == 0.0 {
        0.0
    } else {
        wrap_azimuth(v.y.atan2(v.x))
    };
    SphericalPoint::new(range, elevation, azimuth)
}

/// Pinhole projection of a radar-frame point.
///
/// A point with non-positive camera depth yields [`Error::BehindCamera`]
/// with index 0; [`project_points`] reports the real index.
pub fn project(p: &CartesianPoint, pose: &Pose, k: &CameraIntrinsics) -> Result<PixelPoint> {
    let cam = pose.transform(p.coords());
    if cam.z <= 0.0 {
        return Err(Error::BehindCamera {
            index: 0,
            depth: cam.z,
        });
    }
    let h = k.matrix() * cam;
    Ok(PixelPoint {
        u: h.x / h.z,
        v: h.y / h.z,
    })
}

pub fn project_points(
    points: &[CartesianPoint],
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<Vec<PixelPoint>> {
    points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            project(p, pose, k).map_err(|e| match e {
                Error::BehindCamera { depth, .. } => Error::BehindCamera { index, depth },
                other => other,
            })
        })
        .collect()
}

/// Norm of the Euler-angle vector of `R_gtᵀ R_est` (radians).
pub fn rotation_error(r_est: &Rotation3<f64>, r_gt: &Rotation3<f64>) -> f64 {
    if r_est == r_gt {
        return 0.0;
    }
    euler_xyz((r_gt.inverse() * r_est).matrix()).norm()
}

pub fn translation_error(t_est: &Vector3<f64>, t_gt: &Vector3<f64>) -> f64 {
    (t_est - t_gt).norm()
}
