//! Per-point residual models with analytic Jacobians.

use nalgebra::{Matrix2x3, Matrix3, RowVector3, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::lm::ResidualModel;
use super::Correspondence;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::noise::{bias_expectation, propagate_covariance, NoiseSpec};

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

fn stack<const D: usize>(
    d_omega: SMatrix<f64, D, 3>,
    d_t: SMatrix<f64, D, 3>,
) -> SMatrix<f64, D, 6> {
    let mut j = SMatrix::<f64, D, 6>::zeros();
    j.fixed_view_mut::<D, 3>(0, 0).copy_from(&d_omega);
    j.fixed_view_mut::<D, 3>(0, 3).copy_from(&d_t);
    j
}

/// Pixel reprojection residual `π(R p + t) - q`.
#[derive(Debug, Clone)]
pub struct ReprojectionModel {
    points: Vec<Vector3<f64>>,
    pixels: Vec<Vector2<f64>>,
    k: CameraIntrinsics,
}

impl ReprojectionModel {
    pub fn new(corrs: &[Correspondence], k: &CameraIntrinsics) -> Self {
        Self {
            points: corrs.iter().map(|c| *c.point().coords()).collect(),
            pixels: corrs
                .iter()
                .map(|c| Vector2::new(c.pixel().u, c.pixel().v))
                .collect(),
            k: *k,
        }
    }
}

impl ResidualModel<2> for ReprojectionModel {
    fn len(&self) -> usize {
        self.points.len()
    }

    fn depth(&self, pose: &Pose, i: usize) -> f64 {
        pose.transform(&self.points[i]).z
    }

    fn residual(&self, pose: &Pose, i: usize) -> Vector2<f64> {
        let c = pose.transform(&self.points[i]);
        Vector2::new(
            self.k.fx() * c.x / c.z + self.k.u0(),
            self.k.fy() * c.y / c.z + self.k.v0(),
        ) - self.pixels[i]
    }

    fn linearize(&self, pose: &Pose, i: usize) -> (Vector2<f64>, SMatrix<f64, 2, 6>) {
        let rp = pose.rotation() * self.points[i];
        let c = rp + pose.translation();
        let (fx, fy) = (self.k.fx(), self.k.fy());
        let iz = 1.0 / c.z;
        let a = Matrix2x3::new(
            fx * iz,
            0.0,
            -fx * c.x * iz * iz, //
            0.0,
            fy * iz,
            -fy * c.y * iz * iz,
        );
        let r =
            Vector2::new(fx * c.x * iz + self.k.u0(), fy * c.y * iz + self.k.v0()) - self.pixels[i];
        (r, stack(-a * skew(&rp), a))
    }
}

/// Algebraic point residual `x̂_{1:2} - q x̂_3` with `q` in normalized
/// image coordinates.
#[derive(Debug, Clone)]
pub struct AlgebraicModel {
    points: Vec<Vector3<f64>>,
    rays: Vec<Vector2<f64>>,
}

impl AlgebraicModel {
    pub fn new(corrs: &[Correspondence], k: &CameraIntrinsics) -> Self {
        Self {
            points: corrs.iter().map(|c| *c.point().coords()).collect(),
            rays: corrs.iter().map(|c| k.unproject(c.pixel()).xy()).collect(),
        }
    }
}

impl ResidualModel<2> for AlgebraicModel {
    fn len(&self) -> usize {
        self.points.len()
    }

    fn depth(&self, pose: &Pose, i: usize) -> f64 {
        pose.transform(&self.points[i]).z
    }

    fn residual(&self, pose: &Pose, i: usize) -> Vector2<f64> {
        let c = pose.transform(&self.points[i]);
        c.xy() - self.rays[i] * c.z
    }

    fn linearize(&self, pose: &Pose, i: usize) -> (Vector2<f64>, SMatrix<f64, 2, 6>) {
        let rp = pose.rotation() * self.points[i];
        let c = rp + pose.translation();
        let q = self.rays[i];
        let a = Matrix2x3::new(1.0, 0.0, -q.x, 0.0, 1.0, -q.y);
        (c.xy() - q * c.z, stack(-a * skew(&rp), a))
    }
}

/// How the back-projection scale `s` of the viewing ray is chosen in the
/// 3D residual `p̃ - R⁻¹(s K⁻¹[q, 1] - t) - E[δp]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// `s` is the camera-frame depth of the transformed measurement,
    /// `(R p̃ + t)_z`. The residual then has no component along the camera
    /// axis, so range information is not used.
    CameraDepth,
    /// `s` minimizes the weighted residual along the viewing ray, which
    /// profiles the unknown depth out of the likelihood.
    #[default]
    RayOptimal,
}

/// Whitened, bias-compensated 3D residual between a radar measurement and
/// the back-projected viewing ray of its pixel.
#[derive(Debug, Clone)]
pub struct UncertainPointModel {
    points: Vec<Vector3<f64>>,
    /// Measurement minus its expected bias.
    debiased: Vec<Vector3<f64>>,
    rays: Vec<Vector3<f64>>,
    /// Upper-triangular whitening factors `L`, `LᵀL = Σ⁻¹`.
    whiten: Vec<Matrix3<f64>>,
    weights: Vec<Matrix3<f64>>,
    scale: ScaleMode,
}

impl UncertainPointModel {
    /// Bias and covariance are evaluated at the measured coordinates.
    pub fn new(
        corrs: &[Correspondence],
        k: &CameraIntrinsics,
        noise: &NoiseSpec,
        scale: ScaleMode,
    ) -> Self {
        let mut model = Self {
            points: Vec::with_capacity(corrs.len()),
            debiased: Vec::with_capacity(corrs.len()),
            rays: Vec::with_capacity(corrs.len()),
            whiten: Vec::with_capacity(corrs.len()),
            weights: Vec::with_capacity(corrs.len()),
            scale,
        };
        for c in corrs {
            let p = *c.point().coords();
            let cov = propagate_covariance(c.radar(), noise).covariance;
            let l = crate::noise::whitening_factor(&cov);
            model.points.push(p);
            model.debiased.push(p - bias_expectation(c.radar(), noise));
            model.rays.push(k.unproject(c.pixel()));
            model.weights.push(l.transpose() * l);
            model.whiten.push(l);
        }
        model
    }

    pub fn scale_mode(&self) -> ScaleMode {
        self.scale
    }

    /// Squared Mahalanobis norm of point `i`'s residual.
    pub fn squared_norm(&self, pose: &Pose, i: usize) -> Result<f64> {
        let depth = self.depth(pose, i);
        if depth <= 0.0 {
            return Err(Error::BehindCamera { index: i, depth });
        }
        Ok(self.residual(pose, i).norm_squared())
    }

    /// The scale `s` and its derivatives with respect to `ω` and `t`.
    fn scale(&self, pose: &Pose, i: usize) -> (f64, RowVector3<f64>, RowVector3<f64>) {
        let r = pose.rotation_matrix();
        let t = pose.translation();
        match self.scale {
            ScaleMode::CameraDepth => {
                let rp = r * self.points[i];
                let s = rp.z + t.z;
                (
                    s,
                    RowVector3::new(rp.y, -rp.x, 0.0),
                    RowVector3::new(0.0, 0.0, 1.0),
                )
            }
            ScaleMode::RayOptimal => {
                let w = &self.weights[i];
                let rt = r.transpose();
                let d = rt * self.rays[i];
                let g = self.debiased[i] + rt * t;
                let wd = w * d;
                let den = wd.dot(&d);
                let s = wd.dot(&g) / den;
                let dd_dw = rt * skew(&self.rays[i]);
                let dg_dw = rt * skew(t);
                let wg = w * g;
                let dn_dw = wg.transpose() * dd_dw + wd.transpose() * dg_dw;
                let dn_dt = wd.transpose() * rt;
                let dden_dw = 2.0 * wd.transpose() * dd_dw;
                (s, (dn_dw - s * dden_dw) / den, dn_dt / den)
            }
        }
    }

    fn evaluate(
        &self,
        pose: &Pose,
        i: usize,
        with_jacobian: bool,
    ) -> (Vector3<f64>, Matrix3<f64>, Matrix3<f64>) {
        let rt = pose.rotation_matrix().transpose();
        let t = pose.translation();
        let ray = self.rays[i];
        let l = &self.whiten[i];
        let (s, ds_dw, ds_dt) = self.scale(pose, i);
        let m = ray * s - t;
        let r = l * (self.debiased[i] - rt * m);
        if !with_jacobian {
            return (r, Matrix3::zeros(), Matrix3::zeros());
        }
        let rt_ray = rt * ray;
        let d_omega = -l * (rt * skew(&m) + rt_ray * ds_dw);
        let d_t = -l * (rt_ray * ds_dt - rt);
        (r, d_omega, d_t)
    }
}

impl ResidualModel<3> for UncertainPointModel {
    fn len(&self) -> usize {
        self.points.len()
    }

    fn depth(&self, pose: &Pose, i: usize) -> f64 {
        pose.transform(&self.points[i]).z
    }

    fn residual(&self, pose: &Pose, i: usize) -> Vector3<f64> {
        self.evaluate(pose, i, false).0
    }

    fn linearize(&self, pose: &Pose, i: usize) -> (Vector3<f64>, SMatrix<f64, 3, 6>) {
        let (r, d_omega, d_t) = self.evaluate(pose, i, true);
        (r, stack(d_omega, d_t))
    }
}

/// Whitened 3D residual of a single correspondence (default [`ScaleMode`]).
pub fn residual_3dupnp(
    pose: &Pose,
    c: &Correspondence,
    k: &CameraIntrinsics,
    noise: &NoiseSpec,
) -> Result<Vector3<f64>> {
    residual_3dupnp_with(pose, c, k, noise, ScaleMode::default())
}

pub fn residual_3dupnp_with(
    pose: &Pose,
    c: &Correspondence,
    k: &CameraIntrinsics,
    noise: &NoiseSpec,
    scale: ScaleMode,
) -> Result<Vector3<f64>> {
    let model = UncertainPointModel::new(std::slice::from_ref(c), k, noise, scale);
    let depth = model.depth(pose, 0);
    if depth <= 0.0 {
        return Err(Error::BehindCamera { index: 0, depth });
    }
    Ok(model.residual(pose, 0))
}
