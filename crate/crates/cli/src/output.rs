//! Structured calibration result (JSON).

use radcal_core::Pose;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverMetadata {
    pub name: String,
    pub ransac: bool,
    /// RANSAC seed; absent when RANSAC is off.
    pub seed: Option<u64>,
    pub ransac_trials: Option<usize>,
    pub iterations: usize,
    pub final_cost: f64,
    pub converged: bool,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutput {
    /// Radar-to-camera rotation, row-major.
    pub rotation_matrix: [[f64; 3]; 3],
    /// Unit quaternion `(w, x, y, z)` with `w ≥ 0`.
    pub quaternion_wxyz: [f64; 4],
    /// Intrinsic XYZ Euler angles, `R = Rx Ry Rz`.
    pub euler_xyz_rad: [f64; 3],
    pub translation_m: [f64; 3],
    pub inlier_indices: Vec<usize>,
    /// Squared residual of every input point under the chosen solver's
    /// objective; `null` for points behind the camera.
    pub residuals: Vec<Option<f64>>,
    pub solver: SolverMetadata,
}

impl CalibrationOutput {
    pub fn new(
        pose: &Pose,
        inlier_indices: Vec<usize>,
        residuals: Vec<Option<f64>>,
        solver: SolverMetadata,
    ) -> Self {
        let m = pose.rotation_matrix();
        let mut q = *pose.quaternion().quaternion();
        if q.w < 0.0 {
            q = -q;
        }
        let e = pose.euler_xyz();
        let t = pose.translation();
        Self {
            rotation_matrix: [0, 1, 2].map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)]]),
            quaternion_wxyz: [q.w, q.i, q.j, q.k],
            euler_xyz_rad: [e.x, e.y, e.z],
            translation_m: [t.x, t.y, t.z],
            inlier_indices,
            residuals,
            solver,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("finite floats serialize")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
