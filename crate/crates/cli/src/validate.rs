//! Read-only diagnostics for correspondence files.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, Vector3};
use radcal_core::{cartesian_to_spherical, CartesianPoint};
use serde::{Deserialize, Serialize};

use crate::error::{exit, CliError};
use crate::input::{Coordinates, CorrespondenceFile};

/// Below this ratio of smallest to largest singular value of the centered
/// point matrix, the points are reported as (near-)coplanar.
pub const COPLANAR_RATIO: f64 = 1e-2;
/// Below this ratio of the middle to largest singular value, collinear.
pub const COLLINEAR_RATIO: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    /// 1-based source line, if the issue concerns one row.
    pub line: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rows: usize,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    /// 0 when clean, 1 with warnings only, the parse code with errors.
    pub fn exit_code(&self) -> u8 {
        if self.issues.iter().any(|i| i.severity == Severity::Error) {
            exit::PARSE
        } else if self.issues.is_empty() {
            exit::OK
        } else {
            exit::WARNINGS
        }
    }
}

fn error(line: Option<usize>, message: String) -> Issue {
    Issue {
        severity: Severity::Error,
        line,
        message,
    }
}

fn warning(line: Option<usize>, message: String) -> Issue {
    Issue {
        severity: Severity::Warning,
        line,
        message,
    }
}

pub fn validate_text(text: &str, degrees: bool) -> ValidationReport {
    let file = match CorrespondenceFile::parse(text) {
        Ok(f) => f,
        Err(CliError::Parse { line, message }) => {
            return ValidationReport {
                rows: 0,
                issues: vec![error((line > 0).then_some(line), message)],
            }
        }
        Err(e) => {
            return ValidationReport {
                rows: 0,
                issues: vec![error(None, e.to_string())],
            }
        }
    };
    let mut issues = Vec::new();
    if let Some(b) = &file.intrinsics {
        if let Err(e) = b.to_intrinsics() {
            issues.push(error(None, format!("intrinsics block: {e}")));
        }
    }
    if let Some(b) = &file.noise {
        if let Err(e) = b.to_noise() {
            issues.push(error(None, format!("noise block: {e}")));
        }
    }

    let scale = if degrees { PI / 180.0 } else { 1.0 };
    let mut points: Vec<(usize, Vector3<f64>)> = Vec::new();
    for (row, &line) in file.rows.iter().zip(&file.lines) {
        let at = Some(line);
        match file.coordinates {
            Coordinates::Spherical => {
                let (rho, theta, phi) = (row[0], row[1] * scale, row[2] * scale);
                let mut ok = true;
                if rho <= 0.0 {
                    issues.push(error(at, format!("range_m = {} must be positive", row[0])));
                    ok = false;
                }
                if !(0.0..=PI).contains(&theta) {
                    issues.push(error(at, format!("theta_rad = {} outside [0, pi]", row[1])));
                    ok = false;
                }
                if !(0.0..TAU).contains(&phi) {
                    issues.push(warning(
                        at,
                        format!("phi_rad = {} outside [0, 2pi), will be wrapped", row[2]),
                    ));
                }
                if ok {
                    let p = radcal_core::SphericalPoint::from_unwrapped(rho, theta, phi)
                        .map(|s| *s.to_cartesian().coords());
                    if let Ok(p) = p {
                        points.push((line, p));
                    }
                }
            }
            Coordinates::Cartesian => {
                let p = Vector3::new(row[0], row[1], row[2]);
                match CartesianPoint::from_vector(p).and_then(|c| cartesian_to_spherical(&c)) {
                    Ok(_) => points.push((line, p)),
                    Err(e) => issues.push(error(at, e.to_string())),
                }
            }
        }
    }

    for (i, (line, p)) in points.iter().enumerate() {
        if let Some((first, _)) = points[..i].iter().find(|(_, q)| q == p) {
            issues.push(warning(
                Some(*line),
                format!("duplicate 3D point (first seen on line {first})"),
            ));
        }
    }
    for (i, row) in file.rows.iter().enumerate() {
        if let Some(j) = (0..i).find(|&j| file.rows[j][3..] == row[3..]) {
            issues.push(warning(
                Some(file.lines[i]),
                format!("duplicate pixel (first seen on line {})", file.lines[j]),
            ));
        }
    }

    if file.rows.len() < 4 {
        issues.push(warning(
            None,
            format!("{} rows; calibration needs at least 4", file.rows.len()),
        ));
    }
    if points.len() >= 3 {
        let n = points.len();
        let mean = points.iter().fold(Vector3::zeros(), |a, (_, p)| a + p) / n as f64;
        let centered = DMatrix::from_fn(n, 3, |r, c| points[r].1[c] - mean[c]);
        let mut sv: Vec<f64> = centered.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        if sv[0] == 0.0 || sv[1] <= COLLINEAR_RATIO * sv[0] {
            issues.push(warning(
                None,
                "3D points are collinear or coincident".into(),
            ));
        } else if sv[2] <= f64::EPSILON * sv[0] {
            issues.push(warning(
                None,
                "3D points are coplanar; the linear initializer will reject them".into(),
            ));
        } else if sv[2] <= COPLANAR_RATIO * sv[0] {
            issues.push(warning(
                None,
                format!(
                    "3D points are near-coplanar (singular value ratio {:.2e}); the linear initializer may be ill-conditioned",
                    sv[2] / sv[0]
                ),
            ));
        }
    }

    ValidationReport {
        rows: file.rows.len(),
        issues,
    }
}
