//! Correspondence CSV files.
//!
//! ```text
//! # fx = 800
//! # fy = 800
//! # u0 = 640
//! # v0 = 360
//! # sigma_range_m = 0.02
//! # sigma_theta_rad = 0.005
//! # sigma_phi_rad = 0.005
//! range_m,theta_rad,phi_rad,u_px,v_px
//! 6.4,2.06,0.485,630.4,702.5
//! ```
//!
//! `# key = value` lines with a known key form the optional intrinsics and
//! noise blocks; a block must be complete if present. Other `#` lines are
//! free comments. A Cartesian header `x_m,y_m,z_m,u_px,v_px` is accepted and
//! converted on ingest.

use std::f64::consts::PI;
use std::fmt::Write as _;

use radcal_core::geometry::wrap_azimuth;
use radcal_core::{
    cartesian_to_spherical, CameraIntrinsics, CartesianPoint, Correspondence, NoiseSpec,
    PixelPoint, SphericalPoint,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SPHERICAL_HEADER: [&str; 5] = ["range_m", "theta_rad", "phi_rad", "u_px", "v_px"];
pub const CARTESIAN_HEADER: [&str; 5] = ["x_m", "y_m", "z_m", "u_px", "v_px"];

const INTRINSICS_KEYS: [&str; 4] = ["fx", "fy", "u0", "v0"];
const NOISE_KEYS: [&str; 3] = ["sigma_range_m", "sigma_theta_rad", "sigma_phi_rad"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsBlock {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
}

impl IntrinsicsBlock {
    pub fn to_intrinsics(&self) -> radcal_core::Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.u0, self.v0)
    }

    fn values(&self) -> [f64; 4] {
        [self.fx, self.fy, self.u0, self.v0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    pub sigma_range_m: f64,
    pub sigma_theta_rad: f64,
    pub sigma_phi_rad: f64,
}

impl NoiseBlock {
    pub fn to_noise(&self) -> radcal_core::Result<NoiseSpec> {
        NoiseSpec::new(self.sigma_range_m, self.sigma_theta_rad, self.sigma_phi_rad)
    }

    fn values(&self) -> [f64; 3] {
        [self.sigma_range_m, self.sigma_theta_rad, self.sigma_phi_rad]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinates {
    Spherical,
    Cartesian,
}

#[derive(Debug, Clone)]
pub struct CorrespondenceFile {
    pub intrinsics: Option<IntrinsicsBlock>,
    pub noise: Option<NoiseBlock>,
    pub coordinates: Coordinates,
    /// `[a, b, c, u, v]` in file units, where `(a, b, c)` is
    /// `(range, theta, phi)` or `(x, y, z)`.
    pub rows: Vec<[f64; 5]>,
    /// 1-based source line of each row (0 for rows not read from text).
    pub lines: Vec<usize>,
}

/// Source line numbers are bookkeeping, not content.
impl PartialEq for CorrespondenceFile {
    fn eq(&self, other: &Self) -> bool {
        self.intrinsics == other.intrinsics
            && self.noise == other.noise
            && self.coordinates == other.coordinates
            && self.rows == other.rows
    }
}

fn parse_number(text: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = text.trim().parse().map_err(|_| CliError::Parse {
        line,
        message: format!("{what}: '{}' is not a number", text.trim()),
    })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Parse {
            line,
            message: format!("{what}: non-finite value"),
        })
    }
}

fn block<const N: usize>(
    keys: [&str; N],
    found: &[(String, f64, usize)],
    name: &str,
) -> Result<Option<[f64; N]>> {
    let mut values = [None; N];
    for (key, value, line) in found {
        if let Some(i) = keys.iter().position(|k| k == key) {
            if values[i].replace(*value).is_some() {
                return Err(CliError::Parse {
                    line: *line,
                    message: format!("duplicate {name} key '{key}'"),
                });
            }
        }
    }
    if values.iter().all(Option::is_none) {
        return Ok(None);
    }
    let missing: Vec<_> = keys
        .iter()
        .zip(&values)
        .filter(|(_, v)| v.is_none())
        .map(|(k, _)| *k)
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Parse {
            line: 0,
            message: format!("incomplete {name} block, missing {}", missing.join(", ")),
        });
    }
    Ok(Some(values.map(|v| v.expect("checked complete"))))
}

impl CorrespondenceFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut found = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let Some(comment) = line.trim_start().strip_prefix('#') else {
                continue;
            };
            let Some((key, value)) = comment.split_once('=') else {
                continue;
            };
            let key = key.trim();
            if INTRINSICS_KEYS.contains(&key) || NOISE_KEYS.contains(&key) {
                found.push((key.to_string(), parse_number(value, i + 1, key)?, i + 1));
            }
        }
        let intrinsics = block(INTRINSICS_KEYS, &found, "intrinsics")?
            .map(|[fx, fy, u0, v0]| IntrinsicsBlock { fx, fy, u0, v0 });
        let noise = block(NOISE_KEYS, &found, "noise")?.map(|[r, t, p]| NoiseBlock {
            sigma_range_m: r,
            sigma_theta_rad: t,
            sigma_phi_rad: p,
        });

        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let header_line = text
            .lines()
            .position(|l| {
                let t = l.trim();
                !t.is_empty() && !t.starts_with('#')
            })
            .map_or(0, |i| i + 1);
        let headers = reader.headers().map_err(|e| CliError::Parse {
            line: header_line,
            message: format!("unreadable header: {e}"),
        })?;
        let names: Vec<&str> = headers.iter().collect();
        let coordinates = if names == SPHERICAL_HEADER {
            Coordinates::Spherical
        } else if names == CARTESIAN_HEADER {
            Coordinates::Cartesian
        } else {
            return Err(CliError::Parse {
                line: header_line,
                message: format!(
                    "expected header '{}' or '{}', found '{}'",
                    SPHERICAL_HEADER.join(","),
                    CARTESIAN_HEADER.join(","),
                    names.join(",")
                ),
            });
        };
        let columns = match coordinates {
            Coordinates::Spherical => SPHERICAL_HEADER,
            Coordinates::Cartesian => CARTESIAN_HEADER,
        };

        // The reader's own line counter skips blank lines, and a record's
        // byte offset can point at skipped blank or comment lines before it.
        let source: Vec<&str> = text.lines().collect();
        let line_of = |pos: Option<&csv::Position>| {
            pos.map_or(0, |p| {
                let end = (p.byte() as usize).min(text.len());
                let mut i = text.as_bytes()[..end]
                    .iter()
                    .filter(|&&b| b == b'\n')
                    .count();
                while source.get(i).is_some_and(|l| {
                    let t = l.trim();
                    t.is_empty() || t.starts_with('#')
                }) {
                    i += 1;
                }
                i + 1
            })
        };
        let mut rows = Vec::new();
        let mut lines = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| CliError::Parse {
                line: line_of(e.position()),
                message: e.to_string(),
            })?;
            let line = line_of(record.position());
            if record.len() == 1 && record[0].is_empty() {
                continue;
            }
            if record.len() != 5 {
                return Err(CliError::Parse {
                    line,
                    message: format!("expected 5 fields, found {}", record.len()),
                });
            }
            let mut row = [0.0; 5];
            for (k, field) in record.iter().enumerate() {
                row[k] = parse_number(field, line, columns[k])?;
            }
            rows.push(row);
            lines.push(line);
        }
        Ok(Self {
            intrinsics,
            noise,
            coordinates,
            rows,
            lines,
        })
    }

    /// Renders the file; floats use the shortest round-trip representation,
    /// so `parse(to_csv_string())` reproduces `self`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        if let Some(b) = &self.intrinsics {
            for (k, v) in INTRINSICS_KEYS.iter().zip(b.values()) {
                writeln!(out, "# {k} = {v:?}").expect("string write");
            }
        }
        if let Some(b) = &self.noise {
            for (k, v) in NOISE_KEYS.iter().zip(b.values()) {
                writeln!(out, "# {k} = {v:?}").expect("string write");
            }
        }
        let header = match self.coordinates {
            Coordinates::Spherical => SPHERICAL_HEADER,
            Coordinates::Cartesian => CARTESIAN_HEADER,
        };
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.rows {
            let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    fn line(&self, i: usize) -> usize {
        self.lines.get(i).copied().unwrap_or(0)
    }

    /// Converts rows into correspondences. With `degrees`, spherical angles
    /// are read in degrees. Azimuths are wrapped into `[0, 2π)`; elevations
    /// outside `[0, π]` are rejected.
    pub fn to_correspondences(&self, degrees: bool) -> Result<Vec<Correspondence>> {
        let scale = if degrees { PI / 180.0 } else { 1.0 };
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let at_line = |e: radcal_core::Error| CliError::Parse {
                    line: self.line(i),
                    message: e.to_string(),
                };
                let radar = match self.coordinates {
                    Coordinates::Spherical => {
                        SphericalPoint::new(r[0], r[1] * scale, wrap_azimuth(r[2] * scale))
                    }
                    Coordinates::Cartesian => CartesianPoint::new(r[0], r[1], r[2])
                        .and_then(|p| cartesian_to_spherical(&p)),
                }
                .map_err(at_line)?;
                let pixel = PixelPoint::new(r[3], r[4]).map_err(at_line)?;
                Ok(Correspondence::new(radar, pixel))
            })
            .collect()
    }

    /// A spherical file holding `corrs`.
    pub fn from_correspondences(
        corrs: &[Correspondence],
        intrinsics: Option<IntrinsicsBlock>,
        noise: Option<NoiseBlock>,
    ) -> Self {
        Self {
            intrinsics,
            noise,
            coordinates: Coordinates::Spherical,
            rows: corrs
                .iter()
                .map(|c| {
                    let s = c.radar();
                    [
                        s.range(),
                        s.elevation(),
                        s.azimuth(),
                        c.pixel().u,
                        c.pixel().v,
                    ]
                })
                .collect(),
            lines: vec![0; corrs.len()],
        }
    }
}
