//! Trial-record CSV: `n_points,solver,seed,rot_err_rad,trans_err_m,converged`.
//!
//! Failed solves leave both error fields empty and have `converged = false`.

use std::io::{Read, Write};

use radcal_core::{SolverKind, TrialRecord};

use crate::error::{CliError, Result};

pub const TRIAL_HEADER: [&str; 6] = [
    "n_points",
    "solver",
    "seed",
    "rot_err_rad",
    "trans_err_m",
    "converged",
];

fn float(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

pub fn write_trials<W: Write>(records: &[TrialRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| CliError::Io {
        path: "<trial records>".into(),
        source: e.into(),
    };
    w.write_record(TRIAL_HEADER).map_err(io)?;
    for r in records {
        w.write_record([
            r.n_points.to_string(),
            r.solver.as_str().to_string(),
            r.seed.to_string(),
            float(r.rotation_error),
            float(r.translation_error),
            r.converged.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io("<trial records>", e))
}

pub fn trials_to_string(records: &[TrialRecord]) -> String {
    let mut buf = Vec::new();
    write_trials(records, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("CSV output is UTF-8")
}

pub fn read_trials<R: Read>(input: R) -> Result<Vec<TrialRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(|e| CliError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != TRIAL_HEADER {
        return Err(CliError::Parse {
            line: 1,
            message: format!("expected header '{}'", TRIAL_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |what: &str| CliError::Parse {
            line,
            message: format!("invalid {what}"),
        };
        let opt = |s: &str, what: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(what))
            }
        };
        out.push(TrialRecord {
            n_points: record[0].parse().map_err(|_| bad("n_points"))?,
            solver: record[1].parse::<SolverKind>().map_err(|_| bad("solver"))?,
            seed: record[2].parse().map_err(|_| bad("seed"))?,
            rotation_error: opt(&record[3], "rot_err_rad")?,
            translation_error: opt(&record[4], "trans_err_m")?,
            converged: record[5].parse().map_err(|_| bad("converged"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_including_failures() {
        let records = vec![
            TrialRecord {
                n_points: 10,
                solver: SolverKind::Uncertain3d,
                seed: u64::MAX,
                rotation_error: Some(1.0 / 3.0),
                translation_error: Some(2.5e-7),
                converged: true,
            },
            TrialRecord {
                n_points: 10,
                solver: SolverKind::Reprojection,
                seed: 3,
                rotation_error: None,
                translation_error: None,
                converged: false,
            },
        ];
        let text = trials_to_string(&records);
        assert!(text.starts_with("n_points,solver,seed,rot_err_rad,trans_err_m,converged\n"));
        assert!(text.contains("10,reproj,3,,,false"));
        assert_eq!(read_trials(text.as_bytes()).unwrap(), records);
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(read_trials("a,b\n1,2\n".as_bytes()).is_err());
    }
}
