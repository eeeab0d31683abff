//! CLI error taxonomy and its exit-code mapping.

use std::path::PathBuf;

use radcal_core::Error as CoreError;
use serde::Serialize;
use thiserror::Error;

/// Process exit codes. Every failure path maps to a nonzero code.
pub mod exit {
    pub const OK: u8 = 0;
    /// `validate` found warnings only.
    pub const WARNINGS: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const PARSE: u8 = 4;
    pub const ARITY: u8 = 5;
    pub const DEGENERATE: u8 = 6;
    pub const NON_CONVERGENCE: u8 = 7;
    pub const RANSAC: u8 = 8;
    pub const IO: u8 = 9;
    pub const INITIALIZATION: u8 = 10;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(String),
    /// `line` is 1-based; 0 refers to the file as a whole.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Config(_) => exit::CONFIG,
            CliError::Parse { .. } => exit::PARSE,
            CliError::Io { .. } => exit::IO,
            CliError::NonConvergence(_) => exit::NON_CONVERGENCE,
            CliError::Core(e) => match e {
                CoreError::Domain(_)
                | CoreError::InvalidOption(_)
                | CoreError::SceneGeneration(_) => exit::CONFIG,
                CoreError::TooFewPoints { .. } => exit::ARITY,
                CoreError::Degenerate(_) => exit::DEGENERATE,
                CoreError::NoValidModel { .. } => exit::RANSAC,
                CoreError::Initialization(_) | CoreError::BehindCamera { .. } => {
                    exit::INITIALIZATION
                }
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            exit::USAGE => "usage",
            exit::CONFIG => "config",
            exit::PARSE => "parse",
            exit::ARITY => "arity",
            exit::DEGENERATE => "degenerate",
            exit::NON_CONVERGENCE => "non_convergence",
            exit::RANSAC => "ransac",
            exit::IO => "io",
            _ => "initialization",
        }
    }

    /// One-line JSON error record for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            kind: &'a str,
            exit_code: u8,
            message: String,
            #[serde(skip_serializing_if = "Option::is_none")]
            line: Option<usize>,
        }
        #[derive(Serialize)]
        struct Envelope<'a> {
            error: Record<'a>,
        }
        let line = match self {
            CliError::Parse { line, .. } if *line > 0 => Some(*line),
            _ => None,
        };
        serde_json::to_string(&Envelope {
            error: Record {
                kind: self.kind(),
                exit_code: self.exit_code(),
                message: self.to_string(),
                line,
            },
        })
        .expect("plain record serializes")
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
