use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum HdmaError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {msg}")]
    Csv { path: PathBuf, msg: String },

    #[error("non-numeric cell at row {row}, column {col}: {value:?}")]
    NonNumericCell { row: usize, col: String, value: String },

    #[error("response column {0:?} not found")]
    MissingResponse(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("candidate fit failed (model {k}{})", .m.map(|m| format!(", fold {m}")).unwrap_or_default())]
    CandidateFit {
        k: usize,
        m: Option<usize>,
        #[source]
        source: Box<HdmaError>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(
        "CLIME row(s) {rows:?} infeasible or unconverged at gamma_n = {gamma}; try a larger --gamma-n"
    )]
    ClimeInfeasible { rows: Vec<usize>, gamma: f64 },
}

impl HdmaError {
    /// Process exit code for the CLI: 1 for usage/data problems, 2 for
    /// numerical failures inside the pipeline.
    pub fn exit_code(&self) -> i32 {
        match self {
            HdmaError::Io { .. }
            | HdmaError::Csv { .. }
            | HdmaError::NonNumericCell { .. }
            | HdmaError::MissingResponse(_)
            | HdmaError::Config(_)
            | HdmaError::Dimension { .. } => 1,
            HdmaError::CandidateFit { .. }
            | HdmaError::Numerical(_)
            | HdmaError::ClimeInfeasible { .. } => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, HdmaError>;
