use std::path::PathBuf;

use thiserror::Error;

use crate::linalg::SolveReport;
use crate::scheme::StepDiagnostics;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{solve} solve did not converge: {report}")]
    SolverDiverged {
        solve: &'static str,
        report: SolveReport,
    },

    /// Negative discriminant with `C >= 0`: the step left the regime where
    /// a positive multiplier is guaranteed.
    #[error("multiplier equation has no real root (A={a:e}, B={b:e}, C={c:e})")]
    MultiplierUnsolvable { a: f64, b: f64, c: f64 },

    /// `C < 0` but the selected root is not positive; points at an assembly bug.
    #[error("multiplier root {root:e} is not positive although C={c:e} < 0 (A={a:e}, B={b:e})")]
    MultiplierInternal { a: f64, b: f64, c: f64, root: f64 },

    #[error("invariant `{check}` violated at step {}: {detail}", diagnostics.step)]
    Invariant {
        check: &'static str,
        detail: String,
        diagnostics: Box<StepDiagnostics>,
    },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("invalid value for `{field}`: {message}")]
    Argument { field: String, message: String },

    #[error("reference table row {row}: {message}")]
    Reference { row: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn argument(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Argument {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
