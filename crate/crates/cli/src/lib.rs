//! Front end for `volterra-core`: config handling, the experiment commands,
//! run manifests and the acceptance suite.

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod manifest;

use serde::Serialize;
use serde_json::json;

pub use commands::{run, RunOutcome};
pub use config::{load_config, Command, Format, PartialConfig, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Numeric(#[from] volterra_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Failed(String),
}

/// Machine-readable form of a [`CliError`], written as `error.json`.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub kind: &'static str,
    pub exit_code: i32,
    pub message: String,
    pub diagnostics: serde_json::Value,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn record(&self) -> ErrorRecord {
        use volterra_core::Error as E;
        let (kind, diagnostics) = match self {
            Self::Usage(_) => ("usage", serde_json::Value::Null),
            Self::Io(_) => ("io", serde_json::Value::Null),
            Self::Failed(_) => ("failed", serde_json::Value::Null),
            Self::Numeric(e) => (
                "numeric",
                match e {
                    E::Convergence { deltas, .. } => json!({ "deltas": deltas }),
                    E::Divergence { tail_norms } => json!({ "tail_norms": tail_norms }),
                    E::EnsembleFailure { seeds } => json!({ "seeds": seeds }),
                    _ => serde_json::Value::Null,
                },
            ),
        };
        ErrorRecord {
            kind,
            exit_code: self.exit_code(),
            message: self.to_string(),
            diagnostics,
        }
    }
}
