use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A requested quantity has no solution in its admissible range.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Polarization rotation leaves the linear (small-angle) regime.
    #[error("rotation {max_angle:.3e} rad exceeds the linear range limit {limit:.3e} rad")]
    OutOfLinearRange { max_angle: f64, limit: f64 },

    /// Rotation-gain calibration target cannot be met.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// Sampling or analyzer settings incompatible with the trace.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// A tone or spectral feature is too weak to measure.
    #[error("not measurable: {0}")]
    NotMeasurable(String),

    /// Config file problems, anchored to a line when one applies.
    #[error("{}", format_config_error(path, *line, message))]
    Config {
        path: Option<PathBuf>,
        line: Option<usize>,
        message: String,
    },

    #[error("malformed trace data: {0}")]
    TraceFormat(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn format_config_error(path: &Option<PathBuf>, line: Option<usize>, message: &str) -> String {
    match (path, line) {
        (Some(p), Some(l)) => format!("{}:{}: {}", p.display(), l, message),
        (Some(p), None) => format!("{}: {}", p.display(), message),
        (None, Some(l)) => format!("line {}: {}", l, message),
        (None, None) => message.to_string(),
    }
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: None,
            line,
            message: msg.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 simulation infeasibility,
    /// 4 metrology failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Io { .. } | Error::TraceFormat(_) => 2,
            Error::Configuration(_)
            | Error::Domain(_)
            | Error::Infeasible(_)
            | Error::OutOfLinearRange { .. }
            | Error::Calibration(_) => 3,
            Error::NotMeasurable(_) => 4,
        }
    }

    pub(crate) fn with_path(self, p: &std::path::Path) -> Self {
        match self {
            Error::Config { line, message, .. } => Error::Config {
                path: Some(p.to_path_buf()),
                line,
                message,
            },
            other => other,
        }
    }
}
