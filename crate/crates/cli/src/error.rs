use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config at `{path}`: {reason}")]
    ConfigInvalid { path: String, reason: String },

    #[error(transparent)]
    Solver(#[from] bsde_game::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn invalid(path: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::ConfigInvalid {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Variant name of the underlying error, e.g. `IntensityTooLarge`.
    pub fn kind(&self) -> String {
        match self {
            CliError::ConfigInvalid { .. } => "ConfigInvalid".into(),
            CliError::Solver(e) => {
                let debug = format!("{e:?}");
                debug
                    .split(|c: char| !c.is_alphanumeric())
                    .next()
                    .unwrap_or_default()
                    .to_string()
            }
            CliError::Io { .. } => "Io".into(),
        }
    }

    /// Process exit code: 2 for bad configs, 3 for solver errors, 4 for I/O.
    /// 1 is reserved for failed checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid { .. } => 2,
            CliError::Solver(_) => 3,
            CliError::Io { .. } => 4,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_and_codes() {
        let e = CliError::from(bsde_game::Error::IntensityTooLarge { step: 0, lambda_dt: 1.5 });
        assert_eq!(e.kind(), "IntensityTooLarge");
        assert_eq!(e.exit_code(), 3);
        let e = CliError::invalid("market.r", "bad");
        assert_eq!(e.kind(), "ConfigInvalid");
        assert_eq!(e.to_string(), "invalid config at `market.r`: bad");
        assert_eq!(e.exit_code(), 2);
    }
}
