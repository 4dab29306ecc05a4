use std::io::ErrorKind;
use std::path::PathBuf;

/// Failure of one command, carrying its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing input {}: {what}", path.display())]
    MissingInput { path: PathBuf, what: String },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::MissingInput { .. } => 3,
            CliError::Schema(_) => 4,
            CliError::EmptyDataset(_) => 5,
        }
    }
}

impl From<viewnav::Error> for CliError {
    fn from(e: viewnav::Error) -> Self {
        use viewnav::Error as E;
        let msg = e.to_string();
        match e {
            E::Io { path, source } if source.kind() == ErrorKind::NotFound => CliError::MissingInput {
                path,
                what: source.to_string(),
            },
            E::Schema { .. } | E::InvalidShape(_) | E::DimensionMismatch { .. } => CliError::Schema(msg),
            E::EmptyDataset => CliError::EmptyDataset("no records left to train on".into()),
            E::InvalidConfig(_) | E::InvalidDimension(_) | E::NoValidPose { .. } => CliError::Config(msg),
            _ => CliError::Runtime(msg),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_distinct_codes() {
        let missing = viewnav::Error::Io {
            path: "x.json".into(),
            source: std::io::Error::new(ErrorKind::NotFound, "gone"),
        };
        assert_eq!(CliError::from(missing).exit_code(), 3);
        let denied = viewnav::Error::Io {
            path: "x.json".into(),
            source: std::io::Error::new(ErrorKind::PermissionDenied, "no"),
        };
        assert_eq!(CliError::from(denied).exit_code(), 1);
        let schema = viewnav::Error::Schema {
            path: "d.jsonl".into(),
            line: 4,
            message: "bad record".into(),
        };
        let e = CliError::from(schema);
        assert_eq!(e.exit_code(), 4);
        assert!(e.to_string().contains("line 4"));
        assert_eq!(CliError::from(viewnav::Error::EmptyDataset).exit_code(), 5);
        assert_eq!(CliError::from(viewnav::Error::InvalidConfig("x".into())).exit_code(), 2);
    }
}
