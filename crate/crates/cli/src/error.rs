use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: roughwave::Error,
    },

    #[error("schema mismatch in {file}: column `{column}`: {message}")]
    SchemaMismatch {
        file: String,
        column: String,
        message: String,
    },

    #[error("{failed} check(s) failed in strict mode")]
    ChecksFailed { failed: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn schema(file: &str, column: &str, message: impl Into<String>) -> Self {
        CliError::SchemaMismatch {
            file: file.into(),
            column: column.into(),
            message: message.into(),
        }
    }

    /// Maps a module precondition error onto a config error at the same path.
    pub fn from_core_config(err: roughwave::Error) -> Self {
        match err {
            roughwave::Error::Config { path, message } => CliError::Config { path, message },
            other => CliError::Config {
                path: String::new(),
                message: other.to_string(),
            },
        }
    }

    /// Prefixes a config path with the section it was found in.
    pub fn within(self, section: &str) -> Self {
        match self {
            CliError::Config { path, message } if !path.starts_with(&format!("{section}.")) => CliError::Config {
                path: format!("{section}.{path}"),
                message,
            },
            other => other,
        }
    }
}

pub trait StageContext<T> {
    fn stage(self, stage: &str) -> CliResult<T>;
}

impl<T> StageContext<T> for roughwave::Result<T> {
    fn stage(self, stage: &str) -> CliResult<T> {
        self.map_err(|source| CliError::Stage {
            stage: stage.into(),
            source,
        })
    }
}
