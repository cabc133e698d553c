//! Process-level error families. Each family maps to a distinct exit code so
//! batch scripts can branch on what went wrong.

use shield_core::alignment::AlignmentError;
use shield_core::baselines::BaselineError;
use shield_core::client::ClientError;
use shield_core::datasets::DatasetError;
use shield_core::embedding::EmbeddingError;
use shield_core::extraction::{ExtractionError, ParseError};
use shield_core::fusion::FusionError;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Bad or incomplete configuration; `key` names the offending entry.
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    /// Dataset files that do not load: format problems, missing fields,
    /// unreadable paths.
    #[error("{message}")]
    Data { message: String },
    /// Model output that could not be interpreted.
    #[error("{message}")]
    Parse { message: String },
    /// Transport failures after retries.
    #[error("{message}")]
    Transport { message: String },
    /// Cache or artifact IO failures.
    #[error("{message}")]
    Storage { message: String },
    /// Training or evaluation failures.
    #[error("{message}")]
    Training { message: String },
    /// Another command holds the output-directory lock.
    #[error("{message}")]
    Lock { message: String },
}

impl AppError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        AppError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        AppError::Data {
            message: message.into(),
        }
    }

    pub fn storage(message: impl Into<String>) -> Self {
        AppError::Storage {
            message: message.into(),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            AppError::Config { .. } => "config",
            AppError::Data { .. } => "data",
            AppError::Parse { .. } => "parse",
            AppError::Transport { .. } => "transport",
            AppError::Storage { .. } => "storage",
            AppError::Training { .. } => "training",
            AppError::Lock { .. } => "lock",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config { .. } => 2,
            AppError::Data { .. } => 3,
            AppError::Parse { .. } => 4,
            AppError::Transport { .. } => 5,
            AppError::Storage { .. } => 6,
            AppError::Training { .. } => 7,
            AppError::Lock { .. } => 8,
        }
    }

    /// One-line machine-parsable rendering for stderr.
    pub fn render_line(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("error family={} code={}: {msg}", self.family(), self.exit_code())
    }
}

impl From<DatasetError> for AppError {
    fn from(e: DatasetError) -> Self {
        AppError::Data {
            message: e.to_string(),
        }
    }
}

impl From<ParseError> for AppError {
    fn from(e: ParseError) -> Self {
        AppError::Parse {
            message: e.to_string(),
        }
    }
}

impl From<ExtractionError> for AppError {
    fn from(e: ExtractionError) -> Self {
        AppError::Data {
            message: e.to_string(),
        }
    }
}

impl From<ClientError> for AppError {
    fn from(e: ClientError) -> Self {
        AppError::Transport {
            message: e.to_string(),
        }
    }
}

impl From<EmbeddingError> for AppError {
    fn from(e: EmbeddingError) -> Self {
        AppError::Training {
            message: e.to_string(),
        }
    }
}

impl From<FusionError> for AppError {
    fn from(e: FusionError) -> Self {
        AppError::Training {
            message: e.to_string(),
        }
    }
}

impl From<AlignmentError> for AppError {
    fn from(e: AlignmentError) -> Self {
        AppError::Training {
            message: e.to_string(),
        }
    }
}

impl From<BaselineError> for AppError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Client(c) => c.into(),
            other => AppError::Data {
                message: other.to_string(),
            },
        }
    }
}
