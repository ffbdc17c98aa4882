use std::path::PathBuf;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {}: {msg}", path.display())]
    Checkpoint { path: PathBuf, msg: String },
    #[error("mode mismatch: checkpoint holds a {ckpt} model, config asks for {want}")]
    ModeMismatch { ckpt: String, want: String },
    #[error("config mismatch on `{key}`: checkpoint has {ckpt}, config has {want}")]
    ConfigMismatch {
        key: String,
        ckpt: String,
        want: String,
    },
    #[error("check failed: {0}")]
    Check(String),
    #[error(transparent)]
    Core(#[from] crope_core::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for failed checks and runtime failures, 2 for usage and
    /// configuration errors.
    pub fn exit_code(&self) -> i32 {
        use crope_core::Error as E;
        match self {
            Self::UnknownKey(_)
            | Self::BadValue { .. }
            | Self::Usage(_)
            | Self::ModeMismatch { .. }
            | Self::ConfigMismatch { .. }
            | Self::Core(E::Config(_) | E::Sizing { .. }) => 2,
            _ => 1,
        }
    }
}
