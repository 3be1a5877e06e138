use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("prompt contains characters outside the vocabulary: {}", list_chars(.0))]
    OutOfVocabulary(Vec<char>),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] score_core::Error),
}

fn list_chars(chars: &[char]) -> String {
    chars.iter().map(|c| format!("{c:?}")).collect::<Vec<_>>().join(", ")
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status: 1 for configuration problems, 3 for I/O.
    pub fn exit_code(&self) -> u8 {
        use score_core::Error as E;
        match self {
            Self::Config(_) | Self::OutOfVocabulary(_) => 1,
            Self::Io { .. } => 3,
            Self::Core(E::Io(_) | E::Csv(_) | E::Json(_) | E::Parse { .. }) => 3,
            Self::Core(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
