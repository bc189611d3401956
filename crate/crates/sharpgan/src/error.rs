use std::path::{Path, PathBuf};

/// Process exit codes. `0` is success.
pub mod exit {
    /// Bad arguments, unknown config keys or invalid config values.
    pub const USAGE: i32 = 2;
    /// Unreadable or unwritable files, undecodable images.
    pub const IO: i32 = 3;
    /// Corrupt or mismatched checkpoints, manifests and config files.
    pub const FORMAT: i32 = 4;
    /// Non-finite losses, gradients or parameters.
    pub const NUMERICAL: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{failed} of {total} inputs failed")]
    Partial { failed: usize, total: usize },
    #[error(transparent)]
    Core(#[from] sharpgan_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        use sharpgan_core::Error as C;
        match self {
            Error::Usage(_) => exit::USAGE,
            Error::Io { .. } | Error::Image { .. } | Error::Partial { .. } => exit::IO,
            Error::Format { .. } => exit::FORMAT,
            Error::Core(e) => match e {
                C::Param(_) | C::Config(_) | C::Shape(_) => exit::USAGE,
                C::Format(_) => exit::FORMAT,
                C::NonFinite(_) => exit::NUMERICAL,
            },
        }
    }
}

/// Attaches a file path to core format errors.
pub(crate) fn in_file<T>(path: &Path, r: sharpgan_core::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        sharpgan_core::Error::Format(m) => Error::format(path, m),
        other => Error::Core(other),
    })
}
