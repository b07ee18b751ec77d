use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] hyprown::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("seed {seed} failed (exit code {code})")]
    Child { seed: u64, code: i32 },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// 2 usage/config, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        use hyprown::Error as E;
        match self {
            CliError::Usage(_) | CliError::Toml(_) => 2,
            CliError::Child { code, .. } => *code,
            CliError::Io { .. } => 4,
            CliError::Core(e) => match e {
                E::Io(_) => 4,
                E::Numeric { .. }
                | E::NumericDetail(_)
                | E::DegenerateTransport(_)
                | E::Diverged { .. }
                | E::UndefinedMetric(_) => 3,
                _ => 2,
            },
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Reads a text input file; a missing file is a usage error naming the path.
pub fn read_input(path: &Path) -> CliResult<String> {
    match std::fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(usage(format!("file not found: {}", path.display())))
        }
        Err(source) => Err(CliError::Io { path: path.to_path_buf(), source }),
    }
}

pub fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Attaches an output path to core I/O errors.
pub fn write_err(path: &Path) -> impl FnOnce(hyprown::Error) -> CliError + '_ {
    move |e| match e {
        hyprown::Error::Io(source) => CliError::Io { path: path.to_path_buf(), source },
        other => CliError::Core(other),
    }
}

/// Attaches an input path to core I/O errors; a missing input is a usage
/// error.
pub fn read_err(path: &Path) -> impl FnOnce(hyprown::Error) -> CliError + '_ {
    move |e| match e {
        hyprown::Error::Io(source) if source.kind() == std::io::ErrorKind::NotFound => {
            usage(format!("file not found: {}", path.display()))
        }
        hyprown::Error::Io(source) => CliError::Io { path: path.to_path_buf(), source },
        other => CliError::Core(other),
    }
}
