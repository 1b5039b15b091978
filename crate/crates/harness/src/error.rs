use std::fmt;
use std::path::{Path, PathBuf};

/// Process exit status of the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Validation = 1,
    Io = 2,
}

/// Errors of the harness, split by whether the input was wrong or the
/// environment failed.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}{message}", location(path, *line))]
    Invalid {
        path: Option<PathBuf>,
        line: Option<usize>,
        message: String,
    },
}

fn location(path: &Option<PathBuf>, line: Option<usize>) -> String {
    match (path, line) {
        (Some(p), Some(l)) => format!("{}:{l}: ", p.display()),
        (Some(p), None) => format!("{}: ", p.display()),
        (None, Some(l)) => format!("line {l}: "),
        (None, None) => String::new(),
    }
}

impl HarnessError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn invalid(message: impl fmt::Display) -> Self {
        HarnessError::Invalid { path: None, line: None, message: message.to_string() }
    }

    pub fn at_line(line: usize, message: impl fmt::Display) -> Self {
        HarnessError::Invalid { path: None, line: Some(line), message: message.to_string() }
    }

    /// Attaches a file path to a validation error that has none.
    pub fn in_file(self, file: impl AsRef<Path>) -> Self {
        match self {
            HarnessError::Invalid { path: None, line, message } => {
                HarnessError::Invalid { path: Some(file.as_ref().to_path_buf()), line, message }
            }
            other => other,
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            HarnessError::Invalid { line, .. } => *line,
            HarnessError::Io { .. } => None,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            HarnessError::Io { .. } => ExitCode::Io,
            HarnessError::Invalid { .. } => ExitCode::Validation,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Reads a whole file, mapping failures to [`HarnessError::Io`].
pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

/// Writes `bytes` to `path` via a temporary file and rename, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".into(),
    });
    let mut f = std::fs::File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    f.sync_all().map_err(|e| HarnessError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}
