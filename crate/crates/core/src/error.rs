use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents disagree with what an operation requires.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("unknown key `{key}`; valid keys: {}", valid.join(", "))]
    Lookup { key: String, valid: Vec<String> },

    #[error("input error: {0}")]
    Input(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("numerical abort at epoch {epoch}, batch {batch}: {detail}")]
    Numerical {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("{}", format_failures(.0))]
    Data(Vec<(PathBuf, String)>),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn format_failures(failures: &[(PathBuf, String)]) -> String {
    let mut out = format!("{} file(s) failed to load:", failures.len());
    for (path, why) in failures {
        out.push_str(&format!("\n  {}: {}", path.display(), why));
    }
    out
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
