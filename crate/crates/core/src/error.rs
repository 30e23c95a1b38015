use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tissue mask absent: {0}")]
    MissingTissueMask(usize),

    #[error("dimension mismatch in section {section}: {detail}")]
    DimensionMismatch { section: usize, detail: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("relaxation diverged at iteration {iteration} (energy {energy:e}); reduce step_size (currently {step_size})")]
    Diverged {
        iteration: usize,
        energy: f64,
        step_size: f64,
    },

    #[error("no foreground")]
    NoForeground,

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("dangling bundle references: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    DanglingRefs(Vec<PathBuf>),

    #[error("tumor {0} is absent from every section")]
    TumorAbsent(u32),

    #[error("phantom tumors {0} and {1} overlap")]
    OverlappingTumors(u32, u32),

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("{0}")]
    Stage(String),

    #[error("invalid config {path}: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
