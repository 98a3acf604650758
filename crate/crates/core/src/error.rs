use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape for {op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },

    #[error("layer {index} ({kind}): {source}")]
    Layer {
        index: usize,
        kind: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("label {label} at index {index} out of range for {num_classes} classes{}", fmt_origin(.origin))]
    LabelOutOfRange {
        index: usize,
        label: usize,
        num_classes: usize,
        origin: Option<PathBuf>,
    },

    #[error("gradient tape: {0}")]
    Tape(String),

    #[error("{}: bad magic {found:#010x}, expected {expected:#010x}", .path.display())]
    BadMagic { path: PathBuf, found: u32, expected: u32 },

    #[error("{}: truncated file ({detail})", .path.display())]
    Truncated { path: PathBuf, detail: String },

    #[error("{}: unsupported format version {found}, expected {expected}", .path.display())]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },

    #[error("count mismatch: {} holds {images} images but {} holds {labels} labels", .images_path.display(), .labels_path.display())]
    CountMismatch {
        images_path: PathBuf,
        labels_path: PathBuf,
        images: usize,
        labels: usize,
    },

    #[error("{}: length {len} is not a multiple of the {record}-byte record size", .path.display())]
    RecordSize { path: PathBuf, len: usize, record: usize },

    #[error("{}: malformed file ({detail})", .path.display())]
    Malformed { path: PathBuf, detail: String },

    #[error("class {class} has {available} samples, {requested} requested")]
    InsufficientSamples {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("feature bank was extracted by a different extractor (digest mismatch)")]
    StaleFeatureBank,

    #[error("extractor parameters changed during head retraining")]
    ExtractorModified,

    #[error("evaluation paths disagree: fast path {fast:?} vs swapped network {swapped:?}")]
    EvaluationMismatch { fast: (f64, f64), swapped: (f64, f64) },

    #[error("trial {trial} failed: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_origin(origin: &Option<PathBuf>) -> String {
    match origin {
        Some(p) => format!(" in {}", p.display()),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_layer(self, index: usize, kind: &'static str) -> Self {
        Error::Layer {
            index,
            kind,
            source: Box::new(self),
        }
    }
}
