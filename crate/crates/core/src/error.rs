use std::path::PathBuf;

/// Errors produced by every maskbench module.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate image_id {0:?}")]
    DuplicateId(String),

    #[error("duplicate prediction for model {model:?}, image {image_id:?}, condition {condition:?}")]
    DuplicateKey {
        model: String,
        image_id: String,
        condition: String,
    },

    #[error("{path}:{line}: top-k scores are not descending")]
    Monotonicity { path: PathBuf, line: usize },

    #[error("{0}")]
    Range(String),

    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: u32,
        left_h: u32,
        right_w: u32,
        right_h: u32,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("image {width}x{height} is smaller than the {min}x{min} SSIM window")]
    TooSmall { width: u32, height: u32, min: u32 },

    #[error("invalid quality weights: {0}")]
    Weight(String),

    #[error("no LPIPS score for image {image_id:?}, condition {condition:?}")]
    KeyMissing { image_id: String, condition: String },

    #[error("image {0:?} is not in the manifest")]
    UnknownImage(String),

    #[error("no ground-truth label for image {0:?}")]
    MissingTruth(String),

    #[error("record for model {model:?}, image {image_id:?}, condition {condition:?} has no {field}")]
    MissingField {
        model: String,
        image_id: String,
        condition: String,
        field: &'static str,
    },

    #[error("record for model {model:?}, image {image_id:?}, condition {condition:?} contradicts its label: {message}")]
    Inconsistent {
        model: String,
        image_id: String,
        condition: String,
        message: String,
    },

    #[error("no common images for {0}")]
    EmptyIntersection(String),

    #[error("underdetermined fit: {0}")]
    Underdetermined(String),

    #[error("invalid condition id {0:?}")]
    Condition(String),

    #[error("conditions {first:?} and {second:?} share mask {shape} at opacity {opacity_alpha}")]
    AmbiguousCondition {
        shape: String,
        opacity_alpha: u32,
        first: String,
        second: String,
    },

    #[error("prediction provider failed: {0}")]
    Provider(String),

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("no combinations lie above the regression line")]
    EmptySelection,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
