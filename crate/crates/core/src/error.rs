//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("image has zero width or height: {0}")]
    ZeroDimension(PathBuf),

    #[error("pixel buffer length {got} does not match {width}x{height}")]
    BadBufferLength {
        width: usize,
        height: usize,
        got: usize,
    },

    #[error("rectangle ({x0},{y0})-({x1},{y1}) out of bounds for {width}x{height}")]
    RectOutOfBounds {
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
        width: usize,
        height: usize,
    },

    #[error("noise variance must be non-negative, got {0}")]
    NegativeVariance(f64),

    #[error("mean filter window must be odd and >= 1, got {0}")]
    BadFilterWindow(usize),

    #[error("image {width}x{height} too small for the finest detector filter (need >= 32x32)")]
    ImageTooSmall { width: usize, height: usize },

    #[error("filter of size {filter_size} does not fit at ({x},{y}) in {width}x{height}")]
    FootprintOutOfBounds {
        x: usize,
        y: usize,
        filter_size: usize,
        width: usize,
        height: usize,
    },

    #[error("filter size must be an odd multiple of 3 and >= 9, got {0}")]
    BadFilterSize(usize),

    #[error("point ({x:.1},{y:.1}) at scale {scale:.2} lacks the margin for {what}")]
    InsufficientMargin {
        x: f64,
        y: f64,
        scale: f64,
        what: &'static str,
    },

    #[error("match ratio must lie in (0,1], got {0}")]
    BadMatchRatio(f64),

    #[error("invalid detector config: {0}")]
    BadDetectorConfig(String),

    #[error("invalid train config: {0}")]
    BadTrainConfig(String),

    #[error("template K must be >= 1")]
    BadTemplateK,

    #[error("dataset root {0} contains no images")]
    EmptyDataset(PathBuf),

    #[error("directory name {0:?} is not a valid view angle (expected m90,m45,0,p45,p90)")]
    BadAngleDir(String),

    #[error("dataset ingestion failed:\n{}", .0.join("\n"))]
    IngestFailures(Vec<String>),

    #[error("split fraction must lie in (0,1), got {0}")]
    BadSplitFraction(f64),

    #[error("subject {0:?} has fewer than 2 templates; stratified split impossible")]
    SubjectTooSmall(String),

    #[error("training set has a single class; need at least 2")]
    SingleClass,

    #[error("class {0:?} has no training samples")]
    EmptyClass(String),

    #[error("fewer training samples ({samples}) than classes ({classes})")]
    TooFewSamples { samples: usize, classes: usize },

    #[error("feature length {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("ensemble must have at least one member")]
    EmptyEnsemble,

    #[error("training member {index} failed: {source}")]
    MemberTraining {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("validation set is empty")]
    EmptyValidation,

    #[error("score vectors disagree on class count: {0} vs {1}")]
    MismatchedClasses(usize, usize),

    #[error("fusion weights must be non-negative and sum to 1")]
    BadWeights,

    #[error("fuse_views called with no views")]
    NoViews,

    #[error("images have different dimensions: {0}x{1} vs {2}x{3}")]
    DimensionsDiffer(usize, usize, usize, usize),

    #[error("PFE undefined: probe image has zero norm")]
    ZeroNormImage,

    #[error("decision log is empty")]
    EmptyDecisionLog,

    #[error("dataset is missing required angle directories: {}", .0.join(", "))]
    MissingAngles(Vec<String>),

    #[error("persisted file {path}: {reason}")]
    BadFileFormat { path: PathBuf, reason: String },

    #[error("dataset generation needs >= 2 subjects and >= 1 sample per view")]
    BadGenSpec,

    #[error("noise case needs at least one sigma value")]
    NoSigmas,

    #[error("noise sweep variances must be sorted ascending and non-negative")]
    BadSweepVariances,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
